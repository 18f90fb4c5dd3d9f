//! Simulation and reconstruction toolkit for event cameras paired with an
//! active light source: structured-light depth, bandwidth-based reflectance
//! recovery, and the metrics used to score both.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod depth;
pub mod error;
pub mod events;
pub mod image;
pub mod metrics;
pub mod pnm;
pub mod projector;
pub mod scene;
pub mod segment;
pub mod sensor;
pub mod spectral;

pub use error::{Error, Result};
