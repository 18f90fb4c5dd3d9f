//! Point clouds in the camera frame (x right, y down, z forward, meters) and
//! the whitespace XYZ text format, one point per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::invalid("point cloud", format!("point {i} is not finite")));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros removed.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_pointcloud_to<W: Write>(cloud: &PointCloud, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for p in &cloud.points {
        writeln!(
            w,
            "{} {} {}",
            format_sig9(p.x),
            format_sig9(p.y),
            format_sig9(p.z)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pointcloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_pointcloud_to(cloud, fs::File::create(path)?)
}

pub fn read_pointcloud_from<R: Read>(reader: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, format!("not a number: '{t}'")))
            })
            .collect::<Result<_>>()?;
        if coords.len() != 3 {
            return Err(Error::parse(
                i + 1,
                format!("expected 3 coordinates, found {}", coords.len()),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::parse(i + 1, "non-finite coordinate"));
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud { points })
}

pub fn read_pointcloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_pointcloud_from(fs::File::open(path)?)
}
