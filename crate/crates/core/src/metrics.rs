//! Evaluation metrics: rigid ICP alignment, point-cloud RMSE and Chamfer
//! distance, image RMSE, and per-class IoU.
//!
//! Cloud metrics are reported in centimeters; clouds themselves are in meters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use crate::cloud::{format_sig9, PointCloud};
use crate::error::{Error, Result};
use crate::image::{ImageRgb, LabelMap, Mask, NUM_CLASSES};

const CM_PER_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Fails unless `rotation` is orthonormal with determinant +1 (within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = RigidTransform { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::invalid("rigid transform", "rotation axis is zero"))?;
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        Self::new(*r.matrix(), translation)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("rigid transform", "non-finite entries"));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "rigid transform",
                format!("rotation is not proper orthonormal (|RᵀR-I| {ortho:e}, det {det})"),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::new(cloud.points().iter().map(|p| self.apply(p)).collect())
            .expect("rigid transform of finite points is finite")
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, accurate near zero.
    pub fn rotation_angle(&self) -> f64 {
        // ‖R − I‖_F = 2√2·sin(θ/2)
        let f = (self.rotation - Matrix3::identity()).norm();
        2.0 * (f / (2.0 * std::f64::consts::SQRT_2)).min(1.0).asin()
    }
}

/// Angle of the relative rotation between two transforms.
pub fn rotation_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    a.compose(&b.inverse()).rotation_angle()
}

fn dist_sq(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Immutable k-d tree over a cloud. Queries return the same squared distance
/// and the same (lowest) index a linear scan would.
pub struct NearestIndex<'a> {
    points: &'a [Point3<f64>],
    tree: ImmutableKdTree<f64, 3>,
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("empty point cloud".into()));
        }
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(NearestIndex {
            points,
            tree: ImmutableKdTree::new_from_slice(&coords),
        })
    }

    /// `(index, squared distance)` of the nearest point.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let query = [q.x, q.y, q.z];
        let approx = self.tree.nearest_one::<SquaredEuclidean>(&query);
        let radius = approx.distance * (1.0 + 1e-9) + f64::MIN_POSITIVE;
        let mut best = (approx.item as usize, dist_sq(q, &self.points[approx.item as usize]));
        for n in self.tree.within_unsorted::<SquaredEuclidean>(&query, radius) {
            let i = n.item as usize;
            let d = dist_sq(q, &self.points[i]);
            if d < best.1 || (d == best.1 && i < best.0) {
                best = (i, d);
            }
        }
        best
    }
}

/// Nearest-neighbor distance (meters) from every point of `from` to `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>> {
    if from.is_empty() {
        return Err(Error::Degenerate("empty point cloud".into()));
    }
    let index = NearestIndex::new(to.points())?;
    Ok(from.points().par_iter().map(|p| index.nearest(p).1.sqrt()).collect())
}

/// sqrt(mean squared NN distance from `aligned` to `target`), in centimeters.
/// Not symmetric: only points of `aligned` are scored.
pub fn rmse_pointcloud(aligned: &PointCloud, target: &PointCloud) -> Result<f64> {
    let d = nearest_distances(aligned, target)?;
    Ok((d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt() * CM_PER_M)
}

/// Symmetric Chamfer distance ½(mean a→b + mean b→a), in centimeters.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let ab = nearest_distances(a, b)?;
    let ba = nearest_distances(b, a)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&ab) + mean(&ba)) * CM_PER_M)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitialGuess {
    Identity,
    /// Translation that aligns the two centroids.
    #[default]
    Centroids,
    Transform(RigidTransform),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Stop once the RMSE (meters) improves by less than this.
    pub tol: f64,
    /// Fraction of the worst correspondences dropped each iteration.
    pub trim_fraction: f64,
    pub initial: InitialGuess,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iter: 50,
            tol: 1e-6,
            trim_fraction: 0.0,
            initial: InitialGuess::Centroids,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    pub aligned: PointCloud,
    /// RMSE over the kept correspondences, meters.
    pub rmse: f64,
    pub iterations: usize,
}

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / points.len() as f64
}

fn check_spread(points: &[Point3<f64>], what: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{what} cloud has fewer than 3 points")));
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= ev[0] * 1e-12 {
        return Err(Error::Degenerate(format!("{what} cloud is collinear")));
    }
    Ok(())
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
pub fn fit_rigid(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Degenerate("rigid fit needs at least 3 paired points".into()));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

/// Point-to-point ICP with optional trimming.
pub fn icp_align(source: &PointCloud, target: &PointCloud, config: &IcpConfig) -> Result<IcpResult> {
    if !(0.0..0.9).contains(&config.trim_fraction) {
        return Err(Error::invalid("icp", "trim_fraction must be in [0, 0.9)"));
    }
    if config.max_iter == 0 || !(config.tol >= 0.0) {
        return Err(Error::invalid("icp", "max_iter must be positive and tol non-negative"));
    }
    check_spread(source.points(), "source")?;
    check_spread(target.points(), "target")?;
    let index = NearestIndex::new(target.points())?;
    let src = source.points();
    let keep = ((1.0 - config.trim_fraction) * src.len() as f64).ceil().max(3.0) as usize;

    let mut transform = match config.initial {
        InitialGuess::Identity => RigidTransform::identity(),
        InitialGuess::Centroids => RigidTransform {
            rotation: Matrix3::identity(),
            translation: centroid(target.points()) - centroid(src),
        },
        InitialGuess::Transform(t) => {
            t.validate()?;
            t
        }
    };

    // Correspondences (source index, target index, squared distance), worst trimmed.
    let matches = |t: &RigidTransform| {
        let mut m: Vec<(usize, usize, f64)> = src
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let (j, d) = index.nearest(&t.apply(p));
                (i, j, d)
            })
            .collect();
        m.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        m.truncate(keep);
        let rmse = (m.iter().map(|c| c.2).sum::<f64>() / m.len() as f64).sqrt();
        (m, rmse)
    };

    let (mut pairs, mut rmse) = matches(&transform);
    let mut iterations = 0;
    while iterations < config.max_iter && rmse > 0.0 {
        iterations += 1;
        let s: Vec<Point3<f64>> = pairs.iter().map(|c| src[c.0]).collect();
        let d: Vec<Point3<f64>> = pairs.iter().map(|c| target.points()[c.1]).collect();
        let candidate = fit_rigid(&s, &d)?;
        let (next_pairs, next_rmse) = matches(&candidate);
        if next_rmse > rmse {
            break;
        }
        let improvement = rmse - next_rmse;
        transform = candidate;
        pairs = next_pairs;
        rmse = next_rmse;
        if improvement < config.tol {
            break;
        }
    }
    Ok(IcpResult {
        aligned: transform.apply_cloud(source),
        transform,
        rmse,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRmse {
    pub channels: [f64; 3],
    /// Over all channels of all masked pixels.
    pub mean: f64,
    pub pixels: usize,
}

/// Per-channel RMSE on the 0..255 scale over pixels where `mask` is set
/// (all pixels when `mask` is `None`).
pub fn rmse_image(a: &ImageRgb, b: &ImageRgb, mask: Option<&Mask>) -> Result<ImageRmse> {
    a.ensure_same_dims(b)?;
    if let Some(m) = mask {
        a.ensure_same_dims(m)?;
    }
    let mut sq = [0.0f64; 3];
    let mut n = 0usize;
    for (i, (pa, pb)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        n += 1;
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            sq[c] += d * d;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("image mask selects no pixels".into()));
    }
    Ok(ImageRmse {
        channels: sq.map(|s| (s / n as f64).sqrt()),
        mean: (sq.iter().sum::<f64>() / (3 * n) as f64).sqrt(),
        pixels: n,
    })
}

/// Intersection and union pixel counts per class; add several label maps to
/// pool them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IouCounts {
    pub intersection: [u64; NUM_CLASSES],
    pub union: [u64; NUM_CLASSES],
}

impl IouCounts {
    pub fn add(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        pred.image().ensure_same_dims(truth.image())?;
        for (&p, &t) in pred.image().data().iter().zip(truth.image().data()) {
            let (p, t) = (p as usize, t as usize);
            if p == t {
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[t] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> IouReport {
        let per_class: [Option<f64>; NUM_CLASSES] =
            std::array::from_fn(|c| (self.union[c] > 0).then(|| self.intersection[c] as f64 / self.union[c] as f64));
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        IouReport { per_class, mean }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both maps.
    pub per_class: [Option<f64>; NUM_CLASSES],
    /// Mean over the classes that are present, background included.
    pub mean: f64,
}

pub fn iou(pred: &LabelMap, truth: &LabelMap) -> Result<IouReport> {
    let mut c = IouCounts::default();
    c.add(pred, truth)?;
    Ok(c.report())
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scene: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(scene: impl Into<String>, method: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        MetricRow {
            scene: scene.into(),
            method: method.into(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("scene,method,metric,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.scene, r.method, r.metric, format_sig9(r.value));
    }
    s
}

pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, metrics_to_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn single_pair_chamfer() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.01]]);
        assert!((chamfer(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &PointCloud::default()).is_err());
    }

    #[test]
    fn plane_offset_rmse() {
        let pts: Vec<[f64; 3]> = (0..100).map(|i| [(i % 10) as f64 * 0.01, (i / 10) as f64 * 0.01, 1.0]).collect();
        let shifted: Vec<[f64; 3]> = pts.iter().map(|p| [p[0], p[1], p[2] + 0.01]).collect();
        let r = rmse_pointcloud(&cloud(&shifted), &cloud(&pts)).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn rejects_collinear() {
        let line = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!(matches!(icp_align(&line, &line, &IcpConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn identity_when_aligned() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0], [1.0, 1.0, 1.0]]);
        let r = icp_align(&c, &c, &IcpConfig::default()).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert!(r.transform.rotation_angle() < 1e-12);
        assert!(r.transform.translation.norm() < 1e-12);
    }

    #[test]
    fn rejects_improper_rotation() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn small_angles_are_resolved() {
        let t = RigidTransform::from_axis_angle(Vector3::z(), 1e-7, Vector3::zeros()).unwrap();
        assert!((t.rotation_angle() - 1e-7).abs() < 1e-15);
    }

    #[test]
    fn image_constant_offset() {
        let a = ImageRgb::filled(3, 2, [10, 20, 30]).unwrap();
        let b = ImageRgb::filled(3, 2, [20, 30, 40]).unwrap();
        let r = rmse_image(&a, &b, None).unwrap();
        assert_eq!(r.channels, [10.0; 3]);
        assert_eq!(r.mean, 10.0);
        let none = Mask::filled(3, 2, false).unwrap();
        assert!(rmse_image(&a, &b, Some(&none)).is_err());
    }

    #[test]
    fn csv_rows() {
        let s = metrics_to_csv(&[MetricRow::new("plane", "ours", "rmse_cm", 0.25)]);
        assert_eq!(s, "scene,method,metric,value\nplane,ours,rmse_cm,0.25\n");
    }
}
