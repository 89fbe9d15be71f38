//! Short-range trolley pose from a LiDAR point cloud of the backplane.

use std::io::BufRead;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2;

#[derive(Debug, Error)]
pub enum PlaneError {
    #[error("need at least 3 points for a plane, got {0}")]
    TooFewPoints(usize),
    #[error("no non-collinear sample found in {0} draws")]
    DegenerateSample(usize),
    #[error("plane normal is {0:.1} deg from vertical; not a backplane")]
    VerticalityViolation(f64),
    #[error("xyz line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Points in the sensor frame (x forward, y left, z up), meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads whitespace-separated `x y z` lines; blank lines and `#` comments are skipped.
    pub fn read_xyz(path: impl AsRef<Path>) -> Result<Self, PlaneError> {
        let file = std::fs::File::open(path)?;
        let mut points = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let vals: Result<Vec<f64>, _> = trimmed.split_whitespace().map(str::parse::<f64>).collect();
            match vals {
                Ok(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => {
                    points.push(Vector3::new(v[0], v[1], v[2]))
                }
                Ok(v) => {
                    return Err(PlaneError::Parse {
                        line: i + 1,
                        msg: format!("expected 3 finite values, got {}", v.len()),
                    })
                }
                Err(e) => return Err(PlaneError::Parse { line: i + 1, msg: e.to_string() }),
            }
        }
        Ok(Self { points })
    }

    pub fn write_xyz(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in &self.points {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
        out.flush()
    }
}

/// Axis-aligned crop box in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for RangeBox {
    /// 0.3-2.0 m forward, +-1 m lateral, +-0.35 m around the sensor height.
    fn default() -> Self {
        Self {
            min: [0.3, -1.0, -0.35],
            max: [2.0, 1.0, 0.35],
        }
    }
}

impl RangeBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

pub fn crop_cloud(cloud: &PointCloud, range: &RangeBox) -> PointCloud {
    PointCloud::new(cloud.points.iter().filter(|p| range.contains(p)).copied().collect())
}

/// `a x + b y + c z + d = 0` with unit `(a, b, c)` and the supporting inliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub inlier_indices: Vec<usize>,
}

impl PlaneModel {
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal().dot(p) + self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tol_m: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_tol_m: 0.005,
            seed: 0,
        }
    }
}

/// Total-least-squares plane through `points`: centroid and the eigenvector
/// of the scatter matrix with the smallest eigenvalue. `d` is made non-positive.
pub fn fit_plane_tls(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let scatter = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let q = p - centroid;
        acc + q * q.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let n: Vector3<f64> = eig.eigenvectors.column(imin).normalize();
    Some(canonical(n, -n.dot(&centroid)))
}

fn canonical(n: Vector3<f64>, d: f64) -> (Vector3<f64>, f64) {
    if d > 0.0 {
        (-n, -d)
    } else {
        (n, d)
    }
}

const MAX_DEGENERATE_DRAWS: usize = 1000;

/// Seeded RANSAC over 3-point hypotheses, then a TLS refit on the winning inliers.
///
/// Degenerate (collinear) samples are redrawn and do not consume an iteration.
pub fn ransac_plane(cloud: &PointCloud, params: &RansacParams) -> Result<PlaneModel, PlaneError> {
    ransac_plane_traced(cloud, params, |_| {})
}

/// [`ransac_plane`] that reports every hypothesis inlier count to `on_hypothesis`.
pub fn ransac_plane_traced(
    cloud: &PointCloud,
    params: &RansacParams,
    mut on_hypothesis: impl FnMut(usize),
) -> Result<PlaneModel, PlaneError> {
    let pts = &cloud.points;
    let n = pts.len();
    if n < 3 {
        return Err(PlaneError::TooFewPoints(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..params.iterations.max(1) {
        let mut draws = 0;
        let (normal, d) = loop {
            draws += 1;
            if draws > MAX_DEGENERATE_DRAWS {
                return Err(PlaneError::DegenerateSample(MAX_DEGENERATE_DRAWS));
            }
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..n);
            if i == j || j == k || i == k {
                continue;
            }
            let cross = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
            let norm = cross.norm();
            let scale = (pts[j] - pts[i]).norm() * (pts[k] - pts[i]).norm();
            if norm <= 1e-9 * scale.max(1e-300) {
                continue;
            }
            let nrm = cross / norm;
            break (nrm, -nrm.dot(&pts[i]));
        };
        let inliers: Vec<usize> = (0..n)
            .filter(|&q| (normal.dot(&pts[q]) + d).abs() <= params.inlier_tol_m)
            .collect();
        on_hypothesis(inliers.len());
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    let support: Vec<Vector3<f64>> = best.iter().map(|&i| pts[i]).collect();
    let (normal, d) = fit_plane_tls(&support).ok_or(PlaneError::TooFewPoints(best.len()))?;
    Ok(PlaneModel {
        a: normal.x,
        b: normal.y,
        c: normal.z,
        d,
        inlier_indices: best,
    })
}

/// Minimum angle between a backplane normal and the vertical axis.
pub const MIN_NORMAL_TILT_DEG: f64 = 20.0;

/// Trolley pose in the sensor frame from a fitted backplane.
///
/// Position is the inlier centroid dropped to the ground plane. The normal is
/// oriented toward the sensor and then reversed, so the heading points from
/// the backplane into the trolley.
pub fn plane_to_pose(model: &PlaneModel, cloud: &PointCloud) -> Result<Pose2, PlaneError> {
    if model.inlier_indices.len() < 3 {
        return Err(PlaneError::TooFewPoints(model.inlier_indices.len()));
    }
    let mut n = model.normal().normalize();
    let from_vertical = n.z.abs().min(1.0).acos().to_degrees();
    if from_vertical < MIN_NORMAL_TILT_DEG {
        return Err(PlaneError::VerticalityViolation(from_vertical));
    }
    let centroid = model
        .inlier_indices
        .iter()
        .map(|&i| cloud.points[i])
        .sum::<Vector3<f64>>()
        / model.inlier_indices.len() as f64;
    if n.dot(&(-centroid)) < 0.0 {
        n = -n;
    }
    let forward = -n;
    Ok(Pose2::new(centroid.x, centroid.y, forward.y.atan2(forward.x)))
}

/// Pose `standoff_m` behind `q_tar` along its reversed heading, sharing its heading.
pub fn docking_pose_from_trolley(q_tar: &Pose2, standoff_m: f64) -> Pose2 {
    debug_assert!(standoff_m > 0.0);
    let h = q_tar.heading();
    Pose2::new(q_tar.x - standoff_m * h.x, q_tar.y - standoff_m * h.y, q_tar.theta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_diff, rot_z};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid_plane_x(x: f64, rot: f64) -> PointCloud {
        let r = rot_z(rot);
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let p = Vector3::new(x, -0.25 + 0.5 * i as f64 / 19.0 + 0.1, -0.25 + 0.5 * j as f64 / 19.0);
                pts.push(r * p);
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn crop_identity_and_empty() {
        let cloud = grid_plane_x(1.0, 0.0);
        let b = RangeBox::default();
        assert_eq!(crop_cloud(&cloud, &b), cloud);
        let far = RangeBox { min: [5.0, -1.0, -1.0], max: [6.0, 1.0, 1.0] };
        assert!(crop_cloud(&cloud, &far).is_empty());
    }

    #[test]
    fn crop_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..2000)
            .map(|_| Vector3::new(rng.random_range(-1.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        let cloud = PointCloud::new(pts.clone());
        let b = RangeBox::default();
        let mut expected = Vec::new();
        for p in &pts {
            if p.x >= 0.3 && p.x <= 2.0 && p.y >= -1.0 && p.y <= 1.0 && p.z >= -0.35 && p.z <= 0.35 {
                expected.push(*p);
            }
        }
        assert_eq!(crop_cloud(&cloud, &b).points, expected);
    }

    #[test]
    fn exact_plane_z1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0))
            .collect();
        let m = ransac_plane(&PointCloud::new(pts), &RansacParams::default()).unwrap();
        assert!((m.a.abs() + m.b.abs()) < 1e-12);
        assert!((m.c - 1.0).abs() < 1e-12 && (m.d + 1.0).abs() < 1e-12);
        assert_eq!(m.inlier_indices.len(), 500);
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]);
        assert!(matches!(ransac_plane(&cloud, &RansacParams::default()), Err(PlaneError::TooFewPoints(2))));
    }

    #[test]
    fn collinear_cloud_gives_degenerate_sample() {
        let cloud = PointCloud::new((0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        assert!(matches!(
            ransac_plane(&cloud, &RansacParams::default()),
            Err(PlaneError::DegenerateSample(_))
        ));
    }

    #[test]
    fn deterministic_and_best_hypothesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = grid_plane_x(1.2, 0.3).points;
        for _ in 0..200 {
            pts.push(Vector3::new(rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        let cloud = PointCloud::new(pts);
        let params = RansacParams { seed: 42, ..Default::default() };
        let mut counts = Vec::new();
        let a = ransac_plane_traced(&cloud, &params, |c| counts.push(c)).unwrap();
        let b = ransac_plane(&cloud, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(counts.len(), params.iterations);
        assert!(counts.iter().all(|&c| a.inlier_indices.len() >= c));
        assert!((a.normal().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_backplane_pose() {
        let cloud = grid_plane_x(2.0, 0.0);
        let m = ransac_plane(&cloud, &RansacParams::default()).unwrap();
        let p = plane_to_pose(&m, &cloud).unwrap();
        assert!((p.x - 2.0).abs() < 1e-9 && (p.y - 0.1).abs() < 1e-9);
        assert!(p.theta().abs() < 1e-9);
    }

    #[test]
    fn rotated_backplane_pose() {
        let cloud = grid_plane_x(2.0, PI / 6.0);
        let m = ransac_plane(&cloud, &RansacParams::default()).unwrap();
        let p = plane_to_pose(&m, &cloud).unwrap();
        assert!(angle_diff(p.theta(), PI / 6.0).abs() < 1e-9);
    }

    #[test]
    fn floor_plane_is_rejected() {
        let pts = (0..100).map(|i| Vector3::new(1.0 + (i % 10) as f64 * 0.05, (i / 10) as f64 * 0.05, -0.4)).collect();
        let cloud = PointCloud::new(pts);
        let m = ransac_plane(&cloud, &RansacParams::default()).unwrap();
        assert!(matches!(plane_to_pose(&m, &cloud), Err(PlaneError::VerticalityViolation(_))));
    }

    #[test]
    fn docking_pose_examples() {
        let p = docking_pose_from_trolley(&Pose2::identity(), 0.4);
        assert!((p.x + 0.4).abs() < 1e-15 && p.y == 0.0 && p.theta() == 0.0);
        let p = docking_pose_from_trolley(&Pose2::new(1.0, 1.0, PI / 2.0), 0.4);
        assert!((p.x - 1.0).abs() < 1e-15 && (p.y - 0.6).abs() < 1e-15 && (p.theta() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn xyz_round_trip_and_parse_error() {
        let dir = std::env::temp_dir().join(format!("trolley-xyz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.xyz");
        let cloud = grid_plane_x(1.0, 0.2);
        cloud.write_xyz(&path).unwrap();
        assert_eq!(PointCloud::read_xyz(&path).unwrap(), cloud);
        std::fs::write(&path, "1 2 3\n# note\n\n1 2\n").unwrap();
        assert!(matches!(PointCloud::read_xyz(&path), Err(PlaneError::Parse { line: 4, .. })));
    }

    proptest! {
        #[test]
        fn backplane_generator_round_trip(x in 0.5..2.0f64, y in -0.5..0.5f64, yaw in -1.2..1.2f64) {
            // Backplane facing the sensor, trolley heading `yaw`.
            let lateral = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
            let center = Vector3::new(x, y, 0.1);
            // The sensor must sit behind the trolley to see its backplane.
            prop_assume!(x * yaw.cos() + y * yaw.sin() > 0.05);
            let pts = (0..144).map(|i| {
                let a = -0.25 + 0.5 * (i % 12) as f64 / 11.0;
                let b = -0.25 + 0.5 * (i / 12) as f64 / 11.0;
                center + lateral * a + Vector3::z() * b
            }).collect();
            let cloud = PointCloud::new(pts);
            let m = ransac_plane(&cloud, &RansacParams::default()).unwrap();
            let p = plane_to_pose(&m, &cloud).unwrap();
            prop_assert!((p.x - x).abs() < 1e-6 && (p.y - y).abs() < 1e-6);
            prop_assert!(angle_diff(p.theta(), yaw).abs() < 1e-6);
            // Sign disambiguation: the reversed heading points toward the sensor.
            let toward = Vector3::new(-p.theta().cos(), -p.theta().sin(), 0.0);
            prop_assert!(toward.dot(&(-center)) > 0.0);
        }

        #[test]
        fn docking_pose_geometry(x in -5.0..5.0f64, y in -5.0..5.0f64, t in -3.1..3.1f64, s in 0.1..3.0f64) {
            let q = Pose2::new(x, y, t);
            let d = docking_pose_from_trolley(&q, s);
            prop_assert!((d.distance(&q) - s).abs() < 1e-12);
            let to_trolley = (q.position() - d.position()).normalize();
            prop_assert!((to_trolley - d.heading()).norm() < 1e-9);
            // Bearing from the trolley back to the docking pose is reversed.
            let back = (d.position() - q.position()).normalize();
            prop_assert!((back + q.heading()).norm() < 1e-9);
        }
    }
}
