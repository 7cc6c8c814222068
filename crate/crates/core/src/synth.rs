//! Synthetic worlds, scans, and trajectories for tests and demos.
//!
//! Worlds are collections of (optionally bounded) planes; scans are generated
//! by casting one ray per grid cell from a sensor pose, with optional
//! along-ray Gaussian range noise. Ground-truth plane normals come back with
//! every scan so normal estimators can be scored against an analytic oracle.

use crate::ingest::{Point3I, Scan};
use crate::pose::PoseSE3;
use crate::projection::ProjectionConfig;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use std::f64::consts::TAU;

/// A plane patch: center, unit normal, and half extents along two in-plane
/// axes (infinite extents make it a full plane).
#[derive(Clone, Debug)]
pub struct PlanePatch {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    pub half_u: f64,
    pub half_v: f64,
}

impl PlanePatch {
    /// Unbounded plane through `center` with the given normal.
    pub fn unbounded(center: Vector3<f64>, normal: Vector3<f64>) -> Self {
        let normal = normal.normalize();
        let (axis_u, axis_v) = in_plane_axes(&normal);
        Self {
            center,
            normal,
            axis_u,
            axis_v,
            half_u: f64::INFINITY,
            half_v: f64::INFINITY,
        }
    }

    /// Rectangle of the given half extents.
    pub fn rect(center: Vector3<f64>, normal: Vector3<f64>, half_u: f64, half_v: f64) -> Self {
        let normal = normal.normalize();
        let (axis_u, axis_v) = in_plane_axes(&normal);
        Self {
            center,
            normal,
            axis_u,
            axis_v,
            half_u,
            half_v,
        }
    }
}

fn in_plane_axes(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if normal[2].abs() < 0.9 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    (u, v)
}

#[derive(Clone, Debug)]
pub struct World {
    pub planes: Vec<PlanePatch>,
    pub max_range: f64,
}

/// Minimum accepted hit distance; keeps degenerate self-hits out.
const MIN_RANGE: f64 = 0.5;

impl World {
    pub fn new(planes: Vec<PlanePatch>, max_range: f64) -> Self {
        Self { planes, max_range }
    }

    /// Closest plane hit along `dir` from `origin`, as `(range, plane index)`.
    pub fn cast_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (idx, plane) in self.planes.iter().enumerate() {
            let denom = dir.dot(&plane.normal);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (plane.center - origin).dot(&plane.normal) / denom;
            if t < MIN_RANGE || t > self.max_range {
                continue;
            }
            let hit = origin + dir * t;
            let rel = hit - plane.center;
            if rel.dot(&plane.axis_u).abs() > plane.half_u
                || rel.dot(&plane.axis_v).abs() > plane.half_v
            {
                continue;
            }
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, idx));
            }
        }
        best
    }

    /// Scan from the given world-from-sensor pose: one ray per cell center,
    /// optional along-ray Gaussian noise. Returns the sensor-frame scan plus
    /// one ground-truth normal per point (sensor frame, oriented toward the
    /// sensor).
    pub fn scan_from_pose<R: Rng>(
        &self,
        pose: &PoseSE3,
        cfg: &ProjectionConfig,
        sequence_index: usize,
        noise_sigma: f64,
        rng: &mut R,
    ) -> (Scan, Vec<Option<Vector3<f64>>>) {
        let origin = pose.translation();
        let mut points = Vec::new();
        let mut gt_normals = Vec::new();
        for i in 0..cfg.height {
            for j in 0..cfg.width {
                let dir_sensor = cfg.cell_direction(i, j);
                let dir_world = pose.rotate_vector(&dir_sensor);
                let Some((range, plane_idx)) = self.cast_ray(&origin, &dir_world) else {
                    continue;
                };
                let r = if noise_sigma > 0.0 {
                    (range + noise_sigma * gaussian(rng)).max(MIN_RANGE)
                } else {
                    range
                };
                let p = dir_sensor * r;
                points.push(Point3I::new(p[0], p[1], p[2], 0.5));
                let n_world = self.planes[plane_idx].normal;
                let mut n_sensor = pose.quaternion().inverse() * n_world;
                if n_sensor.dot(&p) > 0.0 {
                    n_sensor = -n_sensor;
                }
                gt_normals.push(Some(n_sensor));
            }
        }
        (
            Scan {
                points,
                timestamp: sequence_index as f64 * 0.1,
                sequence_index,
            },
            gt_normals,
        )
    }
}

/// Standard normal sample (Box-Muller).
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Uniform direction on the sphere.
pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            2.0 * rng.gen::<f64>() - 1.0,
            2.0 * rng.gen::<f64>() - 1.0,
            2.0 * rng.gen::<f64>() - 1.0,
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Pose with rotation angle up to `max_angle_rad` about a random axis and
/// translation up to `max_translation` in a random direction.
pub fn random_pose<R: Rng>(rng: &mut R, max_angle_rad: f64, max_translation: f64) -> PoseSE3 {
    let axis = random_unit_vector(rng);
    let angle = rng.gen::<f64>() * max_angle_rad;
    let dir = random_unit_vector(rng);
    let dist = rng.gen::<f64>() * max_translation;
    PoseSE3::new(
        UnitQuaternion::from_scaled_axis(axis * angle),
        dir * dist,
    )
}

/// Appends `count` random free-space returns (clutter that belongs to no
/// surface) to a scan; their ground-truth normals are undefined.
pub fn add_clutter<R: Rng>(
    scan: &mut Scan,
    gt_normals: &mut Vec<Option<Vector3<f64>>>,
    cfg: &ProjectionConfig,
    count: usize,
    rng: &mut R,
) {
    for _ in 0..count {
        let az = rng.gen::<f64>() * TAU;
        let row = rng.gen_range(0..cfg.height);
        let el = cfg.row_center(row);
        let r = 2.0 + rng.gen::<f64>() * 25.0;
        let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let p = dir * r;
        scan.points.push(Point3I::new(p[0], p[1], p[2], 0.1));
        gt_normals.push(None);
    }
}

/// Flat ground `height` meters below the sensor.
pub fn ground_world(height: f64) -> World {
    World::new(
        vec![PlanePatch::unbounded(
            Vector3::new(0.0, 0.0, -height),
            Vector3::new(0.0, 0.0, 1.0),
        )],
        80.0,
    )
}

/// Three mutually non-parallel wall patches facing the origin from distinct
/// azimuth sectors, each tilted by a bounded random amount. Sector jitter and
/// tilt are capped so any two patch normals stay at least ~70 degrees apart
/// and the patches barely overlap in azimuth.
pub fn three_plane_world<R: Rng>(rng: &mut R) -> World {
    let mut planes = Vec::new();
    for k in 0..3 {
        let az = k as f64 * TAU / 3.0 + (rng.gen::<f64>() - 0.5) * 0.3;
        let dist = 6.0 + rng.gen::<f64>() * 5.0;
        let center = Vector3::new(az.cos() * dist, az.sin() * dist, -1.5);
        // Normal points back toward the sensor, tilted up to ~14 degrees.
        let tilt_axis = random_unit_vector(rng);
        let tilt = UnitQuaternion::from_scaled_axis(tilt_axis * (rng.gen::<f64>() * 0.25));
        let normal = tilt * (-center.normalize());
        planes.push(PlanePatch::rect(center, normal, 8.0, 8.0));
    }
    World::new(planes, 80.0)
}

/// A long corridor with ground, side walls, and protruding cross panels so
/// all six degrees of freedom stay observable along the path.
pub fn corridor_world(length: f64) -> World {
    let mut planes = vec![
        // Ground 2 m below the sensor.
        PlanePatch::rect(
            Vector3::new(length * 0.5, 0.0, -2.0),
            Vector3::new(0.0, 0.0, 1.0),
            length * 0.5 + 30.0,
            30.0,
        ),
        // Side walls 8 m out, 8 m tall.
        PlanePatch::rect(
            Vector3::new(length * 0.5, 8.0, 2.0),
            Vector3::new(0.0, -1.0, 0.0),
            length * 0.5 + 30.0,
            4.0,
        ),
        PlanePatch::rect(
            Vector3::new(length * 0.5, -8.0, 2.0),
            Vector3::new(0.0, 1.0, 0.0),
            length * 0.5 + 30.0,
            4.0,
        ),
        // End walls so forward motion is always constrained.
        PlanePatch::rect(
            Vector3::new(length + 25.0, 0.0, 1.0),
            Vector3::new(-1.0, 0.0, 0.0),
            12.0,
            6.0,
        ),
        PlanePatch::rect(
            Vector3::new(-25.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 0.0),
            12.0,
            6.0,
        ),
    ];
    // Protruding panels every 6 m, alternating sides, slightly tilted so
    // their normals are not axis aligned.
    let mut x = 4.0;
    let mut side = 1.0;
    let mut k = 0;
    while x < length + 20.0 {
        let tilt = if k % 2 == 0 { 0.25 } else { -0.2 };
        let normal = Vector3::new(-1.0, tilt * side, 0.1).normalize();
        planes.push(PlanePatch::rect(
            Vector3::new(x, side * 5.5, 0.5),
            normal,
            2.5,
            3.0,
        ));
        x += 6.0;
        side = -side;
        k += 1;
    }
    World::new(planes, 90.0)
}

/// Forward path along +x with a gentle yaw drift; the first pose is the
/// identity.
pub fn forward_path(count: usize, step: f64, yaw_step_rad: f64) -> Vec<PoseSE3> {
    let delta = PoseSE3::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, yaw_step_rad)),
        Vector3::new(step, 0.0, 0.0),
    );
    let mut poses = vec![PoseSE3::identity()];
    for _ in 1..count {
        let last = *poses.last().unwrap();
        poses.push(last.compose(&delta));
    }
    poses
}

/// Full-grid scan of a smooth closed star-shaped surface around the origin:
/// `r(az, el) = base * (1 + amp * sin(3 az) * cos(2 el))`. Every cell gets a
/// return exactly on its center direction, so the matrix is fully valid and
/// all fields vary smoothly.
pub fn star_scan(cfg: &ProjectionConfig, base: f64, amplitude: f64, sequence_index: usize) -> Scan {
    let mut points = Vec::with_capacity(cfg.cells());
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            let az = cfg.col_center(j);
            let el = cfg.row_center(i);
            let r = base * (1.0 + amplitude * (3.0 * az).sin() * (2.0 * el).cos());
            let dir = cfg.cell_direction(i, j);
            let p = dir * r;
            points.push(Point3I::new(p[0], p[1], p[2], 0.3));
        }
    }
    Scan {
        points,
        timestamp: sequence_index as f64 * 0.1,
        sequence_index,
    }
}
