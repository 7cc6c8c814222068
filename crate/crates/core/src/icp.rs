//! Shared point-to-plane Gauss-Newton machinery used by the scan-to-scan
//! frontend and the scan-to-map refinement.

use crate::error::Error;
use crate::pose::PoseSE3;
use crate::spatial::KdTree3;
use nalgebra::{Matrix6, Vector3, Vector6};

pub(crate) const MIN_CORRESPONDENCES: usize = 6;
pub(crate) const CONDITION_LIMIT: f64 = 1e8;
/// Correspondences whose source normal (rotated into the target frame)
/// disagrees with the target normal beyond this cosine are rejected; they are
/// almost always matches across different surfaces.
pub(crate) const NORMAL_GATE_COS: f64 = 0.5;

/// Source samples: positions with optional unit normals for correspondence
/// gating.
pub(crate) struct SourceCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl SourceCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Target points with per-point unit normals and an exact NN index.
pub(crate) struct TargetCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub tree: KdTree3,
}

impl TargetCloud {
    pub fn new(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p[0], p[1], p[2]]).collect();
        let tree = KdTree3::build(&coords);
        Self {
            points,
            normals,
            tree,
        }
    }
}

/// One assembled and solved Gauss-Newton step.
pub(crate) struct GnStep {
    pub delta: Vector6<f64>,
    /// Unweighted RMS point-to-plane residual at the pose the step was built
    /// at.
    pub rms: f64,
    pub matches: usize,
    pub condition: f64,
}

fn huber_weight(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

fn accept(
    source_normal: &Option<Vector3<f64>>,
    target_normal: &Vector3<f64>,
    pose: &PoseSE3,
) -> bool {
    match source_normal {
        Some(n) => pose.rotate_vector(n).dot(target_normal).abs() >= NORMAL_GATE_COS,
        None => true,
    }
}

/// Builds the Huber-weighted point-to-plane normal equations at `pose` and
/// solves for the left-chart increment.
pub(crate) fn point_to_plane_step(
    source: &SourceCloud,
    pose: &PoseSE3,
    target: &TargetCloud,
    max_dist: f64,
    huber_delta: f64,
) -> Result<GnStep, Error> {
    let mut h = Matrix6::<f64>::zeros();
    let mut b = Vector6::<f64>::zeros();
    let mut sq_sum = 0.0;
    let mut matches = 0usize;
    let t = pose.translation();
    for (p, sn) in source.points.iter().zip(&source.normals) {
        let moved = pose.transform_point(p);
        let Some((idx, _)) = target.tree.nearest(&[moved[0], moved[1], moved[2]], max_dist)
        else {
            continue;
        };
        let n = target.normals[idx];
        if !accept(sn, &n, pose) {
            continue;
        }
        let r = n.dot(&(moved - target.points[idx]));
        let lever = (moved - t).cross(&n);
        let mut j = Vector6::zeros();
        j.fixed_rows_mut::<3>(0).copy_from(&n);
        j.fixed_rows_mut::<3>(3).copy_from(&lever);
        let w = huber_weight(r, huber_delta);
        h += w * j * j.transpose();
        b += w * j * r;
        sq_sum += r * r;
        matches += 1;
    }
    if matches < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientGeometry(format!(
            "{matches} correspondences, need at least {MIN_CORRESPONDENCES}"
        )));
    }
    let eig = h.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::InsufficientGeometry(format!(
            "normal equations condition {condition:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )));
    }
    let delta = match h.cholesky() {
        Some(chol) => -chol.solve(&b),
        None => {
            return Err(Error::InsufficientGeometry(
                "normal equations are not positive definite".into(),
            ))
        }
    };
    Ok(GnStep {
        delta,
        rms: (sq_sum / matches as f64).sqrt(),
        matches,
        condition,
    })
}

/// Unweighted RMS point-to-plane residual at `pose` with fresh, gated
/// correspondences.
pub(crate) fn rms_residual(
    source: &SourceCloud,
    pose: &PoseSE3,
    target: &TargetCloud,
    max_dist: f64,
) -> (f64, usize) {
    let mut sq_sum = 0.0;
    let mut matches = 0usize;
    for (p, sn) in source.points.iter().zip(&source.normals) {
        let moved = pose.transform_point(p);
        if let Some((idx, _)) = target.tree.nearest(&[moved[0], moved[1], moved[2]], max_dist) {
            let n = target.normals[idx];
            if !accept(sn, &n, pose) {
                continue;
            }
            let r = n.dot(&(moved - target.points[idx]));
            sq_sum += r * r;
            matches += 1;
        }
    }
    if matches == 0 {
        (f64::INFINITY, 0)
    } else {
        ((sq_sum / matches as f64).sqrt(), matches)
    }
}
