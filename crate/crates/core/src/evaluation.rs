//! KITTI-protocol odometry accuracy metrics and pair-composition checks.
//!
//! For every start frame and every segment length in 100..800 m the relative
//! pose over the segment is compared between estimate and ground truth.
//! Translational error is the endpoint gap as a percentage of the segment
//! length; rotational error is the error angle scaled to degrees per 100 m.
//! Per-length means are averaged into the headline numbers weighted by
//! segment count, so the headline equals the mean over all segments.

use crate::error::Error;
use crate::mapping::WorldTrajectory;
use crate::pose::PoseSE3;
use nalgebra::Matrix3;

pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Clone, Copy, Debug)]
pub struct LengthBucket {
    pub length: f64,
    /// Mean translational error over this length's segments, percent.
    pub translation_pct: f64,
    /// Mean rotational error, degrees per 100 m.
    pub rotation_deg_per_100m: f64,
    pub segments: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub translation_rel_pct: f64,
    pub rotation_rel_deg_per_100m: f64,
    pub per_length: Vec<LengthBucket>,
    pub segments: usize,
}

impl EvalReport {
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        out.push_str("length_m  t_err_pct  r_err_deg_per_100m  segments\n");
        for b in &self.per_length {
            out.push_str(&format!(
                "{:>8.0}  {:>9.4}  {:>18.4}  {:>8}\n",
                b.length, b.translation_pct, b.rotation_deg_per_100m, b.segments
            ));
        }
        out.push_str(&format!(
            "overall   {:>9.4}  {:>18.4}  {:>8}\n",
            self.translation_rel_pct, self.rotation_rel_deg_per_100m, self.segments
        ));
        out
    }

    pub fn machine_form(&self) -> String {
        let mut out = format!(
            "t_rel_pct={:.9}\nr_rel_deg_per_100m={:.9}\nsegments={}\n",
            self.translation_rel_pct, self.rotation_rel_deg_per_100m, self.segments
        );
        for b in &self.per_length {
            out.push_str(&format!(
                "len_{len}_t={:.9}\nlen_{len}_r={:.9}\nlen_{len}_count={}\n",
                b.translation_pct,
                b.rotation_deg_per_100m,
                b.segments,
                len = b.length as usize
            ));
        }
        out
    }
}

/// Rotation angle via the trace formula with clamping, radians.
fn rotation_angle_trace(r: &Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos()
}

/// First index at or after `start` whose ground-truth arc length from `start`
/// reaches `length`.
fn segment_end(dist: &[f64], start: usize, length: f64) -> Option<usize> {
    let target = dist[start] + length;
    (start + 1..dist.len()).find(|&j| dist[j] >= target)
}

/// KITTI relative-error evaluation over segment lengths 100..800 m, every
/// frame a candidate start.
pub fn evaluate_trajectory(
    est: &WorldTrajectory,
    gt: &WorldTrajectory,
) -> Result<EvalReport, Error> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: est.len(),
        });
    }
    if gt.len() < 2 {
        return Err(Error::EmptyReport("trajectory has fewer than 2 poses".into()));
    }
    let dist = gt.cumulative_distances();
    let mut buckets: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); SEGMENT_LENGTHS.len()];
    for start in 0..gt.len() {
        for (li, &length) in SEGMENT_LENGTHS.iter().enumerate() {
            let Some(end) = segment_end(&dist, start, length) else {
                break; // longer lengths cannot fit either
            };
            let gt_delta = gt.poses()[end].inverse().compose(&gt.poses()[start]);
            let est_delta = est.poses()[end].inverse().compose(&est.poses()[start]);
            let error = gt_delta.inverse().compose(&est_delta);
            let t_err = error.translation().norm() / length * 100.0;
            let r_err =
                rotation_angle_trace(&error.rotation_matrix()).to_degrees() / length * 100.0;
            buckets[li].0 += t_err;
            buckets[li].1 += r_err;
            buckets[li].2 += 1;
        }
    }
    let mut per_length = Vec::new();
    let mut t_weighted = 0.0;
    let mut r_weighted = 0.0;
    let mut total = 0usize;
    for (li, &(t_sum, r_sum, n)) in buckets.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let bucket = LengthBucket {
            length: SEGMENT_LENGTHS[li],
            translation_pct: t_sum / n as f64,
            rotation_deg_per_100m: r_sum / n as f64,
            segments: n,
        };
        t_weighted += bucket.translation_pct * n as f64;
        r_weighted += bucket.rotation_deg_per_100m * n as f64;
        total += n;
        per_length.push(bucket);
    }
    if total == 0 {
        return Err(Error::EmptyReport(
            "ground-truth path is shorter than 100 m".into(),
        ));
    }
    Ok(EvalReport {
        translation_rel_pct: t_weighted / total as f64,
        rotation_rel_deg_per_100m: r_weighted / total as f64,
        per_length,
        segments: total,
    })
}

/// Worst-case inconsistency across scan triplets.
#[derive(Clone, Copy, Debug)]
pub struct TripletReport {
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub triplets: usize,
}

/// Checks skip-pair estimates against the composition of the two consecutive
/// estimates they span.
///
/// `consecutive[k]` maps scan `k+1` into scan `k`'s frame; `skip[k]` maps scan
/// `k+2` into scan `k`'s frame, so `skip[k]` should equal
/// `consecutive[k] ∘ consecutive[k+1]`.
pub fn pair_composition_check(
    consecutive: &[PoseSE3],
    skip: &[PoseSE3],
) -> Result<TripletReport, Error> {
    if consecutive.len() < 2 || skip.len() + 1 != consecutive.len() {
        return Err(Error::LengthMismatch {
            expected: consecutive.len().saturating_sub(1),
            actual: skip.len(),
        });
    }
    let mut max_rot: f64 = 0.0;
    let mut max_trans: f64 = 0.0;
    for (k, direct) in skip.iter().enumerate() {
        let composed = consecutive[k].compose(&consecutive[k + 1]);
        let delta = direct.inverse().compose(&composed);
        max_rot = max_rot.max(delta.rotation_angle().to_degrees());
        max_trans = max_trans.max(delta.translation().norm());
    }
    Ok(TripletReport {
        max_rotation_deg: max_rot,
        max_translation: max_trans,
        triplets: skip.len(),
    })
}
