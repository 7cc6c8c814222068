//! Scan-to-scan relative pose estimation.
//!
//! Planar points are selected by a zero-sum smoothness convolution over the
//! normal channels, then aligned to the previous scan with Huber-robustified
//! Gauss-Newton point-to-plane iterations. The estimate can optionally be
//! polished by direct descent on the smooth geometric-consistency objective.

use crate::consistency::{consistency_loss_bilinear, loss_gradient_fd, ConsistencyOptions};
use crate::error::Error;
use crate::icp::{point_to_plane_step, rms_residual, SourceCloud, TargetCloud, MIN_CORRESPONDENCES};
use crate::normals::NormalMap;
use crate::pose::PoseSE3;
use crate::projection::ScanMatrix;
use nalgebra::Vector6;

#[derive(Clone, Copy, Debug)]
pub struct FrontendConfig {
    pub max_iterations: usize,
    /// Stop when the pose-update norm falls below this.
    pub convergence_eps: f64,
    /// Nearest-neighbor acceptance radius, meters.
    pub correspondence_max_dist: f64,
    /// Fraction of grid cells kept as planar points.
    pub selection_fraction: f64,
    /// Huber kernel width, meters.
    pub huber_delta: f64,
    /// Descent steps on the consistency objective after convergence; 0 turns
    /// the polish off.
    pub polish_iterations: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            max_iterations: 15,
            convergence_eps: 1e-5,
            correspondence_max_dist: 1.0,
            selection_fraction: 0.01,
            huber_delta: 0.1,
            polish_iterations: 0,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.convergence_eps > 0.0)
            || !(self.correspondence_max_dist > 0.0)
            || !(self.huber_delta > 0.0)
        {
            return Err(Error::Config(
                "frontend thresholds must be positive".into(),
            ));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::Config(
                "selection_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell smoothness response with validity.
#[derive(Clone, Debug)]
pub struct SmoothnessMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl SmoothnessMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn value_at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Kernel rows (elevation) half-extent and columns (azimuth) half-extent of
/// the 3x5 smoothness stencil. The center coefficient is -14 and the fourteen
/// other cells carry 1, so the kernel sums to zero and annihilates constant
/// fields.
const KERNEL_HALF_ROWS: usize = 1;
const KERNEL_HALF_COLS: i64 = 2;

/// Zero-sum convolution over the normal components:
/// `c = sum_k (K * n_k)^2` with the 3x5 kernel whose center is -14 amid ones.
/// The response accumulates as differences against the center
/// (`sum_k (n_k - n_center)`, identical because the kernel sums to zero), so
/// constant fields cancel exactly. A cell is invalid when any support cell
/// lacks a valid normal (columns wrap, rows do not).
pub fn smoothness(nm: &NormalMap) -> SmoothnessMap {
    let (h, w) = (nm.height(), nm.width());
    let mut values = vec![0.0; h * w];
    let mut valid = vec![false; h * w];
    for i in 0..h {
        if i < KERNEL_HALF_ROWS || i + KERNEL_HALF_ROWS >= h {
            continue;
        }
        'cell: for j in 0..w {
            if !nm.is_valid(i, j) {
                continue;
            }
            let center = nm.raw_at(i * w + j);
            let mut acc = [0.0f64; 3];
            for di in -(KERNEL_HALF_ROWS as i64)..=KERNEL_HALF_ROWS as i64 {
                for dj in -KERNEL_HALF_COLS..=KERNEL_HALF_COLS {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let r = (i as i64 + di) as usize;
                    let c = ((j as i64 + dj).rem_euclid(w as i64)) as usize;
                    if !nm.is_valid(r, c) {
                        continue 'cell;
                    }
                    let n = nm.raw_at(r * w + c);
                    acc[0] += n[0] - center[0];
                    acc[1] += n[1] - center[1];
                    acc[2] += n[2] - center[2];
                }
            }
            let idx = i * w + j;
            values[idx] = acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2];
            valid[idx] = true;
        }
    }
    SmoothnessMap {
        height: h,
        width: w,
        values,
        valid,
    }
}

/// Valid cells sorted by ascending smoothness (ties broken by row, then
/// column), with masked cells (mask < 0.5) excluded, truncated to
/// `floor(fraction * H * W)` entries.
pub fn select_planar_points(
    sm: &SmoothnessMap,
    mask: Option<&[f64]>,
    fraction: f64,
) -> Result<Vec<(usize, usize)>, Error> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("selection fraction must lie in (0, 1]".into()));
    }
    if let Some(m) = mask {
        if m.len() != sm.height * sm.width {
            return Err(Error::Incompatible(
                "mask length does not match the grid".into(),
            ));
        }
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..sm.height {
        for j in 0..sm.width {
            if !sm.is_valid(i, j) {
                continue;
            }
            if let Some(m) = mask {
                if m[i * sm.width + j] < 0.5 {
                    continue;
                }
            }
            candidates.push((sm.value_at(i, j), i, j));
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let keep = ((fraction * (sm.height * sm.width) as f64).floor() as usize).min(candidates.len());
    if keep < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientGeometry(format!(
            "only {keep} selectable planar cells"
        )));
    }
    Ok(candidates[..keep].iter().map(|&(_, i, j)| (i, j)).collect())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FrontendDiagnostics {
    pub iterations: usize,
    /// RMS point-to-plane residual at the returned pose.
    pub rms_residual: f64,
    /// RMS residual at the initial pose, for regression checks.
    pub initial_rms: f64,
    pub matches: usize,
    pub condition: f64,
    pub converged: bool,
}

impl FrontendDiagnostics {
    pub fn machine_form(&self) -> String {
        format!(
            "iterations={} rms_residual={:.6e} matches={} condition={:.3e} converged={}",
            self.iterations, self.rms_residual, self.matches, self.condition, self.converged
        )
    }
}

fn target_from_matrix(prev: &ScanMatrix) -> Result<TargetCloud, Error> {
    let normals = prev
        .normals()
        .ok_or_else(|| Error::Incompatible("previous matrix has no normals".into()))?;
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    for i in 0..prev.height() {
        for j in 0..prev.width() {
            if !prev.is_valid(i, j) {
                continue;
            }
            if let Some(n) = normals.normal_at(i, j) {
                pts.push(prev.point_at(i, j));
                nrm.push(n);
            }
        }
    }
    if pts.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientGeometry(format!(
            "previous scan offers only {} target points",
            pts.len()
        )));
    }
    Ok(TargetCloud::new(pts, nrm))
}

/// Estimates the pose mapping `cur` into `prev`'s frame.
///
/// Iterates Huber-weighted point-to-plane Gauss-Newton over the selected
/// planar points of `cur` against all valid points of `prev` (normals from
/// `prev`). Stops on a small update or after `max_iterations`. Raises
/// `InsufficientGeometry` when the 6x6 system is rank deficient and
/// `Diverged` when the residual grows three iterations in a row or the final
/// residual regressed past the initial one.
pub fn estimate_relative_pose(
    prev: &ScanMatrix,
    cur: &ScanMatrix,
    t0: &PoseSE3,
    cfg: &FrontendConfig,
) -> Result<(PoseSE3, FrontendDiagnostics), Error> {
    cfg.validate()?;
    if !t0.is_finite() {
        return Err(Error::Config("initial pose is not finite".into()));
    }
    if prev.config() != cur.config() {
        return Err(Error::Incompatible(
            "matrices use different projection configs".into(),
        ));
    }
    let cur_normals = cur
        .normals()
        .ok_or_else(|| Error::Incompatible("current matrix has no normals".into()))?;
    let sm = smoothness(cur_normals);
    let selected = select_planar_points(&sm, cur.mask(), cfg.selection_fraction)?;
    let source = SourceCloud {
        points: selected.iter().map(|&(i, j)| cur.point_at(i, j)).collect(),
        normals: selected
            .iter()
            .map(|&(i, j)| cur_normals.normal_at(i, j))
            .collect(),
    };
    let target = target_from_matrix(prev)?;

    let mut pose = *t0;
    let mut diag = FrontendDiagnostics::default();
    let (initial_rms, _) = rms_residual(&source, t0, &target, cfg.correspondence_max_dist);
    diag.initial_rms = initial_rms;

    let mut prev_rms = f64::INFINITY;
    let mut grow_streak = 0usize;
    for iter in 1..=cfg.max_iterations {
        let step = point_to_plane_step(
            &source,
            &pose,
            &target,
            cfg.correspondence_max_dist,
            cfg.huber_delta,
        )?;
        diag.iterations = iter;
        diag.matches = step.matches;
        diag.condition = step.condition;
        if step.rms > prev_rms * (1.0 + 1e-12) {
            grow_streak += 1;
            if grow_streak >= 3 {
                return Err(Error::Diverged {
                    last_pose: pose,
                    iterations: iter,
                    rms: step.rms,
                });
            }
        } else {
            grow_streak = 0;
        }
        prev_rms = step.rms;
        pose = pose.with_increment(&step.delta);
        if step.delta.norm() < cfg.convergence_eps {
            diag.converged = true;
            break;
        }
    }

    if cfg.polish_iterations > 0 {
        pose = polish_pose(prev, cur, &pose, cfg.polish_iterations, &ConsistencyOptions::default())?;
    }

    let (final_rms, final_matches) =
        rms_residual(&source, &pose, &target, cfg.correspondence_max_dist);
    diag.rms_residual = final_rms;
    if final_matches > 0 {
        diag.matches = final_matches;
    }
    if final_rms > initial_rms * (1.0 + 1e-9) + 1e-15 {
        return Err(Error::Diverged {
            last_pose: pose,
            iterations: diag.iterations,
            rms: final_rms,
        });
    }
    Ok((pose, diag))
}

/// Descends the smooth consistency objective from `t` with finite-difference
/// gradients and a backtracking step, returning the best pose found.
pub fn polish_pose(
    prev: &ScanMatrix,
    cur: &ScanMatrix,
    t: &PoseSE3,
    iterations: usize,
    opts: &ConsistencyOptions,
) -> Result<PoseSE3, Error> {
    let mut pose = *t;
    let mut best = consistency_loss_bilinear(prev, cur, &pose, cur.mask(), opts)?.mean;
    let fd_step = 1e-5;
    for _ in 0..iterations {
        let grad = loss_gradient_fd(prev, cur, &pose, cur.mask(), fd_step, opts)?;
        let g = Vector6::from_column_slice(&grad);
        let norm = g.norm();
        if norm < 1e-12 {
            break;
        }
        let dir = -g / norm;
        let mut alpha = 1e-3;
        let mut improved = false;
        for _ in 0..8 {
            let candidate = pose.with_increment(&(dir * alpha));
            let value = consistency_loss_bilinear(prev, cur, &candidate, cur.mask(), opts)?.mean;
            if value < best {
                pose = candidate;
                best = value;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::normals::NormalMap;
    use nalgebra::Vector3;

    fn constant_map(h: usize, w: usize) -> NormalMap {
        NormalMap::from_parts(h, w, vec![[0.0, 0.0, 1.0]; h * w], vec![true; h * w]).unwrap()
    }

    #[test]
    fn constant_field_has_zero_smoothness() {
        let nm = constant_map(10, 20);
        let sm = smoothness(&nm);
        for i in 1..9 {
            for j in 0..20 {
                assert!(sm.is_valid(i, j));
                assert_eq!(sm.value_at(i, j), 0.0);
            }
        }
        // Border rows lack kernel support.
        assert!(!sm.is_valid(0, 0));
        assert!(!sm.is_valid(9, 0));
    }

    #[test]
    fn flipped_normal_disturbs_exactly_the_support_cells() {
        let (h, w) = (9, 21);
        let mut normals = vec![[0.0, 0.0, 1.0]; h * w];
        normals[4 * w + 10] = [1.0, 0.0, 0.0];
        let nm = NormalMap::from_parts(h, w, normals, vec![true; h * w]).unwrap();
        let sm = smoothness(&nm);
        let mut nonzero = Vec::new();
        for i in 1..h - 1 {
            for j in 0..w {
                if sm.is_valid(i, j) && sm.value_at(i, j) != 0.0 {
                    nonzero.push((i, j));
                    // Brute-force convolution check at this cell.
                    let mut acc = [0.0f64; 3];
                    for di in -1i64..=1 {
                        for dj in -2i64..=2 {
                            let r = (i as i64 + di) as usize;
                            let c = ((j as i64 + dj).rem_euclid(w as i64)) as usize;
                            let coef = if di == 0 && dj == 0 { -14.0 } else { 1.0 };
                            let n = nm.raw_at(r * w + c);
                            for a in 0..3 {
                                acc[a] += coef * n[a];
                            }
                        }
                    }
                    let expected = acc.iter().map(|v| v * v).sum::<f64>();
                    assert!((sm.value_at(i, j) - expected).abs() < 1e-12);
                }
            }
        }
        // The 3x5 stencil touches the flipped cell from 15 positions.
        assert_eq!(nonzero.len(), 15);
    }

    #[test]
    fn all_invalid_map_gives_all_invalid_smoothness() {
        let nm = NormalMap::from_parts(6, 8, vec![[0.0; 3]; 48], vec![false; 48]).unwrap();
        let sm = smoothness(&nm);
        assert_eq!(sm.valid_count(), 0);
    }

    #[test]
    fn uniform_ties_select_in_row_major_order() {
        let nm = constant_map(10, 10);
        let sm = smoothness(&nm);
        // 80 valid cells (rows 1..9), all c = 0; fraction 0.1 of 100 -> 10.
        let sel = select_planar_points(&sm, None, 0.1).unwrap();
        let expected: Vec<(usize, usize)> = (0..10).map(|j| (1usize, j)).collect();
        assert_eq!(sel, expected);
    }

    #[test]
    fn fully_masked_selection_is_an_error() {
        let nm = constant_map(10, 10);
        let sm = smoothness(&nm);
        let mask = vec![0.0; 100];
        assert!(matches!(
            select_planar_points(&sm, Some(&mask), 0.5),
            Err(Error::InsufficientGeometry(_))
        ));
    }

    #[test]
    fn selection_matches_brute_force_sort() {
        let (h, w) = (12, 16);
        let mut normals = vec![[0.0, 0.0, 1.0]; h * w];
        // Scatter disturbances so smoothness varies.
        for (k, idx) in [(3, 5), (6, 1), (8, 12), (4, 9)].iter().enumerate() {
            let (i, j) = *idx;
            let v = 0.1 + 0.2 * k as f64;
            let n = Vector3::new(v, 0.0, 1.0).normalize();
            normals[i * w + j] = [n[0], n[1], n[2]];
        }
        let nm = NormalMap::from_parts(h, w, normals, vec![true; h * w]).unwrap();
        let sm = smoothness(&nm);
        let sel = select_planar_points(&sm, None, 0.25).unwrap();
        // Oracle: sort-and-filter by (value, row, col).
        let mut oracle: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if sm.is_valid(i, j) {
                    oracle.push((sm.value_at(i, j), i, j));
                }
            }
        }
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let keep = (0.25 * (h * w) as f64).floor() as usize;
        let expected: Vec<(usize, usize)> = oracle[..keep].iter().map(|&(_, i, j)| (i, j)).collect();
        assert_eq!(sel, expected);
    }

    #[test]
    fn selection_never_returns_masked_cells() {
        let nm = constant_map(10, 10);
        let sm = smoothness(&nm);
        let mut mask = vec![1.0; 100];
        for j in 0..10 {
            mask[1 * 10 + j] = 0.0; // mask the first interior row
        }
        let sel = select_planar_points(&sm, Some(&mask), 0.1).unwrap();
        assert!(sel.iter().all(|&(i, _)| i != 1));
    }

    #[test]
    fn polish_descends_the_consistency_objective() {
        use crate::consistency::consistency_loss_bilinear;
        use crate::normals::{estimate_normals, smooth_normals};
        use crate::projection::{project, ProjectionConfig};
        use crate::synth::star_scan;

        let cfg = ProjectionConfig::new(24, 120);
        let scan = star_scan(&cfg, 8.0, 0.15, 0);
        let mut m = project(&scan, &cfg).unwrap();
        let nm = smooth_normals(&estimate_normals(&m), 3).unwrap();
        m.set_normals(nm).unwrap();
        let opts = ConsistencyOptions::default();
        let start = crate::pose::PoseSE3::new(
            nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.004)),
            Vector3::new(0.01, 0.0, 0.0),
        );
        let before = consistency_loss_bilinear(&m, &m, &start, None, &opts)
            .unwrap()
            .mean;
        let polished = polish_pose(&m, &m, &start, 20, &opts).unwrap();
        let after = consistency_loss_bilinear(&m, &m, &polished, None, &opts)
            .unwrap()
            .mean;
        assert!(after < before, "polish did not improve: {after} vs {before}");
        assert!(polished.rotation_angle() < start.rotation_angle());
    }
}
