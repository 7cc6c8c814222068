//! Surface normal estimation on the grid, a PCA oracle over raw points, and
//! normal quality evaluation.
//!
//! Grid normals sum weighted cross products over the four grid neighbors
//! (up, left, down, right in counterclockwise order), weighting each
//! difference vector by `exp(-0.2 |r_k - r_center|)` so neighbors at similar
//! range dominate. Normals are unit length and oriented toward the sensor.

use crate::error::Error;
use crate::ingest::Scan;
use crate::projection::ScanMatrix;
use crate::spatial::KdTree3;
use nalgebra::{Matrix3, Vector3};

/// Grid of unit normals with validity flags.
#[derive(Clone, Debug)]
pub struct NormalMap {
    height: usize,
    width: usize,
    normals: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn from_parts(
        height: usize,
        width: usize,
        normals: Vec<[f64; 3]>,
        valid: Vec<bool>,
    ) -> Result<Self, Error> {
        if normals.len() != height * width || valid.len() != height * width {
            return Err(Error::Incompatible(
                "normal map channel lengths do not match the grid".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            normals,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    pub fn normal_at(&self, row: usize, col: usize) -> Option<Vector3<f64>> {
        let i = self.idx(row, col);
        if self.valid[i] {
            let n = self.normals[i];
            Some(Vector3::new(n[0], n[1], n[2]))
        } else {
            None
        }
    }

    /// Raw component access for samplers; check validity separately.
    pub fn raw_at(&self, idx: usize) -> [f64; 3] {
        self.normals[idx]
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Debug dump as three 16-bit PGMs (`<prefix>_nx.pgm`, `_ny`, `_nz`),
    /// components mapped from [-1, 1] to the sample range.
    pub fn write_pgm_triplet(&self, prefix: &std::path::Path) -> Result<(), Error> {
        use std::io::Write;
        for (axis, suffix) in ["nx", "ny", "nz"].iter().enumerate() {
            let path = prefix.with_file_name(format!(
                "{}_{suffix}.pgm",
                prefix.file_name().and_then(|s| s.to_str()).unwrap_or("normals")
            ));
            let mut file = std::fs::File::create(path)?;
            write!(file, "P5\n{} {}\n65535\n", self.width, self.height)?;
            let mut buf = Vec::with_capacity(self.normals.len() * 2);
            for (n, v) in self.normals.iter().zip(&self.valid) {
                let value = if *v {
                    ((n[axis] + 1.0) * 0.5 * 65535.0).round().clamp(0.0, 65535.0) as u16
                } else {
                    0
                };
                buf.extend_from_slice(&value.to_be_bytes());
            }
            file.write_all(&buf)?;
        }
        Ok(())
    }
}

const RANGE_WEIGHT_RATE: f64 = 0.2;
const DEGENERATE_NORM: f64 = 1e-12;

/// Estimates a normal per cell from the four grid neighbors. Columns wrap
/// around the azimuth seam; rows do not, so the top and bottom rows are
/// invalid. A cell is invalid unless itself and all four neighbors are valid.
pub fn estimate_normals(m: &ScanMatrix) -> NormalMap {
    let (h, w) = (m.height(), m.width());
    let mut normals = vec![[0.0f64; 3]; h * w];
    let mut valid = vec![false; h * w];
    if h < 3 {
        return NormalMap::from_parts(h, w, normals, valid).unwrap();
    }
    for i in 1..h - 1 {
        for j in 0..w {
            if !m.is_valid(i, j) {
                continue;
            }
            let left = (j + w - 1) % w;
            let right = (j + 1) % w;
            // Counterclockwise neighbor cycle: up, left, down, right.
            let cells = [(i + 1, j), (i, left), (i - 1, j), (i, right)];
            if cells.iter().any(|&(r, c)| !m.is_valid(r, c)) {
                continue;
            }
            let center = m.point_at(i, j);
            let rc = m.range_at(i, j);
            let mut diffs = [Vector3::zeros(); 4];
            for (k, &(r, c)) in cells.iter().enumerate() {
                let wgt = (-RANGE_WEIGHT_RATE * (m.range_at(r, c) - rc).abs()).exp();
                diffs[k] = (m.point_at(r, c) - center) * wgt;
            }
            let mut sum = Vector3::zeros();
            for k in 0..4 {
                sum += diffs[k].cross(&diffs[(k + 1) % 4]);
            }
            let norm = sum.norm();
            if norm < DEGENERATE_NORM {
                continue;
            }
            let mut n = sum / norm;
            if n.dot(&center) > 0.0 {
                n = -n;
            }
            let idx = i * w + j;
            normals[idx] = [n[0], n[1], n[2]];
            valid[idx] = true;
        }
    }
    NormalMap::from_parts(h, w, normals, valid).unwrap()
}

/// Moving-average smoothing over a `window x window` neighborhood of valid
/// normals, renormalized. `window` must be odd; 1 is the identity.
pub fn smooth_normals(nm: &NormalMap, window: usize) -> Result<NormalMap, Error> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    if window == 1 {
        return Ok(nm.clone());
    }
    let (h, w) = (nm.height(), nm.width());
    let half = window / 2;
    let mut normals = vec![[0.0f64; 3]; h * w];
    let mut valid = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            if !nm.is_valid(i, j) {
                continue;
            }
            let mut sum = Vector3::zeros();
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(h - 1);
            for r in lo..=hi {
                for dc in 0..window {
                    let c = (j + w + dc - half) % w;
                    if let Some(n) = nm.normal_at(r, c) {
                        sum += n;
                    }
                }
            }
            let norm = sum.norm();
            if norm < DEGENERATE_NORM {
                continue;
            }
            let n = sum / norm;
            let idx = i * w + j;
            normals[idx] = [n[0], n[1], n[2]];
            valid[idx] = true;
        }
    }
    NormalMap::from_parts(h, w, normals, valid)
}

/// Least-squares plane normal per point from all neighbors within `radius`,
/// via the smallest eigenvector of the neighborhood covariance. Points with
/// fewer than three in-radius points (the point itself counts) are invalid.
pub fn pca_normals(scan: &Scan, radius: f64) -> Result<Vec<Option<Vector3<f64>>>, Error> {
    if !(radius > 0.0) {
        return Err(Error::Config("pca radius must be positive".into()));
    }
    let coords: Vec<[f64; 3]> = scan
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z])
        .collect();
    let tree = KdTree3::build(&coords);
    let mut out = Vec::with_capacity(coords.len());
    for p in &coords {
        let neighbors = tree.within_radius(p, radius);
        if neighbors.len() < 3 {
            out.push(None);
            continue;
        }
        let mut centroid = Vector3::zeros();
        for &k in &neighbors {
            centroid += Vector3::from(coords[k]);
        }
        centroid /= neighbors.len() as f64;
        let mut cov = Matrix3::zeros();
        for &k in &neighbors {
            let d = Vector3::from(coords[k]) - centroid;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let mut min_axis = 0;
        for a in 1..3 {
            if eig.eigenvalues[a] < eig.eigenvalues[min_axis] {
                min_axis = a;
            }
        }
        let mut n: Vector3<f64> = eig.eigenvectors.column(min_axis).into();
        let norm = n.norm();
        if norm < DEGENERATE_NORM {
            out.push(None);
            continue;
        }
        n /= norm;
        if n.dot(&Vector3::from(*p)) > 0.0 {
            n = -n;
        }
        out.push(Some(n));
    }
    Ok(out)
}

/// Angular error statistics between predicted grid normals and per-point
/// ground truth, matched through the matrix back-references.
#[derive(Clone, Debug)]
pub struct NormalEvalReport {
    pub mean_deg: f64,
    pub median_deg: f64,
    /// Fraction of compared normals within 11.25 degrees.
    pub within_11_25: f64,
    pub within_22_5: f64,
    pub within_30: f64,
    pub compared: usize,
}

impl NormalEvalReport {
    pub fn machine_form(&self) -> String {
        format!(
            "mean_deg={:.6}\nmedian_deg={:.6}\nwithin_11_25={:.6}\nwithin_22_5={:.6}\nwithin_30={:.6}\ncompared={}\n",
            self.mean_deg,
            self.median_deg,
            self.within_11_25,
            self.within_22_5,
            self.within_30,
            self.compared
        )
    }
}

/// Compares predicted normals against per-point ground truth normals wherever
/// both are defined. Dot products are clamped before the arccosine.
pub fn evaluate_normals(
    pred: &NormalMap,
    m: &ScanMatrix,
    gt: &[Option<Vector3<f64>>],
) -> Result<NormalEvalReport, Error> {
    if pred.height() != m.height() || pred.width() != m.width() {
        return Err(Error::Incompatible(
            "normal map dimensions do not match the matrix".into(),
        ));
    }
    let mut errors_deg = Vec::new();
    for i in 0..m.height() {
        for j in 0..m.width() {
            let Some(n_pred) = pred.normal_at(i, j) else {
                continue;
            };
            let Some(src) = m.source_index(i, j) else {
                continue;
            };
            let Some(Some(n_gt)) = gt.get(src) else {
                continue;
            };
            let dot = n_pred.dot(n_gt).clamp(-1.0, 1.0);
            errors_deg.push(dot.acos().to_degrees());
        }
    }
    if errors_deg.is_empty() {
        return Err(Error::EmptyReport(
            "no cells with both predicted and ground-truth normals".into(),
        ));
    }
    let compared = errors_deg.len();
    let mean = errors_deg.iter().sum::<f64>() / compared as f64;
    let mut sorted = errors_deg.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if compared % 2 == 1 {
        sorted[compared / 2]
    } else {
        0.5 * (sorted[compared / 2 - 1] + sorted[compared / 2])
    };
    let frac_below = |threshold: f64| {
        errors_deg.iter().filter(|e| **e < threshold).count() as f64 / compared as f64
    };
    Ok(NormalEvalReport {
        mean_deg: mean,
        median_deg: median,
        within_11_25: frac_below(11.25),
        within_22_5: frac_below(22.5),
        within_30: frac_below(30.0),
        compared,
    })
}
