//! Cylindrical range-image encoding of scans and its inverse.
//!
//! A scan is binned into an `H x W` grid: the column comes from the
//! full-circle azimuth `atan2(y, x)` normalized to `[0, 2pi)` and divided by
//! the horizontal resolution, the row from the elevation `asin(z / r)` shifted
//! by the angle of row 0 and divided by the vertical resolution, both rounded
//! down. When several points land in one cell the closest return wins. Cells
//! reconstruct to 3D through the cell-center angles, so encoding a decoded
//! matrix is a fixed point.

use crate::error::Error;
use crate::ingest::{Point3I, Scan};
use crate::normals::NormalMap;
use crate::pose::PoseSE3;
use nalgebra::Vector3;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

/// Vertical FOV span of the 64-beam sensor the defaults model, degrees.
const DEFAULT_VERTICAL_SPAN_DEG: f64 = 26.9;
/// Elevation of the top beam, degrees.
const DEFAULT_VERTICAL_TOP_DEG: f64 = 2.0;

/// Row-angle model: evenly spaced rows or an explicit per-row elevation table.
#[derive(Clone, Debug, PartialEq)]
pub enum VerticalModel {
    Uniform { delta_beta: f64, beta_offset: f64 },
    /// Strictly increasing cell-center elevations, one per row. Bin edges are
    /// midpoints between consecutive centers, extended by half a step at the
    /// ends.
    Table { centers: Vec<f64>, edges: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub height: usize,
    pub width: usize,
    /// Horizontal angular resolution, radians per column.
    pub delta_alpha: f64,
    pub vertical: VerticalModel,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::new(64, 1800)
    }
}

impl ProjectionConfig {
    /// Grid with defaults derived from the sensor model: columns cover a full
    /// revolution, rows span the vertical field of view with row 0 at the
    /// bottom beam.
    pub fn new(height: usize, width: usize) -> Self {
        let span = DEFAULT_VERTICAL_SPAN_DEG.to_radians();
        let top = DEFAULT_VERTICAL_TOP_DEG.to_radians();
        Self {
            height,
            width,
            delta_alpha: TAU / width as f64,
            vertical: VerticalModel::Uniform {
                delta_beta: span / height as f64,
                beta_offset: top - span,
            },
        }
    }

    pub fn with_uniform_rows(height: usize, width: usize, delta_beta: f64, beta_offset: f64) -> Self {
        Self {
            height,
            width,
            delta_alpha: TAU / width as f64,
            vertical: VerticalModel::Uniform {
                delta_beta,
                beta_offset,
            },
        }
    }

    pub fn with_row_table(height: usize, width: usize, centers: Vec<f64>) -> Result<Self, Error> {
        if centers.len() != height {
            return Err(Error::Config(format!(
                "row table has {} entries for {} rows",
                centers.len(),
                height
            )));
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "row elevation table must be strictly increasing".into(),
            ));
        }
        let mut edges = Vec::with_capacity(height + 1);
        let first_step = if height > 1 {
            centers[1] - centers[0]
        } else {
            1e-3
        };
        let last_step = if height > 1 {
            centers[height - 1] - centers[height - 2]
        } else {
            1e-3
        };
        edges.push(centers[0] - 0.5 * first_step);
        for w in centers.windows(2) {
            edges.push(0.5 * (w[0] + w[1]));
        }
        edges.push(centers[height - 1] + 0.5 * last_step);
        Ok(Self {
            height,
            width,
            delta_alpha: TAU / width as f64,
            vertical: VerticalModel::Table { centers, edges },
        })
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if !(self.delta_alpha > 0.0) {
            return Err(Error::Config("delta_alpha must be positive".into()));
        }
        if self.width as f64 * self.delta_alpha > TAU + 1e-9 {
            return Err(Error::Config(
                "columns cover more than a full revolution".into(),
            ));
        }
        match &self.vertical {
            VerticalModel::Uniform { delta_beta, .. } => {
                if !(*delta_beta > 0.0) {
                    return Err(Error::Config("delta_beta must be positive".into()));
                }
            }
            VerticalModel::Table { centers, .. } => {
                if centers.len() != self.height {
                    return Err(Error::Config("row table length mismatch".into()));
                }
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Azimuth of the column center, radians in `[0, 2pi)`.
    pub fn col_center(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.delta_alpha
    }

    /// Elevation of the row center, radians.
    pub fn row_center(&self, row: usize) -> f64 {
        match &self.vertical {
            VerticalModel::Uniform {
                delta_beta,
                beta_offset,
            } => beta_offset + (row as f64 + 0.5) * delta_beta,
            VerticalModel::Table { centers, .. } => centers[row],
        }
    }

    /// Column for an azimuth already normalized to `[0, 2pi)`. Azimuths on the
    /// seam wrap to column 0 when the grid covers the full circle.
    pub fn col_for_azimuth(&self, azimuth: f64) -> Option<usize> {
        let c = (azimuth / self.delta_alpha).floor();
        if c < 0.0 {
            return None;
        }
        let c = c as usize;
        if c < self.width {
            Some(c)
        } else if c == self.width && self.width as f64 * self.delta_alpha >= TAU - 1e-9 {
            Some(0)
        } else {
            None
        }
    }

    pub fn row_for_elevation(&self, elevation: f64) -> Option<usize> {
        match &self.vertical {
            VerticalModel::Uniform {
                delta_beta,
                beta_offset,
            } => {
                let x = ((elevation - beta_offset) / delta_beta).floor();
                if x < 0.0 || x >= self.height as f64 {
                    None
                } else {
                    Some(x as usize)
                }
            }
            VerticalModel::Table { edges, .. } => {
                if elevation < edges[0] || elevation >= edges[self.height] {
                    return None;
                }
                // First edge above the elevation; row = that index - 1.
                let row = edges.partition_point(|e| *e <= elevation) - 1;
                Some(row.min(self.height - 1))
            }
        }
    }

    /// Continuous column coordinate such that integer values sit on cell
    /// centers. Used for bilinear sampling.
    pub fn col_coordinate(&self, azimuth: f64) -> f64 {
        azimuth / self.delta_alpha - 0.5
    }

    /// Continuous row coordinate such that integer values sit on cell centers.
    pub fn row_coordinate(&self, elevation: f64) -> f64 {
        match &self.vertical {
            VerticalModel::Uniform {
                delta_beta,
                beta_offset,
            } => (elevation - beta_offset) / delta_beta - 0.5,
            VerticalModel::Table { centers, .. } => {
                // Piecewise-linear between consecutive centers.
                let n = centers.len();
                if elevation <= centers[0] {
                    let step = if n > 1 { centers[1] - centers[0] } else { 1e-3 };
                    return (elevation - centers[0]) / step;
                }
                if elevation >= centers[n - 1] {
                    let step = if n > 1 {
                        centers[n - 1] - centers[n - 2]
                    } else {
                        1e-3
                    };
                    return (n - 1) as f64 + (elevation - centers[n - 1]) / step;
                }
                let hi = centers.partition_point(|c| *c <= elevation);
                let lo = hi - 1;
                lo as f64 + (elevation - centers[lo]) / (centers[hi] - centers[lo])
            }
        }
    }

    /// Unit direction through the center of cell `(row, col)`.
    pub fn cell_direction(&self, row: usize, col: usize) -> Vector3<f64> {
        let az = self.col_center(col);
        let el = self.row_center(row);
        let (sin_el, cos_el) = el.sin_cos();
        let (sin_az, cos_az) = az.sin_cos();
        Vector3::new(cos_el * cos_az, cos_el * sin_az, sin_el)
    }
}

/// Azimuth in `[0, 2pi)` and elevation of a point with range `r`.
fn angles_of(p: &Vector3<f64>, r: f64) -> (f64, f64) {
    let mut az = p.y.atan2(p.x);
    if az < 0.0 {
        az += TAU;
    }
    if az >= TAU {
        az = 0.0;
    }
    let el = (p.z / r).clamp(-1.0, 1.0).asin();
    (az, el)
}

/// Channels that can be dumped as a 16-bit PGM for inspection.
#[derive(Clone, Copy, Debug)]
pub enum PgmChannel {
    Range,
    Intensity,
    Mask,
}

/// Multi-channel range-image grid. Immutable after construction apart from
/// attaching normal and mask channels.
#[derive(Clone, Debug)]
pub struct ScanMatrix {
    cfg: ProjectionConfig,
    range: Vec<f64>,
    intensity: Vec<f64>,
    valid: Vec<bool>,
    /// Back-reference into the source scan, `u32::MAX` where none.
    source: Vec<u32>,
    /// Cell-center reconstruction `r * direction`, zeros where invalid.
    points: Vec<[f64; 3]>,
    normals: Option<NormalMap>,
    mask: Option<Vec<f64>>,
    dropped_points: usize,
}

impl ScanMatrix {
    fn empty(cfg: ProjectionConfig) -> Self {
        let n = cfg.cells();
        Self {
            cfg,
            range: vec![0.0; n],
            intensity: vec![0.0; n],
            valid: vec![false; n],
            source: vec![u32::MAX; n],
            points: vec![[0.0; 3]; n],
            normals: None,
            mask: None,
            dropped_points: 0,
        }
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.cfg
    }

    pub fn height(&self) -> usize {
        self.cfg.height
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.cfg.width + col
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    pub fn range_at(&self, row: usize, col: usize) -> f64 {
        self.range[self.idx(row, col)]
    }

    pub fn intensity_at(&self, row: usize, col: usize) -> f64 {
        self.intensity[self.idx(row, col)]
    }

    pub fn point_at(&self, row: usize, col: usize) -> Vector3<f64> {
        let p = self.points[self.idx(row, col)];
        Vector3::new(p[0], p[1], p[2])
    }

    pub fn source_index(&self, row: usize, col: usize) -> Option<usize> {
        let s = self.source[self.idx(row, col)];
        (s != u32::MAX).then_some(s as usize)
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn range_channel(&self) -> &[f64] {
        &self.range
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Points that failed to land in the grid (plus collision losers are not
    /// counted; they were resolved, not dropped).
    pub fn dropped_points(&self) -> usize {
        self.dropped_points
    }

    pub fn set_normals(&mut self, normals: NormalMap) -> Result<(), Error> {
        if normals.height() != self.cfg.height || normals.width() != self.cfg.width {
            return Err(Error::Incompatible(
                "normal map dimensions do not match the grid".into(),
            ));
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn normals(&self) -> Option<&NormalMap> {
        self.normals.as_ref()
    }

    pub fn set_mask(&mut self, mask: Vec<f64>) -> Result<(), Error> {
        if mask.len() != self.cfg.cells() {
            return Err(Error::Incompatible(
                "mask length does not match the grid".into(),
            ));
        }
        if mask.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Incompatible("mask values must lie in [0, 1]".into()));
        }
        self.mask = Some(mask);
        Ok(())
    }

    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }

    pub fn clear_mask(&mut self) {
        self.mask = None;
    }

    /// Writes one channel as a binary 16-bit PGM, row-major, values scaled by
    /// `scale` and clamped to the sample range. Invalid cells write zero.
    pub fn write_pgm<P: AsRef<Path>>(
        &self,
        channel: PgmChannel,
        scale: f64,
        path: P,
    ) -> Result<(), Error> {
        let values: Box<dyn Fn(usize) -> f64> = match channel {
            PgmChannel::Range => Box::new(|i| self.range[i]),
            PgmChannel::Intensity => Box::new(|i| self.intensity[i]),
            PgmChannel::Mask => match &self.mask {
                Some(m) => {
                    let m = m.clone();
                    Box::new(move |i| m[i])
                }
                None => return Err(Error::Config("matrix has no mask channel".into())),
            },
        };
        let mut file = std::fs::File::create(path)?;
        write!(file, "P5\n{} {}\n65535\n", self.cfg.width, self.cfg.height)?;
        let mut buf = Vec::with_capacity(self.cfg.cells() * 2);
        for i in 0..self.cfg.cells() {
            let v = if self.valid[i] {
                (values(i) * scale).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            buf.extend_from_slice(&v.to_be_bytes());
        }
        file.write_all(&buf)?;
        Ok(())
    }
}

/// Bins a scan into the grid. Out-of-grid and unusable points are dropped and
/// counted; cell collisions keep the smaller range.
pub fn project(scan: &Scan, cfg: &ProjectionConfig) -> Result<ScanMatrix, Error> {
    cfg.validate()?;
    if scan.points.is_empty() {
        return Err(Error::Format("cannot project an empty scan".into()));
    }
    let mut m = ScanMatrix::empty(cfg.clone());
    for (pi, p) in scan.points.iter().enumerate() {
        let pos = p.position();
        let r = pos.norm();
        if !r.is_finite() || r <= 0.0 {
            m.dropped_points += 1;
            continue;
        }
        let (az, el) = angles_of(&pos, r);
        let (row, col) = match (cfg.row_for_elevation(el), cfg.col_for_azimuth(az)) {
            (Some(row), Some(col)) => (row, col),
            _ => {
                m.dropped_points += 1;
                continue;
            }
        };
        let idx = row * cfg.width + col;
        if !m.valid[idx] || r < m.range[idx] {
            m.valid[idx] = true;
            m.range[idx] = r;
            m.intensity[idx] = p.intensity;
            m.source[idx] = pi as u32;
        }
    }
    fill_cell_points(&mut m);
    Ok(m)
}

fn fill_cell_points(m: &mut ScanMatrix) {
    let (h, w) = (m.cfg.height, m.cfg.width);
    // Per-row and per-column trig tables; cells only need products.
    let row_trig: Vec<(f64, f64)> = (0..h).map(|i| m.cfg.row_center(i).sin_cos()).collect();
    let col_trig: Vec<(f64, f64)> = (0..w).map(|j| m.cfg.col_center(j).sin_cos()).collect();
    for i in 0..h {
        let (sin_el, cos_el) = row_trig[i];
        for j in 0..w {
            let idx = i * w + j;
            if !m.valid[idx] {
                continue;
            }
            let (sin_az, cos_az) = col_trig[j];
            let r = m.range[idx];
            m.points[idx] = [r * cos_el * cos_az, r * cos_el * sin_az, r * sin_el];
        }
    }
}

/// Reconstructs the valid cells to 3D points (cell-center convention), in
/// row-major cell order. An all-invalid matrix yields an empty scan.
pub fn unproject(m: &ScanMatrix) -> Scan {
    let mut points = Vec::with_capacity(m.valid_count());
    for i in 0..m.height() {
        for j in 0..m.width() {
            let idx = m.idx(i, j);
            if !m.valid[idx] {
                continue;
            }
            let p = m.points[idx];
            points.push(Point3I::new(p[0], p[1], p[2], m.intensity[idx]));
        }
    }
    Scan {
        points,
        timestamp: 0.0,
        sequence_index: 0,
    }
}

/// Rigidly moves every valid cell by `t` and re-bins into the same grid,
/// carrying intensities, source references, and (when present) normals
/// rotated by the transform. Collisions keep the smaller transformed range.
pub fn transform_and_reproject(m: &ScanMatrix, t: &PoseSE3) -> ScanMatrix {
    let cfg = m.cfg.clone();
    let mut out = ScanMatrix::empty(cfg.clone());
    let carry_normals = m.normals.is_some();
    let mut out_normals = if carry_normals {
        Some((
            vec![[0.0f64; 3]; cfg.cells()],
            vec![false; cfg.cells()],
        ))
    } else {
        None
    };
    for i in 0..m.height() {
        for j in 0..m.width() {
            let idx = i * cfg.width + j;
            if !m.valid[idx] {
                continue;
            }
            let p = m.points[idx];
            let moved = t.transform_point(&Vector3::new(p[0], p[1], p[2]));
            let r = moved.norm();
            if !r.is_finite() || r <= 0.0 {
                out.dropped_points += 1;
                continue;
            }
            let (az, el) = angles_of(&moved, r);
            let (row, col) = match (cfg.row_for_elevation(el), cfg.col_for_azimuth(az)) {
                (Some(row), Some(col)) => (row, col),
                _ => {
                    out.dropped_points += 1;
                    continue;
                }
            };
            let oidx = row * cfg.width + col;
            if !out.valid[oidx] || r < out.range[oidx] {
                out.valid[oidx] = true;
                out.range[oidx] = r;
                out.intensity[oidx] = m.intensity[idx];
                out.source[oidx] = m.source[idx];
                if let Some((normals, nvalid)) = out_normals.as_mut() {
                    let nm = m.normals.as_ref().unwrap();
                    if let Some(n) = nm.normal_at(i, j) {
                        let rn = t.rotate_vector(&n);
                        normals[oidx] = [rn[0], rn[1], rn[2]];
                        nvalid[oidx] = true;
                    } else {
                        nvalid[oidx] = false;
                    }
                }
            }
        }
    }
    fill_cell_points(&mut out);
    if let Some((normals, nvalid)) = out_normals {
        let nm = NormalMap::from_parts(cfg.height, cfg.width, normals, nvalid)
            .expect("dimensions are consistent by construction");
        out.normals = Some(nm);
    }
    out
}
