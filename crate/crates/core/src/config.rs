//! Pipeline configuration and its flat `key = value` file format.
//!
//! Lines are `key = value` with `#` comments; unknown keys are rejected so
//! typos fail loudly. Every tunable constant has a key; absent keys keep
//! their defaults.

use crate::consistency::{ConsistencyOptions, LossWeights};
use crate::error::Error;
use crate::frontend::FrontendConfig;
use crate::mapping::MappingConfig;
use crate::projection::{ProjectionConfig, VerticalModel};
use std::fs;
use std::path::{Path, PathBuf};

/// Which relative motion drives distortion compensation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistortionPoseSource {
    /// The scan-to-scan frontend estimate.
    #[default]
    Frontend,
    /// The constant-velocity prediction.
    Predicted,
}

/// Mask source for selection and loss weighting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum MaskMode {
    /// All-ones weighting.
    #[default]
    None,
    /// Mask cells whose warped range residual exceeds the configured
    /// threshold.
    Heuristic,
    /// Per-scan mask files `<index:06>.mask` in a directory.
    Directory(PathBuf),
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Sweep period in seconds; scan timestamps are `index * scan_period`.
    pub scan_period: f64,
    pub projection: ProjectionConfig,
    /// Normal smoothing window (odd cell count; 1 disables).
    pub smooth_window: usize,
    /// Neighborhood radius of the PCA normal oracle, meters.
    pub pca_radius: f64,
    pub weights: LossWeights,
    pub loss_options: ConsistencyOptions,
    pub mask: MaskMode,
    /// Warped-range residual above which the heuristic mask zeroes a cell,
    /// meters.
    pub mask_residual_threshold: f64,
    pub frontend: FrontendConfig,
    pub mapping: MappingConfig,
    pub distortion_pose_source: DistortionPoseSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scan_period: 0.1,
            projection: ProjectionConfig::default(),
            smooth_window: 3,
            pca_radius: 0.5,
            weights: LossWeights::default(),
            loss_options: ConsistencyOptions::default(),
            mask: MaskMode::None,
            mask_residual_threshold: 1.0,
            frontend: FrontendConfig::default(),
            mapping: MappingConfig::default(),
            distortion_pose_source: DistortionPoseSource::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.scan_period > 0.0) {
            return Err(Error::Config("scan_period must be positive".into()));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(Error::Config("smooth_window must be odd".into()));
        }
        if !(self.pca_radius > 0.0) {
            return Err(Error::Config("pca_radius must be positive".into()));
        }
        if !(self.mask_residual_threshold > 0.0) {
            return Err(Error::Config(
                "mask_residual_threshold must be positive".into(),
            ));
        }
        self.projection.validate()?;
        self.weights.validate()?;
        self.frontend.validate()?;
        self.mapping.validate()?;
        Ok(())
    }
}

pub fn load<P: AsRef<Path>>(path: P) -> Result<PipelineConfig, Error> {
    parse(&fs::read_to_string(path)?)
}

/// Raw projection overrides gathered before the config is assembled, since
/// derived defaults (`delta_alpha = 2pi / width`) depend on the final grid.
#[derive(Default)]
struct ProjectionOverrides {
    height: Option<usize>,
    width: Option<usize>,
    delta_alpha: Option<f64>,
    delta_beta: Option<f64>,
    beta_offset: Option<f64>,
    row_elevations: Option<Vec<f64>>,
}

pub fn parse(text: &str) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::default();
    let mut proj = ProjectionOverrides::default();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let ctx = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
        set_key(&mut cfg, &mut proj, key, value).map_err(|e| match e {
            Error::Config(msg) => ctx(msg),
            other => other,
        })?;
    }

    cfg.projection = assemble_projection(proj)?;
    cfg.validate()?;
    Ok(cfg)
}

fn assemble_projection(o: ProjectionOverrides) -> Result<ProjectionConfig, Error> {
    let height = o.height.unwrap_or(64);
    let width = o.width.unwrap_or(1800);
    if let Some(centers) = o.row_elevations {
        let mut cfg = ProjectionConfig::with_row_table(height, width, centers)?;
        if let Some(da) = o.delta_alpha {
            cfg.delta_alpha = da;
        }
        return Ok(cfg);
    }
    let mut cfg = ProjectionConfig::new(height, width);
    if let Some(da) = o.delta_alpha {
        cfg.delta_alpha = da;
    }
    if o.delta_beta.is_some() || o.beta_offset.is_some() {
        let (mut db, mut bo) = match cfg.vertical {
            VerticalModel::Uniform {
                delta_beta,
                beta_offset,
            } => (delta_beta, beta_offset),
            _ => unreachable!(),
        };
        if let Some(v) = o.delta_beta {
            db = v;
        }
        if let Some(v) = o.beta_offset {
            bo = v;
        }
        cfg.vertical = VerticalModel::Uniform {
            delta_beta: db,
            beta_offset: bo,
        };
    }
    Ok(cfg)
}

fn parse_f64(value: &str) -> Result<f64, Error> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("bad number {value:?}")))
}

fn parse_usize(value: &str) -> Result<usize, Error> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("bad integer {value:?}")))
}

fn parse_bool(value: &str) -> Result<bool, Error> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?}"))),
    }
}

fn set_key(
    cfg: &mut PipelineConfig,
    proj: &mut ProjectionOverrides,
    key: &str,
    value: &str,
) -> Result<(), Error> {
    match key {
        "scan_period" => cfg.scan_period = parse_f64(value)?,
        "projection.height" => proj.height = Some(parse_usize(value)?),
        "projection.width" => proj.width = Some(parse_usize(value)?),
        "projection.delta_alpha" => proj.delta_alpha = Some(parse_f64(value)?),
        "projection.delta_beta" => proj.delta_beta = Some(parse_f64(value)?),
        "projection.beta_offset" => proj.beta_offset = Some(parse_f64(value)?),
        "projection.row_elevations" => {
            let centers = value
                .split(',')
                .map(|tok| parse_f64(tok.trim()))
                .collect::<Result<Vec<f64>, Error>>()?;
            proj.row_elevations = Some(centers);
        }
        "normals.smooth_window" => cfg.smooth_window = parse_usize(value)?,
        "normals.pca_radius" => cfg.pca_radius = parse_f64(value)?,
        "loss.consistency_weight" => cfg.weights.consistency_weight = parse_f64(value)?,
        "loss.regularizer_weight" => cfg.weights.regularizer_weight = parse_f64(value)?,
        "loss.translation_log_var" => cfg.weights.translation_log_var = parse_f64(value)?,
        "loss.rotation_log_var" => cfg.weights.rotation_log_var = parse_f64(value)?,
        "loss.gradient_clamp" => cfg.loss_options.gradient_clamp = parse_f64(value)?,
        "loss.charbonnier_eps" => cfg.loss_options.charbonnier_eps = parse_f64(value)?,
        "mask.residual_threshold" => cfg.mask_residual_threshold = parse_f64(value)?,
        "frontend.max_iterations" => cfg.frontend.max_iterations = parse_usize(value)?,
        "frontend.convergence_eps" => cfg.frontend.convergence_eps = parse_f64(value)?,
        "frontend.correspondence_max_dist" => {
            cfg.frontend.correspondence_max_dist = parse_f64(value)?
        }
        "frontend.selection_fraction" => cfg.frontend.selection_fraction = parse_f64(value)?,
        "frontend.huber_delta" => cfg.frontend.huber_delta = parse_f64(value)?,
        "frontend.polish_iterations" => cfg.frontend.polish_iterations = parse_usize(value)?,
        "mapping.max_iterations" => cfg.mapping.max_iterations = parse_usize(value)?,
        "mapping.window_scans" => cfg.mapping.window_scans = parse_usize(value)?,
        "mapping.selection_fraction" => cfg.mapping.selection_fraction = parse_f64(value)?,
        "mapping.correspondence_max_dist" => {
            cfg.mapping.correspondence_max_dist = parse_f64(value)?
        }
        "mapping.convergence_eps" => cfg.mapping.convergence_eps = parse_f64(value)?,
        "mapping.huber_delta" => cfg.mapping.huber_delta = parse_f64(value)?,
        "mapping.insertion_min_spacing" => {
            cfg.mapping.insertion_min_spacing = parse_f64(value)?
        }
        "mapping.distortion_compensation" => {
            cfg.mapping.distortion_compensation = parse_bool(value)?
        }
        "mapping.distortion_pose_source" => {
            cfg.distortion_pose_source = match value {
                "frontend" => DistortionPoseSource::Frontend,
                "predicted" => DistortionPoseSource::Predicted,
                _ => {
                    return Err(Error::Config(format!(
                        "distortion_pose_source must be frontend or predicted, got {value:?}"
                    )))
                }
            }
        }
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

/// A commented config file carrying every key at its default value.
pub fn default_file_contents() -> String {
    let d = PipelineConfig::default();
    let (db, bo) = match d.projection.vertical {
        VerticalModel::Uniform {
            delta_beta,
            beta_offset,
        } => (delta_beta, beta_offset),
        _ => (0.0, 0.0),
    };
    format!(
        "# Pipeline configuration; every key at its default.\n\
         scan_period = {}\n\
         \n\
         projection.height = {}\n\
         projection.width = {}\n\
         projection.delta_alpha = {:.12}  # radians/column, 2pi/width\n\
         projection.delta_beta = {:.12}   # radians/row\n\
         projection.beta_offset = {:.12}  # elevation of row 0, radians\n\
         # projection.row_elevations = <comma-separated per-row elevations>\n\
         \n\
         normals.smooth_window = {}\n\
         normals.pca_radius = {}\n\
         \n\
         loss.consistency_weight = {}\n\
         loss.regularizer_weight = {}\n\
         loss.translation_log_var = {}\n\
         loss.rotation_log_var = {}\n\
         loss.gradient_clamp = {}\n\
         loss.charbonnier_eps = {}\n\
         \n\
         mask.residual_threshold = {}\n\
         \n\
         frontend.max_iterations = {}\n\
         frontend.convergence_eps = {}\n\
         frontend.correspondence_max_dist = {}\n\
         frontend.selection_fraction = {}\n\
         frontend.huber_delta = {}\n\
         frontend.polish_iterations = {}\n\
         \n\
         mapping.max_iterations = {}\n\
         mapping.window_scans = {}\n\
         mapping.selection_fraction = {}\n\
         mapping.correspondence_max_dist = {}\n\
         mapping.convergence_eps = {}\n\
         mapping.huber_delta = {}\n\
         mapping.insertion_min_spacing = {}\n\
         mapping.distortion_compensation = {}\n\
         mapping.distortion_pose_source = frontend\n",
        d.scan_period,
        d.projection.height,
        d.projection.width,
        d.projection.delta_alpha,
        db,
        bo,
        d.smooth_window,
        d.pca_radius,
        d.weights.consistency_weight,
        d.weights.regularizer_weight,
        d.weights.translation_log_var,
        d.weights.rotation_log_var,
        d.loss_options.gradient_clamp,
        d.loss_options.charbonnier_eps,
        d.mask_residual_threshold,
        d.frontend.max_iterations,
        d.frontend.convergence_eps,
        d.frontend.correspondence_max_dist,
        d.frontend.selection_fraction,
        d.frontend.huber_delta,
        d.frontend.polish_iterations,
        d.mapping.max_iterations,
        d.mapping.window_scans,
        d.mapping.selection_fraction,
        d.mapping.correspondence_max_dist,
        d.mapping.convergence_eps,
        d.mapping.huber_delta,
        d.mapping.insertion_min_spacing,
        d.mapping.distortion_compensation,
    )
}
