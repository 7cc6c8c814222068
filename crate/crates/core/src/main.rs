//! Command-line surface: run the odometry pipeline, evaluate trajectories,
//! score normals against the PCA oracle, and dump loss breakdowns.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
//! unusable input paths).

use clap::{Parser, Subcommand};
use lidar_odometry::config::{self, MaskMode, PipelineConfig};
use lidar_odometry::consistency::{
    consistency_loss, heuristic_mask, mask_regularizer, pose_loss, total_loss,
};
use lidar_odometry::error::Error;
use lidar_odometry::evaluation::evaluate_trajectory;
use lidar_odometry::ingest::{
    read_mask_bin, read_poses_kitti, read_scan_bin, write_poses_kitti,
};
use lidar_odometry::mapping::{Pipeline, WorldTrajectory};
use lidar_odometry::normals::{estimate_normals, evaluate_normals, pca_normals, smooth_normals};
use lidar_odometry::pose::PoseSE3;
use lidar_odometry::projection::project;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "lidar-odom",
    about = "Range-image lidar odometry: run, evaluate, and inspect",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the odometry pipeline over a directory of .bin scans.
    Run {
        /// Directory of 16-byte-record scan files, processed in sorted order.
        #[arg(long)]
        scans: PathBuf,
        /// Output trajectory file (KITTI pose lines).
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ground-truth pose file; when given, a drift report is printed.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Mask source: "none", "heuristic", or a directory of per-scan
        /// <index>.mask files.
        #[arg(long, default_value = "none")]
        mask: String,
        /// Process at most this many scans.
        #[arg(long)]
        max_scans: Option<usize>,
        /// Write per-scan key=value diagnostics here.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Dump the resident map as ASCII point lists into this directory.
        #[arg(long)]
        map_dump: Option<PathBuf>,
    },
    /// Compare an estimated trajectory against ground truth.
    EvalOdometry {
        estimated: PathBuf,
        ground_truth: PathBuf,
        /// Print the machine-readable key=value form instead of the table.
        #[arg(long)]
        machine: bool,
    },
    /// Score grid normals of one scan against the PCA oracle.
    EvalNormals {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Neighborhood radius of the PCA oracle, meters.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Evaluate the loss breakdown of a scan pair under a relative pose.
    Losses {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        cur: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// File holding one KITTI pose line for the relative pose
        /// (identity when omitted).
        #[arg(long)]
        pose: Option<PathBuf>,
        /// File holding one KITTI pose line used as ground truth for the
        /// pose loss (defaults to the evaluated pose itself).
        #[arg(long)]
        gt_pose: Option<PathBuf>,
        /// Mask source: "none", "heuristic", or a mask file for the current
        /// scan.
        #[arg(long, default_value = "none")]
        mask: String,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => {
            if !p.is_file() {
                return usage(format!("config file {} does not exist", p.display()));
            }
            config::load(p).map_err(|e| CliError::Usage(e.to_string()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn sorted_scan_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return usage(format!("{} is not a directory", dir.display()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return usage(format!("no .bin scans in {}", dir.display()));
    }
    Ok(files)
}

fn load_pose_line_file(path: &Path) -> Result<PoseSE3, CliError> {
    let poses = read_poses_kitti(path).map_err(|e| CliError::Usage(e.to_string()))?;
    match poses.len() {
        1 => Ok(poses[0]),
        n => usage(format!("{} holds {n} poses, expected 1", path.display())),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            scans,
            output,
            config,
            gt,
            mask,
            max_scans,
            diagnostics,
            map_dump,
        } => run(
            &scans,
            &output,
            &config,
            &gt,
            &mask,
            max_scans,
            &diagnostics,
            &map_dump,
        ),
        Command::EvalOdometry {
            estimated,
            ground_truth,
            machine,
        } => eval_odometry(&estimated, &ground_truth, machine),
        Command::EvalNormals {
            scan,
            config,
            radius,
        } => eval_normals(&scan, &config, radius),
        Command::Losses {
            prev,
            cur,
            config,
            pose,
            gt_pose,
            mask,
        } => losses(&prev, &cur, &config, &pose, &gt_pose, &mask),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    scans_dir: &Path,
    output: &Path,
    config_path: &Option<PathBuf>,
    gt: &Option<PathBuf>,
    mask: &str,
    max_scans: Option<usize>,
    diagnostics: &Option<PathBuf>,
    map_dump: &Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    cfg.mask = match mask {
        "none" => MaskMode::None,
        "heuristic" => MaskMode::Heuristic,
        path => {
            let dir = PathBuf::from(path);
            if !dir.is_dir() {
                return usage(format!(
                    "mask must be none, heuristic, or a directory; {path} is neither"
                ));
            }
            MaskMode::Directory(dir)
        }
    };
    let mut files = sorted_scan_files(scans_dir)?;
    if let Some(limit) = max_scans {
        files.truncate(limit);
    }
    let gt_poses = match gt {
        Some(path) => {
            if !path.is_file() {
                return usage(format!("ground-truth file {} does not exist", path.display()));
            }
            Some(read_poses_kitti(path).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        None => None,
    };

    let scan_period = cfg.scan_period;
    let mut pipeline = Pipeline::new(cfg.clone())?;
    let mut dropped_total = 0usize;
    for (index, file) in files.iter().enumerate() {
        let load = read_scan_bin(file, index, scan_period)?;
        dropped_total += load.dropped;
        pipeline.process(&load.scan)?;
    }
    if let Some(dir) = map_dump {
        pipeline.map().dump_ascii(dir)?;
    }
    let out = pipeline.into_output();
    write_poses_kitti(output, out.trajectory.poses())?;
    println!(
        "processed {} scans ({} unusable points dropped)",
        out.trajectory.len(),
        dropped_total
    );
    println!("timing: {}", out.timing.machine_form());
    println!("trajectory written to {}", output.display());

    if let Some(path) = diagnostics {
        let mut file = std::fs::File::create(path).map_err(Error::from)?;
        for d in &out.diagnostics {
            writeln!(file, "{}", d.machine_form()).map_err(Error::from)?;
        }
        writeln!(file, "{}", out.timing.machine_form()).map_err(Error::from)?;
    }
    if let Some(gt_poses) = gt_poses {
        if gt_poses.len() != out.trajectory.len() {
            return Err(CliError::Runtime(format!(
                "ground truth has {} poses, trajectory has {}",
                gt_poses.len(),
                out.trajectory.len()
            )));
        }
        let report =
            evaluate_trajectory(&out.trajectory, &WorldTrajectory::from_poses(gt_poses))?;
        println!("{}", report.human_table());
    }
    Ok(())
}

fn eval_odometry(estimated: &Path, ground_truth: &Path, machine: bool) -> Result<(), CliError> {
    for p in [estimated, ground_truth] {
        if !p.is_file() {
            return usage(format!("{} does not exist", p.display()));
        }
    }
    let est = read_poses_kitti(estimated).map_err(|e| CliError::Usage(e.to_string()))?;
    let gt = read_poses_kitti(ground_truth).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = evaluate_trajectory(
        &WorldTrajectory::from_poses(est),
        &WorldTrajectory::from_poses(gt),
    )?;
    if machine {
        print!("{}", report.machine_form());
    } else {
        print!("{}", report.human_table());
    }
    Ok(())
}

fn eval_normals(
    scan_path: &Path,
    config_path: &Option<PathBuf>,
    radius: Option<f64>,
) -> Result<(), CliError> {
    if !scan_path.is_file() {
        return usage(format!("scan file {} does not exist", scan_path.display()));
    }
    let cfg = load_config(config_path)?;
    let radius = radius.unwrap_or(cfg.pca_radius);
    if !(radius > 0.0) {
        return usage("radius must be positive");
    }
    let load = read_scan_bin(scan_path, 0, cfg.scan_period)?;
    let mut matrix = project(&load.scan, &cfg.projection)?;
    let smoothed = smooth_normals(&estimate_normals(&matrix), cfg.smooth_window)?;
    matrix.set_normals(smoothed)?;
    let oracle = pca_normals(&load.scan, radius)?;
    let report = evaluate_normals(matrix.normals().unwrap(), &matrix, &oracle)?;
    print!("{}", report.machine_form());
    Ok(())
}

fn losses(
    prev_path: &Path,
    cur_path: &Path,
    config_path: &Option<PathBuf>,
    pose_path: &Option<PathBuf>,
    gt_pose_path: &Option<PathBuf>,
    mask: &str,
) -> Result<(), CliError> {
    for p in [prev_path, cur_path] {
        if !p.is_file() {
            return usage(format!("scan file {} does not exist", p.display()));
        }
    }
    let cfg = load_config(config_path)?;
    let pose = match pose_path {
        Some(p) => load_pose_line_file(p)?,
        None => PoseSE3::identity(),
    };
    let gt_pose = match gt_pose_path {
        Some(p) => load_pose_line_file(p)?,
        None => pose,
    };
    let prev = read_scan_bin(prev_path, 0, cfg.scan_period)?;
    let cur = read_scan_bin(cur_path, 1, cfg.scan_period)?;
    let mut prev_m = project(&prev.scan, &cfg.projection)?;
    let mut cur_m = project(&cur.scan, &cfg.projection)?;
    prev_m.set_normals(smooth_normals(&estimate_normals(&prev_m), cfg.smooth_window)?)?;
    cur_m.set_normals(smooth_normals(&estimate_normals(&cur_m), cfg.smooth_window)?)?;
    match mask {
        "none" => {}
        "heuristic" => {
            let m = heuristic_mask(&prev_m, &cur_m, &pose, cfg.mask_residual_threshold)?;
            cur_m.set_mask(m)?;
        }
        path => {
            let file = PathBuf::from(path);
            if !file.is_file() {
                return usage(format!(
                    "mask must be none, heuristic, or a mask file; {path} is neither"
                ));
            }
            let m = read_mask_bin(&file, cfg.projection.height, cfg.projection.width)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            cur_m.set_mask(m)?;
        }
    }
    let term = consistency_loss(&prev_m, &cur_m, &pose, cur_m.mask(), &cfg.loss_options)?;
    let regularizer = mask_regularizer(&cur_m);
    let pose_terms = pose_loss(&pose, &gt_pose, &cfg.weights);
    let breakdown = total_loss(
        term.sum,
        regularizer,
        &pose_terms,
        &cfg.weights,
        term.compared_cells,
    );
    print!("{}", breakdown.machine_form());
    println!("l_consistency_mean={:.12e}", term.mean);
    Ok(())
}
