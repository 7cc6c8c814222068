//! Raw scan and pose file I/O.
//!
//! Scan binaries are KITTI velodyne style: consecutive 16-byte records of four
//! little-endian f32 values `(x, y, z, intensity)`. Pose files hold one
//! row-major 3x4 `[R | t]` matrix of 12 reals per line.

use crate::error::Error;
use crate::pose::PoseSE3;
use nalgebra::{Matrix3, Vector3};
use std::fs;
use std::io::Write;
use std::path::Path;

/// One lidar return: position in the sensor frame plus reflectance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3I {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3I {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// One full lidar revolution.
#[derive(Clone, Debug)]
pub struct Scan {
    pub points: Vec<Point3I>,
    /// Seconds; scan files carry no time, so this is `sequence_index` times
    /// the configured sweep period (0.1 s for a 10 Hz sensor).
    pub timestamp: f64,
    pub sequence_index: usize,
}

impl Scan {
    /// Validating constructor: a scan must contain at least one point.
    pub fn new(points: Vec<Point3I>, timestamp: f64, sequence_index: usize) -> Result<Self, Error> {
        if points.is_empty() {
            return Err(Error::Format("scan contains no points".into()));
        }
        Ok(Self {
            points,
            timestamp,
            sequence_index,
        })
    }
}

/// A decoded scan plus how many records were discarded as unusable.
#[derive(Clone, Debug)]
pub struct ScanLoad {
    pub scan: Scan,
    /// Records dropped for non-finite values or an all-zero position.
    pub dropped: usize,
}

/// Decodes the 16-byte record stream. Non-finite records and all-zero
/// positions (non-returns) are dropped and counted.
pub fn decode_scan_records(bytes: &[u8]) -> Result<(Vec<Point3I>, usize), Error> {
    if bytes.is_empty() {
        return Err(Error::Format("scan file is empty".into()));
    }
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "scan file length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0usize;
    for rec in bytes.chunks_exact(16) {
        let x = f32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]) as f64;
        let y = f32::from_le_bytes([rec[4], rec[5], rec[6], rec[7]]) as f64;
        let z = f32::from_le_bytes([rec[8], rec[9], rec[10], rec[11]]) as f64;
        let i = f32::from_le_bytes([rec[12], rec[13], rec[14], rec[15]]) as f64;
        if !(x.is_finite() && y.is_finite() && z.is_finite() && i.is_finite()) {
            dropped += 1;
            continue;
        }
        if x == 0.0 && y == 0.0 && z == 0.0 {
            dropped += 1;
            continue;
        }
        points.push(Point3I::new(x, y, z, i));
    }
    Ok((points, dropped))
}

pub fn read_scan_bin<P: AsRef<Path>>(
    path: P,
    sequence_index: usize,
    scan_period: f64,
) -> Result<ScanLoad, Error> {
    let bytes = fs::read(path)?;
    let (points, dropped) = decode_scan_records(&bytes)?;
    let scan = Scan::new(points, sequence_index as f64 * scan_period, sequence_index)?;
    Ok(ScanLoad { scan, dropped })
}

pub fn encode_scan_records(points: &[Point3I]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        out.extend_from_slice(&(p.x as f32).to_le_bytes());
        out.extend_from_slice(&(p.y as f32).to_le_bytes());
        out.extend_from_slice(&(p.z as f32).to_le_bytes());
        out.extend_from_slice(&(p.intensity as f32).to_le_bytes());
    }
    out
}

pub fn write_scan_bin<P: AsRef<Path>>(path: P, scan: &Scan) -> Result<(), Error> {
    fs::write(path, encode_scan_records(&scan.points))?;
    Ok(())
}

/// Parses one pose line of 12 whitespace-separated reals.
pub fn parse_pose_line(line: &str) -> Result<PoseSE3, Error> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {tok:?} in pose line")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != 12 {
        return Err(Error::Format(format!(
            "pose line has {} values, expected 12",
            values.len()
        )));
    }
    let r = Matrix3::new(
        values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
        values[10],
    );
    let t = Vector3::new(values[3], values[7], values[11]);
    PoseSE3::from_rotation_matrix(&r, t)
}

pub fn read_poses_kitti<P: AsRef<Path>>(path: P) -> Result<Vec<PoseSE3>, Error> {
    let text = fs::read_to_string(path)?;
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        poses.push(parse_pose_line(line).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("line {}: {msg}", lineno + 1)),
            other => other,
        })?);
    }
    Ok(poses)
}

pub fn format_pose_line(pose: &PoseSE3) -> String {
    let r = pose.rotation_matrix();
    let t = pose.translation();
    format!(
        "{:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t[0],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t[1],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t[2]
    )
}

pub fn write_poses_kitti<P: AsRef<Path>>(path: P, poses: &[PoseSE3]) -> Result<(), Error> {
    let mut file = fs::File::create(path)?;
    for pose in poses {
        writeln!(file, "{}", format_pose_line(pose))?;
    }
    Ok(())
}

/// Reads a per-cell mask channel: `height * width` little-endian f32 values in
/// row-major order, each in `[0, 1]`.
pub fn read_mask_bin<P: AsRef<Path>>(
    path: P,
    height: usize,
    width: usize,
) -> Result<Vec<f64>, Error> {
    let bytes = fs::read(path)?;
    let expected = height * width * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "mask file length {} does not match {}x{} grid ({} bytes)",
            bytes.len(),
            height,
            width,
            expected
        )));
    }
    let mut mask = Vec::with_capacity(height * width);
    for rec in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]) as f64;
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Format(format!("mask value {v} outside [0, 1]")));
        }
        mask.push(v);
    }
    Ok(mask)
}

pub fn write_mask_bin<P: AsRef<Path>>(path: P, mask: &[f64]) -> Result<(), Error> {
    let mut out = Vec::with_capacity(mask.len() * 4);
    for v in mask {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
