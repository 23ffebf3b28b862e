//! On-disk formats for poses and depth maps.
//!
//! Poses live in a text file with one camera-to-world matrix per line as 16
//! row-major floats. Depth maps are binary: width and height as little-endian
//! u32, then row-major f32 values, also little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::camera::Pose;
use super::{GeomError, Result};
use crate::diffcore::Tensor;

fn io_err(path: &Path, source: std::io::Error) -> GeomError {
    GeomError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn file_err(path: &Path, detail: impl Into<String>) -> GeomError {
    GeomError::BadFile {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for pose in poses {
        let row = pose.to_row_major();
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(" ")).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut poses = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = [0.0f64; 16];
        let mut count = 0;
        for (i, tok) in line.split_whitespace().enumerate() {
            if i >= 16 {
                count = i + 1;
                break;
            }
            vals[i] = tok
                .parse::<f64>()
                .map_err(|_| file_err(path, format!("line {}: bad float {tok:?}", lineno + 1)))?;
            count = i + 1;
        }
        if count != 16 {
            return Err(file_err(
                path,
                format!("line {}: expected 16 values, got {count}", lineno + 1),
            ));
        }
        let pose = Pose::from_row_major(&vals);
        pose.validate(1e-6)?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn write_depth(path: &Path, depth: &Tensor<f32>) -> Result<()> {
    if depth.shape().len() != 2 {
        return Err(file_err(path, format!("depth must be [h, w], got {:?}", depth.shape())));
    }
    let (h, w) = (depth.shape()[0], depth.shape()[1]);
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    out.write_all(&(w as u32).to_le_bytes()).map_err(|e| io_err(path, e))?;
    out.write_all(&(h as u32).to_le_bytes()).map_err(|e| io_err(path, e))?;
    for &v in depth.data() {
        out.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_depth(path: &Path) -> Result<Tensor<f32>> {
    let mut file = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut header = [0u8; 8];
    file.read_exact(&mut header)
        .map_err(|_| file_err(path, "truncated header"))?;
    let w = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    if w == 0 || h == 0 || w.saturating_mul(h) > (1 << 28) {
        return Err(file_err(path, format!("implausible size {w}x{h}")));
    }
    let mut bytes = vec![0u8; h * w * 4];
    file.read_exact(&mut bytes)
        .map_err(|_| file_err(path, format!("truncated data, wanted {w}x{h} f32")))?;
    let mut trailer = [0u8; 1];
    if file.read(&mut trailer).map_err(|e| io_err(path, e))? != 0 {
        return Err(file_err(path, "trailing bytes after depth data"));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(vec![h, w], data).map_err(GeomError::from)
}
