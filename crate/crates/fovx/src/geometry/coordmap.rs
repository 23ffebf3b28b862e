//! Reversal of a forward projection into a target-indexed sampling map.

use super::project::FlowField;
use super::{GeomError, Result};
use crate::diffcore::Tensor;

/// For every target pixel, the source pixel that lands there.
///
/// `coords` is `[2, h, w]` holding source x and y in source pixel units,
/// `-1` where no source pixel arrives. `valid` is `[1, h, w]` and `depth`
/// stores the winning projected depth (0 where invalid). Stored coordinates
/// are exact integers: reversal snaps each projection to its nearest pixel
/// and keeps the identity of the source pixel, not its subpixel position.
#[derive(Debug, Clone)]
pub struct CoordinateMap {
    pub coords: Tensor<f32>,
    pub valid: Tensor<f32>,
    pub depth: Tensor<f32>,
}

impl CoordinateMap {
    pub fn size(&self) -> (usize, usize) {
        (self.coords.shape()[1], self.coords.shape()[2])
    }

    /// Map for a feature level downsampled by `stride` in both axes, taking
    /// every stride-th target pixel and dividing source coordinates by the
    /// stride. Extents must be divisible by the stride.
    pub fn level(&self, stride: usize) -> Result<CoordinateMap> {
        let (h, w) = self.size();
        if stride == 0 || h % stride != 0 || w % stride != 0 {
            return Err(GeomError::Invalid {
                op: "coordinate_map_level",
                detail: format!("stride {stride} does not divide {h}x{w}"),
            });
        }
        let (lh, lw) = (h / stride, w / stride);
        let mut coords = vec![0.0f32; 2 * lh * lw];
        let mut valid = vec![0.0f32; lh * lw];
        let mut depth = vec![0.0f32; lh * lw];
        let s = stride as f32;
        for y in 0..lh {
            for x in 0..lw {
                let src = (y * stride) * w + x * stride;
                let dst = y * lw + x;
                if self.valid.data()[src] == 1.0 {
                    coords[dst] = self.coords.data()[src] / s;
                    coords[lh * lw + dst] = self.coords.data()[h * w + src] / s;
                    valid[dst] = 1.0;
                    depth[dst] = self.depth.data()[src];
                } else {
                    coords[dst] = -1.0;
                    coords[lh * lw + dst] = -1.0;
                }
            }
        }
        Ok(CoordinateMap {
            coords: Tensor::new(vec![2, lh, lw], coords).expect("coords shape"),
            valid: Tensor::new(vec![1, lh, lw], valid).expect("valid shape"),
            depth: Tensor::new(vec![1, lh, lw], depth).expect("depth shape"),
        })
    }

    /// Map that samples every target pixel from itself.
    pub fn identity(h: usize, w: usize) -> CoordinateMap {
        let mut coords = vec![0.0f32; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                coords[y * w + x] = x as f32;
                coords[h * w + y * w + x] = y as f32;
            }
        }
        CoordinateMap {
            coords: Tensor::new(vec![2, h, w], coords).expect("coords shape"),
            valid: Tensor::full(vec![1, h, w], 1.0),
            depth: Tensor::full(vec![1, h, w], 0.0),
        }
    }
}

/// Turns a forward projection into a target-indexed map over a target image
/// of `dst_h` by `dst_w` pixels.
///
/// Each valid source pixel is snapped to its nearest target pixel (ties at
/// .5 round away from zero). When several source pixels hit the same target
/// pixel the nearest one wins; on exact depth ties the first in row-major
/// source order is kept.
pub fn reverse_coordinates(flow: &FlowField, dst_h: usize, dst_w: usize) -> CoordinateMap {
    let (sh, sw) = flow.size();
    let n = dst_h * dst_w;
    let mut coords = vec![-1.0f32; 2 * n];
    let mut valid = vec![0.0f32; n];
    let mut depth = vec![f32::INFINITY; n];
    for sy in 0..sh {
        for sx in 0..sw {
            let i = sy * sw + sx;
            if flow.valid.data()[i] == 0.0 {
                continue;
            }
            let tx = (flow.targets.data()[i] as f64).round();
            let ty = (flow.targets.data()[sh * sw + i] as f64).round();
            if tx < 0.0 || ty < 0.0 || tx >= dst_w as f64 || ty >= dst_h as f64 {
                continue;
            }
            let t = ty as usize * dst_w + tx as usize;
            let d = flow.depth.data()[i];
            if d < depth[t] {
                depth[t] = d;
                coords[t] = sx as f32;
                coords[n + t] = sy as f32;
                valid[t] = 1.0;
            }
        }
    }
    for (v, d) in valid.iter().zip(depth.iter_mut()) {
        if *v == 0.0 {
            *d = 0.0;
        }
    }
    CoordinateMap {
        coords: Tensor::new(vec![2, dst_h, dst_w], coords).expect("coords shape"),
        valid: Tensor::new(vec![1, dst_h, dst_w], valid).expect("valid shape"),
        depth: Tensor::new(vec![1, dst_h, dst_w], depth).expect("depth shape"),
    }
}
