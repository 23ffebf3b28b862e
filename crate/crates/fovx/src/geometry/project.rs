//! Forward projection of a depth-carrying source frame into a target view.

use super::camera::{Intrinsics, Pose};
use super::{GeomError, Result};
use crate::diffcore::Tensor;

/// Points closer than this to the camera plane are treated as behind it.
pub const NEAR_PLANE: f64 = 0.1;

/// Where every source pixel lands in the target view.
///
/// All maps share the source extent `[h, w]`; `targets` is `[2, h, w]` with
/// channel 0 the target x and channel 1 the target y in pixels. `depth`
/// holds the projected z in the target camera and `valid` is 1 where that z
/// clears the near plane. Invalid entries keep target position 0 and depth 0.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub targets: Tensor<f32>,
    pub depth: Tensor<f32>,
    pub valid: Tensor<f32>,
}

impl FlowField {
    pub fn size(&self) -> (usize, usize) {
        (self.depth.shape()[0], self.depth.shape()[1])
    }

    /// Displacement from where a source pixel would sit in the target image
    /// (same ray, identity motion) to where it actually lands, `[2, h, w]`.
    /// Zero wherever the projection is invalid.
    pub fn flow(&self, src_k: &Intrinsics, dst_k: &Intrinsics) -> Tensor<f32> {
        let (h, w) = self.size();
        let mut data = vec![0.0f32; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if self.valid.data()[i] == 0.0 {
                    continue;
                }
                let rest_x = dst_k.fx * ((x as f64 - src_k.cx) / src_k.fx) + dst_k.cx;
                let rest_y = dst_k.fy * ((y as f64 - src_k.cy) / src_k.fy) + dst_k.cy;
                data[i] = (self.targets.data()[i] as f64 - rest_x) as f32;
                data[h * w + i] = (self.targets.data()[h * w + i] as f64 - rest_y) as f32;
            }
        }
        Tensor::new(vec![2, h, w], data).expect("flow shape")
    }
}

/// Projects every pixel of a source depth map `[h, w]` through `relative`
/// (source camera to target camera) and the target intrinsics.
///
/// Non-positive source depths and points landing behind the target near
/// plane are marked invalid. The math runs in f64 end to end.
pub fn project_forward(
    depth: &Tensor<f32>,
    src_k: &Intrinsics,
    dst_k: &Intrinsics,
    relative: &Pose,
) -> Result<FlowField> {
    if depth.shape().len() != 2 {
        return Err(GeomError::Invalid {
            op: "project_forward",
            detail: format!("depth must be [h, w], got {:?}", depth.shape()),
        });
    }
    relative.validate(1e-6)?;
    let (h, w) = (depth.shape()[0], depth.shape()[1]);
    let mut targets = vec![0.0f32; 2 * h * w];
    let mut out_depth = vec![0.0f32; h * w];
    let mut valid = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = depth.data()[i] as f64;
            if !(d > 0.0) || !d.is_finite() {
                continue;
            }
            let p = relative.transform(src_k.unproject(x as f64, y as f64, d));
            if p[2] < NEAR_PLANE {
                continue;
            }
            let uv = dst_k.project(p);
            if !uv[0].is_finite() || !uv[1].is_finite() {
                continue;
            }
            targets[i] = uv[0] as f32;
            targets[h * w + i] = uv[1] as f32;
            out_depth[i] = p[2] as f32;
            valid[i] = 1.0;
        }
    }
    Ok(FlowField {
        targets: Tensor::new(vec![2, h, w], targets).expect("targets shape"),
        depth: Tensor::new(vec![h, w], out_depth).expect("depth shape"),
        valid: Tensor::new(vec![h, w], valid).expect("valid shape"),
    })
}
