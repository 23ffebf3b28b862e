//! Packaging rendered frames into training samples.

use super::render::{Frame, Scene};
use super::{Result, SceneError};
use crate::diffcore::Tensor;
use crate::geometry::{narrow_mask, narrow_span, Intrinsics, Pose};

/// One input frame of a sample: the narrow crop the network sees plus the
/// wide ground truth used for supervision and for coordinate maps.
#[derive(Debug, Clone)]
pub struct FrameView {
    /// Narrow RGB `[3, h, nw]`.
    pub narrow_rgb: Tensor<f32>,
    /// Narrow depth `[h, nw]` matching the crop.
    pub narrow_depth: Tensor<f32>,
    /// Full wide RGB `[3, h, w]`.
    pub wide_rgb: Tensor<f32>,
    /// Full wide depth `[h, w]`.
    pub wide_depth: Tensor<f32>,
    /// Rigid transform taking this frame's camera points into the target
    /// frame's camera. Identity for the target frame itself.
    pub rel_pose: Pose,
}

/// A present frame with its `k` predecessors, ground truth, and view mask.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    /// Oldest first; the last entry is the present frame `t`.
    pub frames: Vec<FrameView>,
    /// Mask over the wide frame, 1 outside the narrow view.
    pub mask: Tensor<f32>,
    /// Wide-camera intrinsics.
    pub intrinsics: Intrinsics,
    /// Horizontal crop origin and width of the narrow view.
    pub narrow_x0: usize,
    pub narrow_width: usize,
}

impl SequenceSample {
    /// Intrinsics of the narrow crop.
    pub fn narrow_intrinsics(&self) -> Intrinsics {
        self.intrinsics.cropped(self.narrow_x0, 0)
    }

    /// The wide ground-truth target frame.
    pub fn target(&self) -> &FrameView {
        self.frames.last().expect("samples always hold k+1 frames")
    }

    pub fn past_count(&self) -> usize {
        self.frames.len() - 1
    }
}

/// Cuts the centered narrow columns out of a `[c, h, w]` or `[h, w]` map.
pub(crate) fn crop_narrow(wide: &Tensor<f32>, x0: usize, nw: usize) -> Tensor<f32> {
    let shape = wide.shape();
    let (c, h, w) = match shape.len() {
        2 => (1, shape[0], shape[1]),
        _ => (shape[0], shape[1], shape[2]),
    };
    let mut out = Vec::with_capacity(c * h * nw);
    for ch in 0..c {
        for y in 0..h {
            let row = ch * h * w + y * w + x0;
            out.extend_from_slice(&wide.data()[row..row + nw]);
        }
    }
    let new_shape: Vec<usize> = if shape.len() == 2 { vec![h, nw] } else { vec![c, h, nw] };
    Tensor::new(new_shape, out).expect("crop shape")
}

/// Builds the sample ending at step `t`, which must leave room for
/// `spec.past_frames` predecessors.
pub fn make_sequence(scene: &Scene, t: usize) -> Result<SequenceSample> {
    let k = scene.spec.past_frames;
    if t < k || t >= scene.steps() {
        return Err(SceneError::Spec {
            detail: format!(
                "sample step {t} needs {k} past frames inside a {}-step trajectory",
                scene.steps()
            ),
        });
    }
    let (x0, nw) = narrow_span(scene.spec.width, scene.spec.narrow_ratio)?;
    let target_pose = scene.pose(t)?;
    let mut frames = Vec::with_capacity(k + 1);
    for step in t - k..=t {
        let frame: Frame = scene.render(step)?;
        frames.push(FrameView {
            narrow_rgb: crop_narrow(&frame.rgb, x0, nw),
            narrow_depth: crop_narrow(&frame.depth, x0, nw),
            wide_rgb: frame.rgb,
            wide_depth: frame.depth,
            rel_pose: Pose::relative(&frame.pose, &target_pose),
        });
    }
    Ok(SequenceSample {
        frames,
        mask: narrow_mask(scene.spec.height, scene.spec.width, scene.spec.narrow_ratio)?,
        intrinsics: scene.intrinsics,
        narrow_x0: x0,
        narrow_width: nw,
    })
}
