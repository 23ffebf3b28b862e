//! Strided patch discriminators.
//!
//! Both critics are three stride-2 convs and a 1x1 head producing a patch
//! score map at 1/8 resolution, with no output nonlinearity (the
//! adversarial loss is least-squares). The single-image critic reads RGB
//! plus the out-of-view mask; the temporal critic reads three consecutive
//! RGB frames stacked with the mask, so it can penalize flicker that each
//! frame alone would get away with.

use crate::diffcore::{concat, Scalar, Var};

use super::{Bound, Result, DISC_SLOPE};

fn score<T: Scalar>(p: &Bound<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let mut h = x.clone();
    for i in 0..3 {
        h = p
            .conv(&format!("{prefix}.c{i}"), &h, 2, 1)?
            .leaky_relu(DISC_SLOPE)?;
    }
    p.conv(&format!("{prefix}.out"), &h, 1, 0)
}

/// Scores one `[1, 3, H, W]` image with its mask `[1, 1, H, W]`; returns
/// `[1, 1, H/8, W/8]` patch logits.
pub fn disc_image<T: Scalar>(p: &Bound<T>, rgb: &Var<T>, mask: &Var<T>) -> Result<Var<T>> {
    let x = concat(&[rgb.clone(), mask.clone()], 1)?;
    score(p, "disc_q", &x)
}

/// Scores three consecutive frames (oldest first) stacked with the mask.
pub fn disc_temporal<T: Scalar>(
    p: &Bound<T>,
    frames: &[Var<T>; 3],
    mask: &Var<T>,
) -> Result<Var<T>> {
    let x = concat(
        &[
            frames[0].clone(),
            frames[1].clone(),
            frames[2].clone(),
            mask.clone(),
        ],
        1,
    )?;
    score(p, "disc_t", &x)
}
