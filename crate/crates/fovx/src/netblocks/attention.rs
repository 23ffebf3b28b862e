//! Patch self-attention and its gated recurrent wrapper.
//!
//! For every pixel the attention core looks at a 7x7 footprint: queries
//! `phi(x)` and keys `psi(x)` from 1x1 convs are concatenated (the key maps
//! shifted once per footprint offset, zero-filled at the border, so
//! neighbors outside the image contribute zero vectors) and a two-layer 1x1
//! conv stack turns them into one weight per footprint position *and*
//! output channel. Values `beta(x)` are combined under those weights and a
//! 3x3 conv plus residual produces the block output.
//!
//! The gated wrapper concatenates the features with the previous step's
//! hidden state (warped into the current view), runs the attention core,
//! and splits the result into a tanh/sigmoid-gated output and the next
//! hidden state.

use crate::diffcore::{concat, Scalar, Tensor, Var};
use crate::geometry::{warp_features, CoordinateMap};

use super::{Bound, NetError, Result, LEAKY_SLOPE};

/// Side length of the square attention footprint.
pub const FOOTPRINT: usize = 7;

const RADIUS: isize = FOOTPRINT as isize / 2;

/// Footprint offsets in enumeration order: row-major, `dy` then `dx`, from
/// `(-3, -3)` to `(3, 3)`. Weight blocks are laid out in this order.
pub(crate) fn footprint_offsets() -> impl Iterator<Item = (isize, isize)> {
    (-RADIUS..=RADIUS).flat_map(|dy| (-RADIUS..=RADIUS).map(move |dx| (dy, dx)))
}

/// Patch self-attention core under the blob prefix `prefix`. Reads
/// `x_full` (`[1, C_in, h, w]`), aggregates values over the footprint with
/// generated per-position, per-channel weights, and adds the residual
/// `x_res` (`[1, C_out, h, w]`) after the closing conv.
pub fn patch_attention<T: Scalar>(
    p: &Bound<T>,
    prefix: &str,
    x_full: &Var<T>,
    x_res: &Var<T>,
) -> Result<Var<T>> {
    let res_shape = x_res.shape();
    if res_shape.len() != 4 {
        return Err(NetError::BadBlob {
            name: prefix.to_string(),
            detail: format!("residual input must be NCHW, got {res_shape:?}"),
        });
    }
    let out_ch = res_shape[1];

    let phi = p.conv(&format!("{prefix}.phi"), x_full, 1, 0)?;
    let psi = p.conv(&format!("{prefix}.psi"), x_full, 1, 0)?;
    let beta = p.conv(&format!("{prefix}.beta"), x_full, 1, 0)?;

    let mut parts = Vec::with_capacity(FOOTPRINT * FOOTPRINT + 1);
    parts.push(phi);
    for (dy, dx) in footprint_offsets() {
        parts.push(psi.shift2d(-dy, -dx)?);
    }
    let delta = concat(&parts, 1)?;
    let hidden = p
        .conv(&format!("{prefix}.gamma0"), &delta, 1, 0)?
        .leaky_relu(LEAKY_SLOPE)?;
    let alpha = p.conv(&format!("{prefix}.gamma1"), &hidden, 1, 0)?;

    let mut y: Option<Var<T>> = None;
    for (o, (dy, dx)) in footprint_offsets().enumerate() {
        let weights = alpha.slice(1, o * out_ch, out_ch)?;
        let values = beta.shift2d(-dy, -dx)?;
        let term = weights.mul(&values)?;
        y = Some(match y {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    let y = y.expect("footprint is non-empty");
    Ok(p.conv(&format!("{prefix}.r"), &y, 1, 1)?.add(x_res)?)
}

/// Gated self-attention block. Concatenates `x` (`[1, C, h, w]`) with the
/// previous hidden state warped through `coords` (zeros when absent), runs
/// [`patch_attention`] with `x` as the residual, and gates the result:
/// the output is `sigmoid(conv_g(z)) * tanh(conv_a(z))` and `z` itself is
/// the next hidden state.
pub fn gated_attention<T: Scalar>(
    p: &Bound<T>,
    prefix: &str,
    x: &Var<T>,
    hidden: Option<(&Var<T>, &CoordinateMap)>,
) -> Result<(Var<T>, Var<T>)> {
    let prev = match hidden {
        Some((state, coords)) => warp_features(state, coords)?,
        None => x.tape().constant(&Tensor::zeros(x.shape())),
    };
    let full = concat(&[x.clone(), prev], 1)?;
    let z = patch_attention(p, &format!("{prefix}.attn"), &full, x)?;
    let g = p.conv(&format!("{prefix}.gate.g"), &z, 1, 1)?.sigmoid()?;
    let a = p.conv(&format!("{prefix}.gate.a"), &z, 1, 1)?.tanh()?;
    Ok((g.mul(&a)?, z))
}
