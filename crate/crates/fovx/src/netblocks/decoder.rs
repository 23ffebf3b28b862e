//! Coarse-to-fine decoder with per-level gated self-attention and the two
//! output heads.
//!
//! Starting at the coarsest aggregated level, each stage fuses the skip
//! features (concatenated with the upsampled result of the stage below)
//! through a conv, applies a gated self-attention block whose hidden state
//! persists across time steps, and hands the gated features up. The finest
//! stage feeds two sigmoid heads sharing the trunk: a 3-channel RGB image
//! and a 1-channel uncertainty map, both in (0, 1).

use crate::diffcore::{concat, Scalar, Var};
use crate::geometry::CoordinateMap;

use super::{gated_attention, Bound, Result, LEAKY_SLOPE};

/// Decoded frame plus the recurrent state for the next time step.
pub struct DecodeOutput<T: Scalar> {
    /// `[1, 3, H, W]`, in (0, 1).
    pub rgb: Var<T>,
    /// `[1, 1, H, W]`, in (0, 1).
    pub uncertainty: Var<T>,
    /// Per-level attention hidden states, finest first.
    pub hidden: [Var<T>; 3],
}

/// Decodes the aggregated pyramid `agg` (finest first). `prev` carries the
/// previous step's hidden states and the coordinate maps that warp them
/// into the current view; pass `None` at sequence starts.
pub fn decode<T: Scalar>(
    p: &Bound<T>,
    agg: &[Var<T>; 3],
    prev: Option<(&[Var<T>; 3], &[CoordinateMap; 3])>,
) -> Result<DecodeOutput<T>> {
    decode_with(p, agg, prev, true)
}

/// [`decode`] with the self-attention stages switchable, so ablation runs
/// can pass the fused features straight through. With `gsa` off, `prev` is
/// ignored and the returned hidden states are the fused features.
pub fn decode_with<T: Scalar>(
    p: &Bound<T>,
    agg: &[Var<T>; 3],
    prev: Option<(&[Var<T>; 3], &[CoordinateMap; 3])>,
    gsa: bool,
) -> Result<DecodeOutput<T>> {
    let hidden_of = |l: usize| prev.map(|(states, maps)| (&states[l], &maps[l]));
    let stage = |l: usize, x: &Var<T>| -> Result<(Var<T>, Var<T>)> {
        if gsa {
            gated_attention(p, &format!("dec.l{l}"), x, hidden_of(l))
        } else {
            Ok((x.clone(), x.clone()))
        }
    };

    let x2 = p.conv("dec.l2.fuse", &agg[2], 1, 1)?.leaky_relu(LEAKY_SLOPE)?;
    let (g2, z2) = stage(2, &x2)?;

    let fused1 = concat(&[agg[1].clone(), g2.upsample_bilinear(2)?], 1)?;
    let x1 = p.conv("dec.l1.fuse", &fused1, 1, 1)?.leaky_relu(LEAKY_SLOPE)?;
    let (g1, z1) = stage(1, &x1)?;

    let fused0 = concat(&[agg[0].clone(), g1.upsample_bilinear(2)?], 1)?;
    let x0 = p.conv("dec.l0.fuse", &fused0, 1, 1)?.leaky_relu(LEAKY_SLOPE)?;
    let (g0, z0) = stage(0, &x0)?;

    let rgb = p.conv("dec.rgb", &g0, 1, 1)?.sigmoid()?;
    let uncertainty = p.conv("dec.unc", &g0, 1, 1)?.sigmoid()?;
    Ok(DecodeOutput {
        rgb,
        uncertainty,
        hidden: [z0, z1, z2],
    })
}
