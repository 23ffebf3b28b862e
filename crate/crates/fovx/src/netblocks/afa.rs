//! Attention-based fusion of warped feature pyramids across frames.
//!
//! At each pyramid level a shared conv reads one frame's warped features
//! together with its validity mask and emits a single logit map. Logits are
//! normalized with a softmax across frames, so every pixel distributes unit
//! weight over the candidate frames, and the fused features are the
//! weighted sum. The attention maps are returned for inspection.

use crate::diffcore::{concat, Scalar, Var};

use super::{Bound, NetError, Result};

/// Fuses per-frame features `[1, C, h, w]` with masks `[1, 1, h, w]` at
/// pyramid `level`. Returns the fused features and the stacked attention
/// maps `[frames, 1, h, w]`, which are nonnegative and sum to one over the
/// frame axis at every pixel.
pub fn afa_aggregate<T: Scalar>(
    p: &Bound<T>,
    level: usize,
    feats: &[Var<T>],
    masks: &[Var<T>],
) -> Result<(Var<T>, Var<T>)> {
    if feats.is_empty() || feats.len() != masks.len() {
        return Err(NetError::BadBlob {
            name: format!("afa.l{level}"),
            detail: format!(
                "want matching non-empty frame lists, got {} features and {} masks",
                feats.len(),
                masks.len()
            ),
        });
    }
    let mut logits = Vec::with_capacity(feats.len());
    for (feat, mask) in feats.iter().zip(masks) {
        let joined = concat(&[feat.clone(), mask.clone()], 1)?;
        logits.push(p.conv(&format!("afa.l{level}"), &joined, 1, 1)?);
    }
    let attn = concat(&logits, 0)?.softmax(0)?;
    let mut fused: Option<Var<T>> = None;
    for (f, feat) in feats.iter().enumerate() {
        let weighted = attn.slice(0, f, 1)?.mul(feat)?;
        fused = Some(match fused {
            Some(acc) => acc.add(&weighted)?,
            None => weighted,
        });
    }
    Ok((fused.expect("at least one frame"), attn))
}
