//! Perceptual feature distance through a fixed random extractor.

use super::{LossError, Result};
use crate::diffcore::{Scalar, Var};
use crate::netblocks::params::conv_blobs;
use crate::netblocks::{Init, ParamStore, LEAKY_SLOPE};

const STAGE_WIDTHS: [usize; 3] = [8, 16, 24];

/// A frozen three-stage strided conv stack used as a feature space for the
/// perceptual loss. The weights are random but fixed for the life of a run:
/// the same seed always produces the same features, and no gradient ever
/// reaches them.
pub struct PerceptualExtractor {
    store: ParamStore,
}

impl PerceptualExtractor {
    pub fn new(seed: u64) -> Self {
        let mut specs = Vec::new();
        let mut in_ch = 3;
        for (stage, &width) in STAGE_WIDTHS.iter().enumerate() {
            conv_blobs(&mut specs, &format!("perc.s{stage}"), width, in_ch, 3, Init::HeNormal);
            in_ch = width;
        }
        Self { store: ParamStore::init(&specs, seed) }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Stage features of an [N,3,H,W] image, halving resolution per stage.
    /// H and W must be divisible by 8 so every stride lands exactly.
    pub fn features<T: Scalar>(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(LossError::Invalid {
                op: "perceptual_features",
                detail: format!("expected an [N,3,H,W] image, got {s:?}"),
            });
        }
        let bound = self.store.bind(x.tape(), false);
        let mut feats = Vec::with_capacity(STAGE_WIDTHS.len());
        let mut h = x.clone();
        for stage in 0..STAGE_WIDTHS.len() {
            h = bound
                .conv(&format!("perc.s{stage}"), &h, 2, 1)?
                .leaky_relu(LEAKY_SLOPE)?;
            feats.push(h.clone());
        }
        Ok(feats)
    }
}

/// Stage-averaged squared feature distance between output and warped
/// reference, weighted by `1 + M` with the mask average-pooled to each
/// stage's resolution, so out-of-view pixels count double.
pub fn loss_perceptual<T: Scalar>(
    output: &Var<T>,
    warped: &Var<T>,
    mask: &Var<T>,
    extractor: &PerceptualExtractor,
) -> Result<Var<T>> {
    if output.shape() != warped.shape() {
        return Err(LossError::Invalid {
            op: "loss_perceptual",
            detail: format!(
                "shape mismatch: {:?} vs {:?}",
                output.shape(),
                warped.shape()
            ),
        });
    }
    let fo = extractor.features(output)?;
    let fw = extractor.features(warped)?;
    let mut total: Option<Var<T>> = None;
    for (stage, (a, b)) in fo.iter().zip(&fw).enumerate() {
        let dist = a.sub(b)?.sq()?.sum_axes(&[1], true)?;
        let weight = mask.avg_pool(1 << (stage + 1))?.add_scalar(1.0)?;
        let term = dist.mul(&weight)?.mean_all()?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total
        .expect("three stages")
        .mul_scalar(1.0 / STAGE_WIDTHS.len() as f64)?)
}
