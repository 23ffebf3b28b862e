//! Training objectives.
//!
//! Two groups: the coordinate-generation side (photometric error with an
//! auto-mask, edge-aware smoothness, and their combination [`loss_cg`] for
//! direct depth optimization) and the frame-aggregation side (the
//! uncertainty-weighted reconstruction [`loss_l1u`], a perceptual distance
//! through a fixed random extractor, least-squares adversarial terms for
//! the image and temporal critics, and their weighted total
//! [`loss_fa_total`]). A scale-invariant log-depth loss supports the depth
//! extrapolation mode. All losses are pure tape functions, nonnegative,
//! and zero exactly at their documented minimum.

mod adversarial;
mod cg;
mod depth;
mod perceptual;
mod photometric;
mod uncertainty;

pub use adversarial::{loss_adversarial, loss_fa_total, GanRole};
pub use cg::loss_cg;
pub use depth::loss_depth_scale_invariant;
pub use perceptual::{loss_perceptual, PerceptualExtractor};
pub use photometric::{auto_mask, loss_photometric, loss_smooth, pe};
pub use uncertainty::loss_l1u;

use crate::diffcore::DiffError;
use crate::geometry::GeomError;
use crate::netblocks::NetError;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Loss weights and constants.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// SSIM share of the photometric error.
    pub alpha: f64,
    /// Smoothness weight inside [`loss_cg`].
    pub lambda_s: f64,
    /// Reconstruction weight inside [`loss_fa_total`].
    pub lambda1: f64,
    /// Perceptual weight inside [`loss_fa_total`].
    pub lambda2: f64,
    /// Clamp for predicted uncertainty, bounding the 1/U factor.
    pub uncertainty_eps: f64,
    /// Seed of the fixed random perceptual extractor.
    pub perceptual_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            lambda_s: 1e-3,
            lambda1: 3.0,
            lambda2: 10.0,
            uncertainty_eps: 1e-4,
            perceptual_seed: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.lambda_s, self.lambda1, self.lambda2];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::Invalid {
                op: "loss_config",
                detail: "weights must be finite and nonnegative".into(),
            });
        }
        if !(self.uncertainty_eps > 0.0 && self.uncertainty_eps < 0.01) {
            return Err(LossError::Invalid {
                op: "loss_config",
                detail: format!("uncertainty_eps {} outside (0, 0.01)", self.uncertainty_eps),
            });
        }
        Ok(())
    }
}
