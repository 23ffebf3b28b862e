//! Evaluation metrics: windowed SSIM, masked MSE/PSNR, sparsification
//! curves with AUSE, and the non-learned edge-map uncertainty baseline.
//!
//! Everything here works on plain tensors (no tape) and accumulates in
//! f64, so metric values are independent of the training dtype.

mod sparsify;
mod ssim;

pub use sparsify::{ause, edge_uncertainty_baseline, sparsification, SparsificationCurve};
pub use ssim::{masked_mse, mse, psnr, ssim};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, MetricsError>;
