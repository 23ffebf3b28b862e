//! Field-of-view extrapolation on synthetic driving scenes.
//!
//! A narrow front-facing camera stream is widened by warping past frames
//! into the current wide view with rigid-motion geometry, aggregating them
//! with a small recurrent attention network, and hallucinating whatever no
//! past frame observed, together with a per-pixel uncertainty estimate.
//!
//! Module map:
//! - [`diffcore`]: tape-based reverse-mode autodiff over dense tensors
//! - [`geometry`]: pinhole projection, coordinate reversal, feature warping
//! - [`scenegen`]: procedural ray-cast scenes and dataset serialization
//! - [`netblocks`]: encoder, attention aggregation, gated decoder, critics
//! - [`losses`]: uncertainty-weighted, perceptual, adversarial, geometric
//! - [`metrics`]: SSIM/PSNR and sparsification analysis
//! - [`pipeline`]: configs, training loop, evaluation, CLI entry points

pub mod diffcore;
pub mod exec;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod netblocks;
pub mod pipeline;
pub mod scenegen;
