//! Orchestration: configuration, the recurrent forward pass, adversarial
//! training, direct depth optimization, evaluation, and image export.
//!
//! A run is described by a plain-text key=value [`RunConfig`]. Training
//! ([`train_run`]) walks scene sequences in a deterministic schedule,
//! threading a [`RolloutState`] through each sequence so the two most
//! recent inputs can be replaced by previous outputs, and alternates one
//! discriminator update with one generator update per batch. Everything is
//! reproducible: the same config and seed give bit-identical checkpoints,
//! and a resumed run continues the interrupted loss curve.
//!
//! Errors carry an exit code grouping: bad configuration (2), missing or
//! corrupt data (3), and numeric failures such as a NaN loss or a diverging
//! optimization (4).

mod config;
mod depthopt;
mod evaluate;
mod forward;
mod gradcheck;
mod hallucinate;
mod optim;
mod train;

pub use config::{Ablation, DepthSource, RunConfig, TEACHER_FORCING_FRAC};
pub use depthopt::{optimize_depth_cg, DepthOptConfig, DepthOptResult};
pub use evaluate::{evaluate, sparsify_dir, EvalSummary};
pub use forward::{forward_step, RolloutState, StepOutput};
pub use gradcheck::{gradient_suite, SuiteCheck, DEFAULT_SEEDS};
pub use hallucinate::{hallucinate, read_gray_png, read_rgb_png, write_gray_png, write_rgb_png};
pub use optim::{clip_grad_norm, Adam, GRAD_CLIP};
pub use train::{
    load_model, net_config_from_blobs, train_run, StepLosses, TrainReport, Trainer,
    LOSS_CSV_HEADER,
};

use crate::diffcore::DiffError;
use crate::geometry::GeomError;
use crate::losses::LossError;
use crate::metrics::MetricsError;
use crate::netblocks::NetError;
use crate::scenegen::SceneError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Unparseable or inconsistent configuration (exit code 2).
    #[error("config: {detail}")]
    Config { detail: String },
    /// Missing, corrupt, or mismatched datasets and checkpoints (exit code 3).
    #[error("data: {detail}")]
    Data { detail: String },
    /// NaN losses, diverging optimizations, numeric misuse (exit code 4).
    #[error("numeric: {detail}")]
    Numeric { detail: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl PipelineError {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Data { .. } | PipelineError::Scene(_) | PipelineError::Net(_) => 3,
            PipelineError::Numeric { .. }
            | PipelineError::Diff(_)
            | PipelineError::Geom(_)
            | PipelineError::Loss(_)
            | PipelineError::Metrics(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn config_err(detail: impl Into<String>) -> PipelineError {
    PipelineError::Config { detail: detail.into() }
}

fn data_err(detail: impl Into<String>) -> PipelineError {
    PipelineError::Data { detail: detail.into() }
}

fn numeric_err(detail: impl Into<String>) -> PipelineError {
    PipelineError::Numeric { detail: detail.into() }
}
