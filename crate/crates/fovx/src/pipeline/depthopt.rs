//! Direct photometric optimization of a per-pixel inverse depth map.
//!
//! The estimate is a single trainable blob updated by Adam against the
//! coordinate-generation objective: masked photometric error of rigid
//! reprojections into one or more source frames plus edge-aware
//! smoothness. After every update the map is clamped to a physically
//! plausible disparity band so the reprojection stays in front of the
//! camera. A run aborts as numerically diverged when the loss rises for
//! too many consecutive steps.

use crate::diffcore::Tensor;
use crate::geometry::{Intrinsics, Pose, NEAR_PLANE};
use crate::losses::{loss_cg, LossConfig};
use crate::netblocks::ParamStore;

use super::optim::Adam;
use super::{data_err, numeric_err, Result};

/// Lower clamp on the estimated disparity (1/m); keeps depth below 1 km.
pub const MIN_DISPARITY: f32 = 1e-3;

/// Knobs of one optimization run.
#[derive(Clone, Debug)]
pub struct DepthOptConfig {
    /// Adam step size.
    pub lr: f64,
    /// Update count.
    pub steps: usize,
    /// Consecutive loss increases tolerated before aborting.
    pub divergence_patience: usize,
    /// Photometric/smoothness weighting; `lambda_s` is the only field the
    /// objective reads besides `alpha`.
    pub loss: LossConfig,
}

impl Default for DepthOptConfig {
    fn default() -> Self {
        Self {
            // Adam's normalized steps move every engaged pixel by about
            // the step size, so this is sized to desk-scale disparities.
            lr: 1e-3,
            steps: 500,
            divergence_patience: 50,
            loss: LossConfig::default(),
        }
    }
}

/// Optimized map plus the loss trajectory that produced it.
#[derive(Clone, Debug)]
pub struct DepthOptResult {
    /// Estimated inverse depth, `[H,W]`, within the clamp band.
    pub inverse_depth: Tensor<f32>,
    /// Loss before each update, then one final evaluation, so the last
    /// entry scores the returned map.
    pub losses: Vec<f64>,
}

/// Fits an inverse depth map for `target` by gradient descent on the
/// photometric consistency against `sources`, each given with the rigid
/// pose from the target camera into its own.
pub fn optimize_depth_cg(
    target: &Tensor<f32>,
    sources: &[(Tensor<f32>, Pose)],
    intr: &Intrinsics,
    init_inverse_depth: &Tensor<f32>,
    cfg: &DepthOptConfig,
) -> Result<DepthOptResult> {
    let ds = init_inverse_depth.shape().to_vec();
    if ds.len() != 2 {
        return Err(data_err(format!("initial inverse depth must be [H,W], got {ds:?}")));
    }
    let (h, w) = (ds[0], ds[1]);
    if target.shape() != [3, h, w] {
        return Err(data_err(format!(
            "target frame {:?} does not cover a {h}x{w} depth map",
            target.shape()
        )));
    }
    if sources.is_empty() {
        return Err(data_err("need at least one source frame"));
    }
    for (src, _) in sources {
        if src.shape() != target.shape() {
            return Err(data_err(format!(
                "source frame {:?} does not match target {:?}",
                src.shape(),
                target.shape()
            )));
        }
    }
    let max_disp = (1.0 / NEAR_PLANE) as f32;
    if init_inverse_depth
        .data()
        .iter()
        .any(|d| !d.is_finite() || *d < MIN_DISPARITY || *d > max_disp)
    {
        return Err(data_err(format!(
            "initial inverse depth must lie within [{MIN_DISPARITY}, {max_disp}]"
        )));
    }

    let mut store = ParamStore::from_blobs(
        [(
            "disp".to_string(),
            init_inverse_depth.clone().reshape(vec![1, 1, h, w])?,
        )]
        .into(),
    );
    let mut opt = Adam::new(&store, cfg.lr, 0.9, 0.999);

    let eval = |store: &ParamStore, with_grad: bool| -> Result<(f64, Option<Tensor<f32>>)> {
        let tape = crate::diffcore::Tape::new();
        let bound = store.bind(&tape, with_grad);
        let disp = bound.var("disp")?;
        let tgt = tape.constant(&target.clone().reshape(vec![1, 3, h, w])?);
        let srcs: Vec<_> = sources
            .iter()
            .map(|(s, p)| Ok((tape.constant(&s.clone().reshape(vec![1, 3, h, w])?), *p)))
            .collect::<Result<_>>()?;
        let loss = loss_cg(&disp, &tgt, &srcs, intr, &cfg.loss)?;
        let value = f64::from(loss.item());
        if !with_grad {
            return Ok((value, None));
        }
        loss.backward()?;
        let grad = disp
            .grad()
            .ok_or_else(|| numeric_err("inverse depth received no gradient"))?;
        Ok((value, Some(grad)))
    };

    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut rising = 0usize;
    for step in 0..cfg.steps {
        let (value, grad) = eval(&store, true)?;
        if !value.is_finite() {
            return Err(numeric_err(format!("non-finite loss at step {step}")));
        }
        if losses.last().is_some_and(|prev| value > *prev) {
            rising += 1;
            if rising >= cfg.divergence_patience {
                return Err(numeric_err(format!(
                    "loss rose for {rising} consecutive steps (step {step}, loss {value:.6})"
                )));
            }
        } else {
            rising = 0;
        }
        losses.push(value);
        let grads = [("disp".to_string(), grad.expect("gradient requested"))].into();
        opt.step(&mut store, grads)?;
        store.for_each_mut(|_, t| {
            for v in t.data_mut() {
                *v = v.clamp(MIN_DISPARITY, max_disp);
            }
        });
    }
    let (final_loss, _) = eval(&store, false)?;
    losses.push(final_loss);

    let inverse_depth = store.get("disp")?.clone().reshape(vec![h, w])?;
    Ok(DepthOptResult { inverse_depth, losses })
}
