//! Combined objective for the coordinate-generation side: masked
//! photometric error of rigid reprojections plus weighted smoothness.

use super::photometric::{auto_mask, loss_photometric, loss_smooth};
use super::{LossConfig, LossError, Result};
use crate::diffcore::{Scalar, Tensor, Var};
use crate::geometry::{rigid_resample_coords, Intrinsics, Pose};

/// Photometric consistency of a positive inverse-depth map against one or
/// more source frames, each warped into the target view through the rigid
/// motion given by its relative pose (target camera to source camera).
/// The per-pixel auto-mask is recomputed from current values, so it gates
/// which pixels contribute without feeding gradients back; the smoothness
/// term is skipped entirely at `lambda_s` = 0. Differentiable with respect
/// to the inverse depth, which desk-scale runs optimize directly.
pub fn loss_cg<T: Scalar>(
    disp: &Var<T>,
    target: &Var<T>,
    sources: &[(Var<T>, Pose)],
    intr: &Intrinsics,
    cfg: &LossConfig,
) -> Result<Var<T>> {
    if sources.is_empty() {
        return Err(LossError::Invalid {
            op: "loss_cg",
            detail: "need at least one source frame".into(),
        });
    }
    let ds = disp.shape();
    if ds.len() != 4 || ds[0] != 1 || ds[1] != 1 {
        return Err(LossError::Invalid {
            op: "loss_cg",
            detail: format!("inverse depth must be [1,1,H,W], got {ds:?}"),
        });
    }
    if disp.with_data(|d| d.iter().any(|v| *v <= T::zero())) {
        return Err(LossError::Invalid {
            op: "loss_cg",
            detail: "inverse depth must be strictly positive".into(),
        });
    }

    let ones = disp.tape().constant(&Tensor::full(ds.to_vec(), T::one()));
    let depth = ones.div(disp)?;
    let mut warped = Vec::with_capacity(sources.len());
    for (src, pose) in sources {
        let coords = rigid_resample_coords(&depth, intr, pose)?;
        warped.push(src.grid_sample(&coords)?);
    }

    let raw: Vec<Tensor<T>> = sources.iter().map(|(src, _)| src.value()).collect();
    let resampled: Vec<Tensor<T>> = warped.iter().map(Var::value).collect();
    let nu = auto_mask(&target.value(), &raw, &resampled, cfg)?;
    let nu = target.tape().constant(&nu);

    let photo = loss_photometric(target, &warped, &nu, cfg)?;
    if cfg.lambda_s == 0.0 {
        return Ok(photo);
    }
    let smooth = loss_smooth(disp, target)?;
    Ok(photo.add(&smooth.mul_scalar(cfg.lambda_s)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheck, Tape};
    use crate::scenegen::{Scene, SceneSpec};

    fn toy_scene() -> Scene {
        let spec = SceneSpec {
            seed: 51,
            width: 64,
            height: 32,
            narrow_ratio: 0.5,
            steps: 8,
            speed: 0.25,
            yaw_rate: 0.01,
            pitch_amp: 0.0,
            box_count: 6,
            past_frames: 2,
        };
        Scene::build(&spec).unwrap()
    }

    /// Target frame plus neighbours as f64 tensors ready for the loss.
    fn frames(scene: &Scene, t: usize) -> (Tensor<f64>, Tensor<f64>, Vec<(Tensor<f64>, Pose)>) {
        let as_image = |rgb: &Tensor<f32>| {
            let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
            Tensor::new(
                vec![1, 3, h, w],
                rgb.data().iter().map(|v| *v as f64).collect(),
            )
            .unwrap()
        };
        let target = scene.render(t).unwrap();
        let (h, w) = (target.depth.shape()[0], target.depth.shape()[1]);
        let disp = Tensor::new(
            vec![1, 1, h, w],
            target.depth.data().iter().map(|z| 1.0 / *z as f64).collect(),
        )
        .unwrap();
        let mut sources = Vec::new();
        for s in [t - 1, t + 1] {
            let frame = scene.render(s).unwrap();
            let relative = Pose::relative(&target.pose, &frame.pose);
            sources.push((as_image(&frame.rgb), relative));
        }
        (disp, as_image(&target.rgb), sources)
    }

    #[test]
    fn ground_truth_depth_sits_at_the_photometric_floor() {
        let scene = toy_scene();
        let (disp, target, sources) = frames(&scene, 4);
        let tape: Tape<f64> = Tape::new();
        let src_vars: Vec<(crate::diffcore::Var<f64>, Pose)> = sources
            .iter()
            .map(|(img, pose)| (tape.constant(img), *pose))
            .collect();
        let loss = loss_cg(
            &tape.constant(&disp),
            &tape.constant(&target),
            &src_vars,
            &scene.intrinsics,
            &LossConfig::default(),
        )
        .unwrap()
        .item();
        assert!(loss < 0.01, "ground-truth reprojection loss {loss}");
    }

    #[test]
    fn perturbed_depth_costs_strictly_more() {
        let scene = toy_scene();
        let (disp, target, sources) = frames(&scene, 4);
        let deeper = Tensor::new(
            vec![1, 1, 32, 64],
            disp.data().iter().map(|d| d / 1.2).collect(),
        )
        .unwrap();
        let tape: Tape<f64> = Tape::new();
        let src_vars: Vec<(crate::diffcore::Var<f64>, Pose)> = sources
            .iter()
            .map(|(img, pose)| (tape.constant(img), *pose))
            .collect();
        let t = tape.constant(&target);
        let cfg = LossConfig::default();
        let at = |d: &Tensor<f64>| {
            loss_cg(&tape.constant(d), &t, &src_vars, &scene.intrinsics, &cfg)
                .unwrap()
                .item()
        };
        let (clean, off) = (at(&disp), at(&deeper));
        assert!(
            off > clean,
            "depth off by 20% should cost more: {off} vs {clean}"
        );
    }

    #[test]
    fn zero_smoothness_weight_leaves_only_the_masked_photometric_term() {
        let scene = toy_scene();
        let (disp, target, sources) = frames(&scene, 4);
        let cfg = LossConfig { lambda_s: 0.0, ..LossConfig::default() };

        let tape: Tape<f64> = Tape::new();
        let d = tape.constant(&disp);
        let t = tape.constant(&target);
        let src_vars: Vec<(crate::diffcore::Var<f64>, Pose)> = sources
            .iter()
            .map(|(img, pose)| (tape.constant(img), *pose))
            .collect();
        let combined = loss_cg(&d, &t, &src_vars, &scene.intrinsics, &cfg)
            .unwrap()
            .item();

        // Rebuild the same reprojection by hand and stop at the masked
        // photometric mean.
        let ones = tape.constant(&Tensor::full(vec![1, 1, 32, 64], 1.0));
        let depth = ones.div(&d).unwrap();
        let mut warped = Vec::new();
        for (src, pose) in &src_vars {
            let coords = rigid_resample_coords(&depth, &scene.intrinsics, pose).unwrap();
            warped.push(src.grid_sample(&coords).unwrap());
        }
        let raw: Vec<Tensor<f64>> = src_vars.iter().map(|(s, _)| s.value()).collect();
        let res: Vec<Tensor<f64>> = warped.iter().map(|w| w.value()).collect();
        let nu = auto_mask(&target, &raw, &res, &cfg).unwrap();
        let photo = loss_photometric(&t, &warped, &tape.constant(&nu), &cfg)
            .unwrap()
            .item();
        assert_eq!(combined, photo);
    }

    #[test]
    fn rejects_empty_sources_and_nonpositive_depth() {
        let scene = toy_scene();
        let (disp, target, sources) = frames(&scene, 4);
        let tape: Tape<f64> = Tape::new();
        let t = tape.constant(&target);
        let cfg = LossConfig::default();
        assert!(matches!(
            loss_cg(&tape.constant(&disp), &t, &[], &scene.intrinsics, &cfg),
            Err(LossError::Invalid { op: "loss_cg", .. })
        ));
        let bad = tape.constant(&Tensor::zeros(vec![1, 1, 32, 64]));
        let src_vars: Vec<(crate::diffcore::Var<f64>, Pose)> = sources
            .iter()
            .map(|(img, pose)| (tape.constant(img), *pose))
            .collect();
        assert!(loss_cg(&bad, &t, &src_vars, &scene.intrinsics, &cfg).is_err());
    }

    #[test]
    fn gradients_reach_the_inverse_depth() {
        let scene = toy_scene();
        let (disp, target, sources) = frames(&scene, 4);
        // Move off the rendered optimum so reprojection coordinates sit in
        // generic positions, away from bilinear kinks.
        let off = Tensor::new(
            vec![1, 1, 32, 64],
            disp.data()
                .iter()
                .enumerate()
                .map(|(i, d)| d * (1.05 + 0.01 * (i % 7) as f64))
                .collect(),
        )
        .unwrap();

        let check = GradCheck { max_probes: 8, ..GradCheck::default() };
        let report = grad_check(&check, &[("disp", off)], |tape, inputs| {
            let t = tape.constant(&target);
            let src_vars: Vec<(crate::diffcore::Var<f64>, Pose)> = sources
                .iter()
                .map(|(img, pose)| (tape.constant(img), *pose))
                .collect();
            Ok(
                loss_cg(&inputs[0], &t, &src_vars, &scene.intrinsics, &LossConfig::default())
                    .unwrap(),
            )
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
