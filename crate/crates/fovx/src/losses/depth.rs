//! Scale-invariant regression loss on log depth.

use super::{LossError, Result};
use crate::diffcore::{Scalar, Var};

/// Variance of the masked log-depth residual: with `d = pred - gt` on
/// log depths and the mean taken over mask-selected pixels,
/// `mean(d^2) - mean(d)^2`. A global scale on the predicted depth shifts
/// every log by the same constant and cancels exactly. The mask carries no
/// gradient; an empty mask is rejected.
pub fn loss_depth_scale_invariant<T: Scalar>(
    pred_log: &Var<T>,
    gt_log: &Var<T>,
    mask: &Var<T>,
) -> Result<Var<T>> {
    if pred_log.shape() != gt_log.shape() || pred_log.shape() != mask.shape() {
        return Err(LossError::Invalid {
            op: "loss_depth_scale_invariant",
            detail: format!(
                "shapes must match: pred {:?}, gt {:?}, mask {:?}",
                pred_log.shape(),
                gt_log.shape(),
                mask.shape()
            ),
        });
    }
    let count = mask.with_data(|m| m.iter().filter(|v| **v != T::zero()).count());
    if count == 0 {
        return Err(LossError::Invalid {
            op: "loss_depth_scale_invariant",
            detail: "mask selects no pixels".into(),
        });
    }
    let scale = 1.0 / count as f64;
    let diff = pred_log.sub(gt_log)?.mul(mask)?;
    let mean = diff.sum_all()?.mul_scalar(scale)?;
    let mean_sq = diff.sq()?.sum_all()?.mul_scalar(scale)?;
    Ok(mean_sq.sub(&mean.sq()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheck, Tape, Tensor};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn binary_mask(n: usize, keep: impl Fn(usize) -> bool) -> Tensor<f64> {
        Tensor::new(
            vec![1, 1, 4, n / 4],
            (0..n).map(|i| keep(i) as u8 as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_prediction_costs_nothing() {
        let mut rng = StdRng::seed_from_u64(61);
        let tape: Tape<f64> = Tape::new();
        let gt = tape.constant(&Tensor::rand_uniform(vec![1, 1, 4, 5], -1.0, 3.0, &mut rng));
        let mask = tape.constant(&binary_mask(20, |i| i % 2 == 0));
        let loss = loss_depth_scale_invariant(&gt, &gt, &mask).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn global_depth_scale_cancels() {
        let mut rng = StdRng::seed_from_u64(62);
        let tape: Tape<f64> = Tape::new();
        let gt_depth = Tensor::rand_uniform(vec![1, 1, 4, 5], 0.5, 20.0, &mut rng);
        let logs = |scale: f64| {
            Tensor::new(
                vec![1, 1, 4, 5],
                gt_depth.data().iter().map(|d| (d * scale).ln()).collect(),
            )
            .unwrap()
        };
        let mask = tape.constant(&Tensor::full(vec![1, 1, 4, 5], 1.0));
        let gt = tape.constant(&logs(1.0));
        let pred = tape.constant(&logs(2.7));
        let loss = loss_depth_scale_invariant(&pred, &gt, &mask).unwrap();
        assert!(loss.item().abs() < 1e-12, "{}", loss.item());
    }

    #[test]
    fn matches_masked_variance_loop() {
        let mut rng = StdRng::seed_from_u64(63);
        let pred = Tensor::rand_uniform(vec![1, 1, 4, 6], -1.0, 2.0, &mut rng);
        let gt = Tensor::rand_uniform(vec![1, 1, 4, 6], -1.0, 2.0, &mut rng);
        let mask = binary_mask(24, |i| i % 3 != 1);

        let tape: Tape<f64> = Tape::new();
        let got = loss_depth_scale_invariant(
            &tape.constant(&pred),
            &tape.constant(&gt),
            &tape.constant(&mask),
        )
        .unwrap()
        .item();

        let kept: Vec<f64> = pred
            .data()
            .iter()
            .zip(gt.data())
            .zip(mask.data())
            .filter(|(_, m)| **m != 0.0)
            .map(|((p, g), _)| p - g)
            .collect();
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let want = kept.iter().map(|d| d * d).sum::<f64>() / n - mean * mean;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn empty_mask_is_rejected() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.constant(&Tensor::full(vec![1, 1, 2, 2], 1.0));
        let mask = tape.constant(&Tensor::zeros(vec![1, 1, 2, 2]));
        assert!(matches!(
            loss_depth_scale_invariant(&x, &x, &mask),
            Err(LossError::Invalid { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(64);
        let pred = Tensor::rand_uniform(vec![1, 1, 4, 5], -1.0, 2.0, &mut rng);
        let gt = Tensor::rand_uniform(vec![1, 1, 4, 5], -1.0, 2.0, &mut rng);
        let mask = binary_mask(20, |i| i % 4 != 2);

        let check = GradCheck { max_probes: 20, ..GradCheck::default() };
        let report = grad_check(&check, &[("pred", pred), ("gt", gt)], |tape, inputs| {
            let m = tape.constant(&mask);
            Ok(loss_depth_scale_invariant(&inputs[0], &inputs[1], &m).unwrap())
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
