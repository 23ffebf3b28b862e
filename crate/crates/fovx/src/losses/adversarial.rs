//! Least-squares adversarial terms and the aggregated generator objective.

use super::{LossConfig, LossError, Result};
use crate::diffcore::{Scalar, Var};

/// Which side of the adversarial game a loss evaluation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanRole {
    Generator,
    Discriminator,
}

fn pooled_weight<T: Scalar>(mask: &Var<T>, scores: &Var<T>) -> Result<Var<T>> {
    let (ms, ss) = (mask.shape(), scores.shape());
    if ms.len() != 4 || ss.len() != 4 || ms[1] != 1 || ss[1] != 1 {
        return Err(LossError::Invalid {
            op: "loss_adversarial",
            detail: format!("mask {ms:?} and scores {ss:?} must be [N,1,H,W] maps"),
        });
    }
    let factor = ms[2] / ss[2];
    if factor == 0
        || ms[2] != ss[2] * factor
        || ms[3] != ss[3] * factor
        || ms[0] != ss[0]
    {
        return Err(LossError::Invalid {
            op: "loss_adversarial",
            detail: format!("mask {ms:?} does not pool onto score map {ss:?}"),
        });
    }
    Ok(mask.avg_pool(factor)?.add_scalar(1.0)?)
}

/// Least-squares GAN objective over patch score maps, weighted by `1 + M`
/// with the mask average-pooled down to the score resolution.
///
/// Discriminator role: `mean[(1+M) * ((real - 1)^2 + fake^2)]`, pushing real
/// patches toward 1 and fake ones toward 0; `real` is required. Generator
/// role: `mean[(1+M) * (fake - 1)^2]`, and passing real scores is rejected
/// since they play no part.
pub fn loss_adversarial<T: Scalar>(
    real: Option<&Var<T>>,
    fake: &Var<T>,
    mask: &Var<T>,
    role: GanRole,
) -> Result<Var<T>> {
    let weight = pooled_weight(mask, fake)?;
    match role {
        GanRole::Discriminator => {
            let real = real.ok_or(LossError::Invalid {
                op: "loss_adversarial",
                detail: "discriminator role needs real scores".into(),
            })?;
            if real.shape() != fake.shape() {
                return Err(LossError::Invalid {
                    op: "loss_adversarial",
                    detail: format!(
                        "real {:?} and fake {:?} score maps must match",
                        real.shape(),
                        fake.shape()
                    ),
                });
            }
            let real_term = real.add_scalar(-1.0)?.sq()?;
            let fake_term = fake.sq()?;
            Ok(real_term.add(&fake_term)?.mul(&weight)?.mean_all()?)
        }
        GanRole::Generator => {
            if real.is_some() {
                return Err(LossError::Invalid {
                    op: "loss_adversarial",
                    detail: "generator role takes no real scores".into(),
                });
            }
            Ok(fake.add_scalar(-1.0)?.sq()?.mul(&weight)?.mean_all()?)
        }
    }
}

/// Full frame-aggregation objective:
/// `lambda1 * L1U + lambda2 * perceptual + adversarial + temporal adversarial`.
pub fn loss_fa_total<T: Scalar>(
    l1u: &Var<T>,
    perceptual: &Var<T>,
    adv_image: &Var<T>,
    adv_temporal: &Var<T>,
    cfg: &LossConfig,
) -> Result<Var<T>> {
    Ok(l1u
        .mul_scalar(cfg.lambda1)?
        .add(&perceptual.mul_scalar(cfg.lambda2)?)?
        .add(adv_image)?
        .add(adv_temporal)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheck, Tape, Tensor};
    use crate::netblocks::params::discriminator_blobs;
    use crate::netblocks::{disc_image, NetConfig, ParamStore};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn perfect_scores_cost_nothing() {
        let tape: Tape<f64> = Tape::new();
        let ones = tape.constant(&Tensor::full(vec![1, 1, 2, 2], 1.0));
        let zeros = tape.constant(&Tensor::zeros(vec![1, 1, 2, 2]));
        let mask = tape.constant(&Tensor::full(vec![1, 1, 8, 8], 1.0));

        let d = loss_adversarial(Some(&ones), &zeros, &mask, GanRole::Discriminator).unwrap();
        assert_eq!(d.item(), 0.0);
        let g = loss_adversarial(None, &ones, &mask, GanRole::Generator).unwrap();
        assert_eq!(g.item(), 0.0);
    }

    #[test]
    fn out_of_view_patches_count_double() {
        let tape: Tape<f64> = Tape::new();
        let fake = tape.constant(&Tensor::full(vec![1, 1, 2, 2], 0.25));
        let ones = tape.constant(&Tensor::full(vec![1, 1, 8, 8], 1.0));
        let zeros = tape.constant(&Tensor::zeros(vec![1, 1, 8, 8]));
        let weighted = loss_adversarial(None, &fake, &ones, GanRole::Generator).unwrap();
        let plain = loss_adversarial(None, &fake, &zeros, GanRole::Generator).unwrap();
        assert!((weighted.item() - 2.0 * plain.item()).abs() < 1e-15);
        assert!((plain.item() - 0.75 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn role_mismatch_is_rejected() {
        let tape: Tape<f64> = Tape::new();
        let scores = tape.constant(&Tensor::full(vec![1, 1, 2, 2], 0.5));
        let mask = tape.constant(&Tensor::full(vec![1, 1, 8, 8], 1.0));
        assert!(matches!(
            loss_adversarial(None, &scores, &mask, GanRole::Discriminator),
            Err(LossError::Invalid { .. })
        ));
        assert!(matches!(
            loss_adversarial(Some(&scores), &scores, &mask, GanRole::Generator),
            Err(LossError::Invalid { .. })
        ));
        // Mask that does not pool evenly onto the score grid.
        let ragged = tape.constant(&Tensor::full(vec![1, 1, 9, 8], 1.0));
        assert!(loss_adversarial(None, &scores, &ragged, GanRole::Generator).is_err());
    }

    #[test]
    fn the_two_roles_pull_disc_parameters_in_opposite_directions() {
        // Freeze one batch, give the critic near-constant scores around 0.5
        // (tiny weights plus bias 0.5), and compare parameter gradients of
        // the two roles: s^2 pushes scores down, (s-1)^2 pushes them up, so
        // the gradient vectors must oppose.
        let mut store = ParamStore::init(&discriminator_blobs(&NetConfig::tiny()), 41);
        store
            .set("disc_q.out.b", Tensor::full(vec![1], 0.5))
            .unwrap();
        store.for_each_mut(|name, t| {
            if name.starts_with("disc_q") && name.ends_with(".w") {
                for v in t.data_mut() {
                    *v *= 0.05;
                }
            }
        });

        let mut rng = StdRng::seed_from_u64(42);
        let img = Tensor::rand_uniform(vec![1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let mask = Tensor::full(vec![1, 1, 16, 16], 1.0);

        let grads_for = |role: GanRole| {
            let tape: Tape<f64> = Tape::new();
            let bound = store.bind(&tape, true);
            let scores = disc_image(&bound, &tape.constant(&img), &tape.constant(&mask)).unwrap();
            let m = tape.constant(&mask);
            let real = tape.constant(&Tensor::full(scores.shape().to_vec(), 1.0));
            let loss = match role {
                GanRole::Discriminator => {
                    loss_adversarial(Some(&real), &scores, &m, role).unwrap()
                }
                GanRole::Generator => loss_adversarial(None, &scores, &m, role).unwrap(),
            };
            loss.backward().unwrap();
            let mut flat = Vec::new();
            for (name, grad) in bound.grads() {
                if name.starts_with("disc_q") {
                    flat.extend(grad.expect("disc params reached").data().to_vec());
                }
            }
            flat
        };

        let d = grads_for(GanRole::Discriminator);
        let g = grads_for(GanRole::Generator);
        assert_eq!(d.len(), g.len());
        let dot: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!(dot < 0.0, "gradient dot product {dot} should be negative");
    }

    #[test]
    fn total_scales_each_term_by_its_weight() {
        let tape: Tape<f64> = Tape::new();
        let zero = tape.constant(&Tensor::scalar(0.0));
        let cfg = LossConfig::default();
        let total = loss_fa_total(&zero, &zero, &zero, &zero, &cfg).unwrap();
        assert_eq!(total.item(), 0.0);

        let (a, b, c, d) = (0.37, 0.11, 0.83, 0.29);
        let l1u = tape.constant(&Tensor::scalar(a));
        let perc = tape.constant(&Tensor::scalar(b));
        let adv = tape.constant(&Tensor::scalar(c));
        let advt = tape.constant(&Tensor::scalar(d));
        let total = loss_fa_total(&l1u, &perc, &adv, &advt, &cfg).unwrap().item();
        assert!((total - (3.0 * a + 10.0 * b + c + d)).abs() < 1e-12);

        // Doubling lambda1 adds exactly one more lambda1 * L1U share.
        let doubled = LossConfig { lambda1: 6.0, ..cfg.clone() };
        let more = loss_fa_total(&l1u, &perc, &adv, &advt, &doubled).unwrap().item();
        assert!((more - total - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(43);
        let real = Tensor::rand_uniform(vec![1, 1, 2, 3], 0.0, 1.5, &mut rng);
        let fake = Tensor::rand_uniform(vec![1, 1, 2, 3], -0.5, 1.0, &mut rng);
        let m_data: Vec<f64> = (0..96).map(|i| (i % 2 == 0) as u8 as f64).collect();
        let mask = Tensor::new(vec![1, 1, 8, 12], m_data).unwrap();

        let check = GradCheck { max_probes: 12, ..GradCheck::default() };
        let disc = grad_check(
            &check,
            &[("real", real.clone()), ("fake", fake.clone())],
            |tape, inputs| {
                let m = tape.constant(&mask);
                Ok(
                    loss_adversarial(Some(&inputs[0]), &inputs[1], &m, GanRole::Discriminator)
                        .unwrap(),
                )
            },
        )
        .unwrap();
        assert!(disc.passed(), "discriminator: {disc}");

        let gen = grad_check(&check, &[("fake", fake)], |tape, inputs| {
            let m = tape.constant(&mask);
            Ok(loss_adversarial(None, &inputs[0], &m, GanRole::Generator).unwrap())
        })
        .unwrap();
        assert!(gen.passed(), "generator: {gen}");
    }
}
