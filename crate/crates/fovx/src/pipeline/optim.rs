//! Adaptive-moment gradient descent over a named parameter store.
//!
//! Moments live in blob maps keyed like the parameters they track, so an
//! optimizer serializes into the same checkpoint format as the model and a
//! resumed run continues with bit-identical state. Updates walk blobs in
//! name order and elements in storage order, keeping every run
//! reproducible.

use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::netblocks::ParamStore;

use super::{data_err, numeric_err, Result};

/// Global gradient-norm ceiling applied before every update.
pub const GRAD_CLIP: f64 = 10.0;

const EPS: f32 = 1e-8;

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let mut sum = 0.0f64;
    for g in grads.values() {
        for &v in g.data() {
            sum += (v as f64) * (v as f64);
        }
    }
    let norm = sum.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One optimizer instance per parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Completed updates, for bias correction.
    pub t: u64,
    m: BTreeMap<String, Tensor<f32>>,
    v: BTreeMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Adam {
        let zeros = |store: &ParamStore| {
            store
                .blobs()
                .iter()
                .map(|(name, t)| (name.clone(), Tensor::full(t.shape().to_vec(), 0.0f32)))
                .collect()
        };
        Adam {
            lr,
            beta1,
            beta2,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Applies one clipped update. `grads` must cover every parameter blob;
    /// missing entries mean the forward pass never touched that blob, which
    /// is a wiring bug surfaced as an error.
    pub fn step(&mut self, params: &mut ParamStore, mut grads: BTreeMap<String, Tensor<f32>>) -> Result<()> {
        clip_grad_norm(&mut grads, GRAD_CLIP);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let rate = (self.lr * bc2.sqrt() / bc1) as f32;
        let mut missing = Vec::new();
        params.for_each_mut(|name, value| {
            let Some(g) = grads.get(name) else {
                missing.push(name.to_string());
                return;
            };
            let m = self.m.get_mut(name).expect("moment blob tracks parameter blob");
            let v = self.v.get_mut(name).expect("moment blob tracks parameter blob");
            for i in 0..value.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                value.data_mut()[i] -= rate * mi / (vi.sqrt() + EPS);
            }
        });
        if !missing.is_empty() {
            return Err(numeric_err(format!(
                "update is missing gradients for {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    /// Serializes moments and the step counter under `prefix` into `out`.
    pub fn save(&self, prefix: &str, out: &mut BTreeMap<String, Tensor<f32>>) {
        for (name, t) in &self.m {
            out.insert(format!("{prefix}.m.{name}"), t.clone());
        }
        for (name, t) in &self.v {
            out.insert(format!("{prefix}.v.{name}"), t.clone());
        }
        out.insert(
            format!("{prefix}.t"),
            Tensor::new(vec![2], vec![(self.t >> 32) as f32, (self.t & 0xffff_ffff) as f32])
                .expect("counter shape"),
        );
    }

    /// Restores state saved by [`Adam::save`]; every tracked blob must be
    /// present under `prefix`.
    pub fn load(&mut self, prefix: &str, blobs: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        let fetch = |key: String| {
            blobs
                .get(&key)
                .cloned()
                .ok_or_else(|| data_err(format!("checkpoint is missing optimizer blob '{key}'")))
        };
        for (name, slot) in self.m.iter_mut() {
            *slot = fetch(format!("{prefix}.m.{name}"))?;
        }
        for (name, slot) in self.v.iter_mut() {
            *slot = fetch(format!("{prefix}.v.{name}"))?;
        }
        let t = fetch(format!("{prefix}.t"))?;
        if t.numel() != 2 {
            return Err(data_err(format!("optimizer counter '{prefix}.t' has wrong shape")));
        }
        self.t = ((t.data()[0] as u64) << 32) | (t.data()[1] as u64);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netblocks::params::conv_blobs;
    use crate::netblocks::Init;

    fn single_param(value: f32) -> ParamStore {
        let mut blobs = BTreeMap::new();
        blobs.insert("p".to_string(), Tensor::new(vec![1], vec![value]).unwrap());
        ParamStore::from_blobs(blobs)
    }

    fn grad_of(value: f32) -> BTreeMap<String, Tensor<f32>> {
        let mut g = BTreeMap::new();
        g.insert("p".to_string(), Tensor::new(vec![1], vec![value]).unwrap());
        g
    }

    #[test]
    fn matches_hand_computed_trajectory() {
        // One scalar parameter, constant gradient 2, lr 0.1, betas (0.5, 0.9):
        // bias-corrected Adam moves by lr*m_hat/(sqrt(v_hat)+eps) each step,
        // and with a constant gradient m_hat = 2 and v_hat = 4 exactly.
        let mut p = single_param(1.0);
        let mut opt = Adam::new(&p, 0.1, 0.5, 0.9);
        let mut expect = 1.0f64;
        for _ in 0..3 {
            opt.step(&mut p, grad_of(2.0)).unwrap();
            expect -= 0.1 * 2.0 / (4.0f64.sqrt() + EPS as f64);
            let got = p.get("p").unwrap().data()[0] as f64;
            assert!((got - expect).abs() < 1e-6, "got {got}, want {expect}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let specs = {
            let mut s = Vec::new();
            conv_blobs(&mut s, "conv", 4, 3, 3, Init::HeNormal);
            s
        };
        let mut p = ParamStore::init(&specs, 9);
        let before = p.blobs().clone();
        let mut opt = Adam::new(&p, 0.0, 0.5, 0.999);
        for step in 0..10 {
            let grads = before
                .iter()
                .map(|(name, t)| {
                    let g = Tensor::from_fn(t.shape().to_vec(), |i| (i + step) as f32 * 0.01 - 0.3);
                    (name.clone(), g)
                })
                .collect();
            opt.step(&mut p, grads).unwrap();
        }
        for (name, t) in p.blobs() {
            assert_eq!(t.data(), before[name].data(), "{name} drifted");
        }
        assert_eq!(opt.t, 10);
    }

    #[test]
    fn clipping_rescales_to_the_ceiling_and_spares_small_gradients() {
        let mut big = grad_of(0.0);
        big.insert("q".to_string(), Tensor::new(vec![2], vec![30.0, 40.0]).unwrap());
        let norm = clip_grad_norm(&mut big, 10.0);
        assert_eq!(norm, 50.0);
        let clipped: f64 = big
            .values()
            .flat_map(|t| t.data().iter().map(|&v| (v as f64).powi(2)))
            .sum();
        assert!((clipped.sqrt() - 10.0).abs() < 1e-6);
        assert_eq!(big["q"].data(), &[6.0, 8.0]);

        let mut small = grad_of(3.0);
        let norm = clip_grad_norm(&mut small, 10.0);
        assert_eq!(norm, 3.0);
        assert_eq!(small["p"].data(), &[3.0]);
    }

    #[test]
    fn missing_gradient_blob_is_an_error() {
        let mut p = single_param(1.0);
        let mut opt = Adam::new(&p, 0.1, 0.5, 0.9);
        let err = opt.step(&mut p, BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("missing gradients for p"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn save_load_round_trip_reproduces_the_next_update() {
        let mut p1 = single_param(0.7);
        let mut opt1 = Adam::new(&p1, 0.05, 0.5, 0.999);
        for i in 0..5 {
            opt1.step(&mut p1, grad_of(0.3 * (i as f32 + 1.0))).unwrap();
        }
        let mut saved = BTreeMap::new();
        opt1.save("opt.gen", &mut saved);

        let mut p2 = single_param(p1.get("p").unwrap().data()[0]);
        let mut opt2 = Adam::new(&p2, 0.05, 0.5, 0.999);
        opt2.load("opt.gen", &saved).unwrap();
        assert_eq!(opt2.t, 5);

        opt1.step(&mut p1, grad_of(-0.2)).unwrap();
        opt2.step(&mut p2, grad_of(-0.2)).unwrap();
        assert_eq!(
            p1.get("p").unwrap().data(),
            p2.get("p").unwrap().data(),
            "resumed optimizer diverged"
        );

        let mut incomplete = saved.clone();
        incomplete.remove("opt.gen.m.p");
        let err = opt2.load("opt.gen", &incomplete).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
