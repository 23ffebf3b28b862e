//! Shared three-level feature encoder.
//!
//! Every input frame, past or present, runs through the same weights: a
//! strided conv ladder (strides 1, 2, 4) where each level applies a
//! downsampling conv followed by one residual conv. The input carries four
//! channels: RGB plus an uncertainty channel that is zero for real frames
//! and holds the previous prediction's uncertainty for recurrent frames.

use crate::diffcore::Var;
use crate::diffcore::Scalar;

use super::{Bound, Result, LEAKY_SLOPE};

fn level<T: Scalar>(p: &Bound<T>, l: usize, stride: usize, x: &Var<T>) -> Result<Var<T>> {
    let down = p
        .conv(&format!("enc.l{l}.down"), x, stride, 1)?
        .leaky_relu(LEAKY_SLOPE)?;
    let res = p
        .conv(&format!("enc.l{l}.res"), &down, 1, 1)?
        .leaky_relu(LEAKY_SLOPE)?;
    Ok(down.add(&res)?)
}

/// Runs the encoder on one `[1, C, H, W]` frame and returns the pyramid,
/// finest level first. `H` and `W` must be divisible by 4.
pub fn encode<T: Scalar>(p: &Bound<T>, x: &Var<T>) -> Result<[Var<T>; 3]> {
    let l0 = level(p, 0, 1, x)?;
    let l1 = level(p, 1, 2, &l0)?;
    let l2 = level(p, 2, 2, &l1)?;
    Ok([l0, l1, l2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheck, Tape, Tensor};
    use crate::netblocks::params::{generator_blobs, ParamStore};
    use crate::netblocks::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn pyramid_shapes_follow_the_strides() {
        let cfg = NetConfig::default();
        let store = ParamStore::init(&generator_blobs(&cfg), 0);
        let tape = Tape::<f32>::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(&Tensor::rand_uniform(vec![1, 4, 64, 64], 0.0, 1.0, &mut rng(1)));
        let levels = encode(&p, &x).unwrap();
        assert_eq!(levels[0].shape(), vec![1, 16, 64, 64]);
        assert_eq!(levels[1].shape(), vec![1, 32, 32, 32]);
        assert_eq!(levels[2].shape(), vec![1, 64, 16, 16]);
    }

    #[test]
    fn zero_parameters_give_zero_features() {
        let cfg = NetConfig::tiny();
        let store = ParamStore::zeros(&generator_blobs(&cfg));
        let tape = Tape::<f32>::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(&Tensor::rand_uniform(vec![1, 4, 8, 8], 0.0, 1.0, &mut rng(2)));
        for level in encode(&p, &x).unwrap() {
            level.with_data(|d| assert!(d.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let cfg = NetConfig::tiny();
        let store = ParamStore::init(&generator_blobs(&cfg), 0);
        let tape = Tape::<f32>::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(&Tensor::zeros(vec![1, 3, 8, 8]));
        assert!(encode(&p, &x).is_err());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = NetConfig::tiny();
        let store = ParamStore::init(&generator_blobs(&cfg), 5);
        let names: Vec<String> = store
            .names()
            .filter(|n| n.starts_with("enc."))
            .map(str::to_string)
            .collect();
        let mut inputs: Vec<(&str, Tensor<f64>)> = names
            .iter()
            .map(|n| (n.as_str(), store.get(n).unwrap().cast::<f64>()))
            .collect();
        let x = Tensor::rand_uniform(vec![1, 4, 8, 8], 0.0, 1.0, &mut rng(3));
        inputs.push(("x", x));

        let cfg_fd = GradCheck {
            max_probes: 4,
            ..GradCheck::default()
        };
        let report = grad_check(&cfg_fd, &inputs, |_, vars| {
            let p = crate::netblocks::Bound::from_vars(
                names.iter().cloned().zip(vars[..names.len()].iter().cloned()),
            );
            let levels = encode(&p, &vars[names.len()]).unwrap();
            let mut loss = levels[0].sq()?.mean_all()?;
            for level in &levels[1..] {
                loss = loss.add(&level.sq()?.mean_all()?)?;
            }
            Ok(loss)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
