//! Structural similarity and pixel-error metrics over plain tensors.

use super::{MetricsError, Result};
use crate::diffcore::{Scalar, Tensor};

const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

/// Accepts `[C,H,W]` or `[1,C,H,W]` and returns channel-major f64 planes.
fn planes<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let s = t.shape();
    let (c, h, w) = match s.len() {
        3 => (s[0], s[1], s[2]),
        4 if s[0] == 1 => (s[1], s[2], s[3]),
        _ => {
            return Err(MetricsError::Invalid {
                op,
                detail: format!("expected [C,H,W] or [1,C,H,W], got {s:?}"),
            })
        }
    };
    Ok((c, h, w, t.data().iter().map(|v| (*v).to_f64()).collect()))
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MetricsError::Invalid {
            op,
            detail: format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

/// Mean and per-pixel structural similarity of two images in [0,1], using
/// square local windows of the given side (3 for the loss convention, 8
/// for evaluation). Windows are centered, biased up-left for even sides,
/// and clipped at the borders; per-pixel scores are averaged over
/// channels. Identical images score exactly 1.
pub fn ssim<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    window: usize,
) -> Result<(f64, Tensor<f64>)> {
    same_shape("ssim", a, b)?;
    if window == 0 {
        return Err(MetricsError::Invalid {
            op: "ssim",
            detail: "window must be at least 1".into(),
        });
    }
    let (c, h, w, pa) = planes("ssim", a)?;
    let (_, _, _, pb) = planes("ssim", b)?;

    let before = (window - 1) / 2;
    let after = window / 2;
    let mut map = vec![0.0; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(before);
        let y1 = (y + after).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(before);
            let x1 = (x + after).min(w - 1);
            let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            let mut score = 0.0;
            for ch in 0..c {
                let base = ch * h * w;
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        let (va, vb) = (pa[base + yy * w + xx], pb[base + yy * w + xx]);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let (mu_a, mu_b) = (sa / count, sb / count);
                let var_a = saa / count - mu_a * mu_a;
                let var_b = sbb / count - mu_b * mu_b;
                let cov = sab / count - mu_a * mu_b;
                let lum = (2.0 * mu_a * mu_b + C1) / (mu_a * mu_a + mu_b * mu_b + C1);
                let structure = (2.0 * cov + C2) / (var_a + var_b + C2);
                score += lum * structure;
            }
            map[y * w + x] = score / c as f64;
        }
    }
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    Ok((mean, Tensor::new(vec![h, w], map).expect("non-empty map")))
}

/// Mean squared error over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x).to_f64() - (*y).to_f64();
            d * d
        })
        .sum();
    Ok(total / a.numel() as f64)
}

/// Mean squared error restricted to pixels where `mask` is nonzero; the
/// error is averaged over channels first, so the result is a per-pixel
/// mean. The mask is an `[H,W]` (or `[1,H,W]` / `[1,1,H,W]`) plane shared
/// by all channels; selecting no pixels is an error.
pub fn masked_mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mask: &Tensor<T>) -> Result<f64> {
    same_shape("masked_mse", a, b)?;
    let (c, h, w, pa) = planes("masked_mse", a)?;
    let (_, _, _, pb) = planes("masked_mse", b)?;
    let m: Vec<f64> = mask.data().iter().map(|v| (*v).to_f64()).collect();
    if m.len() != h * w {
        return Err(MetricsError::Invalid {
            op: "masked_mse",
            detail: format!("mask has {} elements, image plane has {}", m.len(), h * w),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for px in 0..h * w {
        if m[px] == 0.0 {
            continue;
        }
        let mut err = 0.0;
        for ch in 0..c {
            let d = pa[ch * h * w + px] - pb[ch * h * w + px];
            err += d * d;
        }
        total += err / c as f64;
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::Invalid {
            op: "masked_mse",
            detail: "mask selects no pixels".into(),
        });
    }
    Ok(total / count as f64)
}

/// Peak signal-to-noise ratio in dB for unit-range images, from a mean
/// squared error. Zero error maps to infinity.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use crate::losses::{pe, LossConfig};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn identical_images_score_one() {
        let mut rng = StdRng::seed_from_u64(71);
        let img: Tensor<f64> = Tensor::rand_uniform(vec![3, 6, 8], 0.0, 1.0, &mut rng);
        for window in [3, 8] {
            let (mean, map) = ssim(&img, &img, window).unwrap();
            assert_eq!(mean, 1.0);
            assert!(map.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn black_versus_white_matches_the_closed_form() {
        let black: Tensor<f64> = Tensor::zeros(vec![3, 8, 8]);
        let white = Tensor::full(vec![3, 8, 8], 1.0);
        // Flat images: the structure ratio is 1, the luminance ratio is
        // C1/(1 + C1) at every pixel.
        let expected = C1 / (1.0 + C1);
        for window in [3, 8] {
            let (mean, _) = ssim(&black, &white, window).unwrap();
            assert!((mean - expected).abs() < 1e-15, "{mean} vs {expected}");
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(72);
        let a: Tensor<f64> = Tensor::rand_uniform(vec![3, 7, 9], 0.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(vec![3, 7, 9], 0.0, 1.0, &mut rng);
        let (ab, _) = ssim(&a, &b, 8).unwrap();
        let (ba, _) = ssim(&b, &a, 8).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn window_three_agrees_with_the_training_error_map() {
        // The photometric error at alpha = 1 is (1 - SSIM)/2 under the same
        // 3x3 clipped-window convention, so the two implementations must
        // agree through that identity.
        let mut rng = StdRng::seed_from_u64(73);
        let a: Tensor<f64> = Tensor::rand_uniform(vec![1, 3, 6, 7], 0.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(vec![1, 3, 6, 7], 0.0, 1.0, &mut rng);
        let (_, map) = ssim(&a, &b, 3).unwrap();

        let tape: Tape<f64> = Tape::new();
        let cfg = LossConfig { alpha: 1.0, ..LossConfig::default() };
        let err = pe(&tape.constant(&a), &tape.constant(&b), &cfg).unwrap();
        err.with_data(|e| {
            for (pe_val, s) in e.iter().zip(map.data()) {
                let from_loss = 1.0 - 2.0 * pe_val;
                assert!((from_loss - s).abs() < 1e-9, "{from_loss} vs {s}");
            }
        });
    }

    #[test]
    fn masked_mse_counts_only_selected_pixels() {
        let a = Tensor::new(vec![1, 2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let b = Tensor::zeros(vec![1, 2, 2]);
        let mask = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let got = masked_mse(&a, &b, &mask).unwrap();
        assert!((got - (0.25 + 1.0) / 2.0).abs() < 1e-15);
        assert!((mse(&a, &b).unwrap() - (0.25 + 1.0 + 0.0625) / 4.0).abs() < 1e-15);
        let none = Tensor::zeros(vec![2, 2]);
        assert!(masked_mse(&a, &b, &none).is_err());
    }

    #[test]
    fn psnr_follows_the_decibel_rule() {
        assert_eq!(psnr(0.0), f64::INFINITY);
        assert!((psnr(0.01) - 20.0).abs() < 1e-12);
        assert!((psnr(1.0) - 0.0).abs() < 1e-12);
    }
}
