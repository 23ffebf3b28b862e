//! Sparsification analysis: how fast the error melts away when the most
//! uncertain pixels are removed first, and the area between that curve and
//! the oracle's.

use super::{MetricsError, Result};
use crate::diffcore::{Scalar, Tensor};

/// Residual error as a function of the fraction of out-of-view pixels
/// removed, in the removal order of some uncertainty map.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsificationCurve {
    /// Fractions removed, starting at 0 and increasing by the step until
    /// every masked pixel is gone.
    pub fractions: Vec<f64>,
    /// Mean of the remaining per-pixel errors at each fraction; 0 at the
    /// final (fully removed) point.
    pub mse: Vec<f64>,
}

fn plane<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let s = t.shape();
    let (h, w) = match s.len() {
        2 => (s[0], s[1]),
        3 if s[0] == 1 => (s[1], s[2]),
        4 if s[0] == 1 && s[1] == 1 => (s[2], s[3]),
        _ => {
            return Err(MetricsError::Invalid {
                op,
                detail: format!("expected a single [H,W] plane, got {s:?}"),
            })
        }
    };
    Ok((h, w, t.data().iter().map(|v| (*v).to_f64()).collect()))
}

/// Builds the sparsification curve of `error` (per-pixel squared error)
/// under the removal order of `uncertainty`, restricted to pixels where
/// `mask` is nonzero. Pixels are removed most-uncertain first, ties broken
/// by row-major index, `step` of the masked population at a time (5% per
/// the evaluation protocol). Feeding the error map itself as the
/// uncertainty yields the oracle curve.
pub fn sparsification<T: Scalar>(
    error: &Tensor<T>,
    uncertainty: &Tensor<T>,
    mask: &Tensor<T>,
    step: f64,
) -> Result<SparsificationCurve> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(MetricsError::Invalid {
            op: "sparsification",
            detail: format!("step {step} outside (0, 1]"),
        });
    }
    let (h, w, err) = plane("sparsification", error)?;
    let (hu, wu, unc) = plane("sparsification", uncertainty)?;
    let (hm, wm, m) = plane("sparsification", mask)?;
    if (h, w) != (hu, wu) || (h, w) != (hm, wm) {
        return Err(MetricsError::Invalid {
            op: "sparsification",
            detail: "error, uncertainty, and mask planes must align".into(),
        });
    }

    // Masked pixels, most uncertain first, row-major on ties.
    let mut order: Vec<usize> = (0..h * w).filter(|&i| m[i] != 0.0).collect();
    if order.is_empty() {
        return Err(MetricsError::Invalid {
            op: "sparsification",
            detail: "mask selects no pixels".into(),
        });
    }
    order.sort_by(|&a, &b| unc[b].partial_cmp(&unc[a]).unwrap().then(a.cmp(&b)));

    let n = order.len();
    // removed_total[k] = error mass of the first k removed pixels.
    let mut removed_total = Vec::with_capacity(n + 1);
    removed_total.push(0.0);
    for &i in &order {
        removed_total.push(removed_total.last().unwrap() + err[i]);
    }
    let total = removed_total[n];

    let mut fractions = Vec::new();
    let mut mse = Vec::new();
    for i in 0.. {
        let removed = ((i as f64 * step) * n as f64).round() as usize;
        let removed = removed.min(n);
        fractions.push(i as f64 * step);
        mse.push(if removed == n {
            0.0
        } else {
            (total - removed_total[removed]) / (n - removed) as f64
        });
        if removed == n {
            break;
        }
    }
    Ok(SparsificationCurve { fractions, mse })
}

/// Area between a sparsification curve and the oracle curve, integrated
/// with the trapezoid rule over the shared fraction grid.
pub fn ause(curve: &SparsificationCurve, oracle: &SparsificationCurve) -> Result<f64> {
    if curve.fractions != oracle.fractions {
        return Err(MetricsError::Invalid {
            op: "ause",
            detail: "curves live on different fraction grids".into(),
        });
    }
    if curve.fractions.len() != curve.mse.len() || oracle.mse.len() != curve.mse.len() {
        return Err(MetricsError::Invalid {
            op: "ause",
            detail: "curve lengths are inconsistent".into(),
        });
    }
    let mut area = 0.0;
    for i in 1..curve.fractions.len() {
        let gap_prev = curve.mse[i - 1] - oracle.mse[i - 1];
        let gap = curve.mse[i] - oracle.mse[i];
        area += 0.5 * (gap_prev + gap) * (curve.fractions[i] - curve.fractions[i - 1]);
    }
    Ok(area)
}

/// Gradient-magnitude soft edge map of an RGB image, normalized so the
/// strongest edge reads 1; a flat image yields all zeros. Stands in for a
/// learned edge detector as a non-learned uncertainty baseline: out-of-view
/// content tends to be hardest to hallucinate near edges.
pub fn edge_uncertainty_baseline<T: Scalar>(rgb: &Tensor<T>) -> Result<Tensor<f64>> {
    let s = rgb.shape();
    let (c, h, w) = match s.len() {
        3 => (s[0], s[1], s[2]),
        4 if s[0] == 1 => (s[1], s[2], s[3]),
        _ => {
            return Err(MetricsError::Invalid {
                op: "edge_uncertainty_baseline",
                detail: format!("expected [C,H,W] or [1,C,H,W], got {s:?}"),
            })
        }
    };
    let data: Vec<f64> = rgb.data().iter().map(|v| (*v).to_f64()).collect();
    let mut map = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut mag = 0.0;
            for ch in 0..c {
                let at = |yy: usize, xx: usize| data[ch * h * w + yy * w + xx];
                let dx = if x + 1 < w { at(y, x + 1) - at(y, x) } else { 0.0 };
                let dy = if y + 1 < h { at(y + 1, x) - at(y, x) } else { 0.0 };
                mag += (dx * dx + dy * dy).sqrt();
            }
            map[y * w + x] = mag / c as f64;
        }
    }
    let peak = map.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut map {
            *v /= peak;
        }
    }
    Ok(Tensor::new(vec![h, w], map).expect("non-empty map"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grids(seed: u64, n: usize) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let err = Tensor::rand_uniform(vec![n, n], 0.0, 1.0, &mut rng);
        let unc = Tensor::rand_uniform(vec![n, n], 0.0, 1.0, &mut rng);
        let mask = Tensor::new(
            vec![n, n],
            (0..n * n).map(|i| (i % 3 != 1) as u8 as f64).collect(),
        )
        .unwrap();
        (err, unc, mask)
    }

    #[test]
    fn perfect_uncertainty_reproduces_the_oracle() {
        let (err, _, mask) = grids(81, 8);
        let oracle = sparsification(&err, &err, &mask, 0.05).unwrap();
        let scaled = Tensor::new(
            vec![8, 8],
            err.data().iter().map(|v| v * 0.5).collect(),
        )
        .unwrap();
        // Any strictly monotone transform of the error keeps the order.
        let curve = sparsification(&err, &scaled, &mask, 0.05).unwrap();
        assert_eq!(curve, oracle);
        assert!((ause(&curve, &oracle).unwrap()).abs() == 0.0);
    }

    #[test]
    fn matches_the_sort_and_slice_oracle() {
        let (err, unc, mask) = grids(82, 7);
        let step = 0.05;
        let curve = sparsification(&err, &unc, &mask, step).unwrap();

        // Brute force: materialize kept pixels, re-sort and slice per
        // fraction, average what stays.
        let mut pixels: Vec<(usize, f64, f64)> = (0..49)
            .filter(|&i| mask.data()[i] != 0.0)
            .map(|i| (i, unc.data()[i], err.data()[i]))
            .collect();
        pixels.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let n = pixels.len();
        for (i, (&f, &got)) in curve.fractions.iter().zip(&curve.mse).enumerate() {
            assert!((f - i as f64 * step).abs() < 1e-12);
            let removed = ((f * n as f64).round() as usize).min(n);
            let rest = &pixels[removed..];
            let want = if rest.is_empty() {
                0.0
            } else {
                rest.iter().map(|(_, _, e)| e).sum::<f64>() / rest.len() as f64
            };
            assert!((got - want).abs() < 1e-12, "fraction {f}: {got} vs {want}");
        }
        assert_eq!(*curve.mse.last().unwrap(), 0.0);
    }

    #[test]
    fn oracle_curve_never_rises_and_dominates_every_ordering() {
        for seed in [83, 84, 85] {
            let (err, unc, mask) = grids(seed, 9);
            let oracle = sparsification(&err, &err, &mask, 0.05).unwrap();
            for pair in oracle.mse.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "oracle rose: {pair:?}");
            }
            let curve = sparsification(&err, &unc, &mask, 0.05).unwrap();
            for (c, o) in curve.mse.iter().zip(&oracle.mse) {
                assert!(c + 1e-12 >= *o, "curve dipped below oracle");
            }
            assert!(ause(&curve, &oracle).unwrap() >= 0.0);
        }
    }

    #[test]
    fn constant_uncertainty_removes_in_row_major_order() {
        let (err, _, mask) = grids(86, 6);
        let flat = Tensor::full(vec![6, 6], 0.5);
        let curve = sparsification(&err, &flat, &mask, 0.25).unwrap();

        let kept: Vec<f64> = (0..36)
            .filter(|&i| mask.data()[i] != 0.0)
            .map(|i| err.data()[i])
            .collect();
        let n = kept.len();
        for (i, got) in curve.mse.iter().enumerate() {
            let removed = ((i as f64 * 0.25) * n as f64).round() as usize;
            let rest = &kept[removed.min(n)..];
            let want = if rest.is_empty() {
                0.0
            } else {
                rest.iter().sum::<f64>() / rest.len() as f64
            };
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ause_integrates_a_crafted_gap_exactly() {
        let grid = vec![0.0, 0.5, 1.0];
        let oracle = SparsificationCurve {
            fractions: grid.clone(),
            mse: vec![0.4, 0.1, 0.0],
        };
        let curve = SparsificationCurve {
            fractions: grid,
            mse: vec![0.4, 0.3, 0.0],
        };
        // Gap is 0 -> 0.2 -> 0: two trapezoids of area 0.05 each.
        assert!((ause(&curve, &oracle).unwrap() - 0.1).abs() < 1e-15);

        let other = SparsificationCurve {
            fractions: vec![0.0, 1.0],
            mse: vec![0.4, 0.0],
        };
        assert!(ause(&other, &oracle).is_err());
    }

    #[test]
    fn empty_mask_is_rejected() {
        let (err, unc, _) = grids(87, 4);
        let none = Tensor::zeros(vec![4, 4]);
        assert!(sparsification(&err, &unc, &none, 0.05).is_err());
    }

    #[test]
    fn edge_map_is_flat_zero_on_flat_images_and_peaks_on_edges() {
        let flat: Tensor<f64> = Tensor::full(vec![3, 6, 6], 0.42);
        let edges = edge_uncertainty_baseline(&flat).unwrap();
        assert!(edges.data().iter().all(|&v| v == 0.0));

        // Vertical step between columns 3 and 4: the forward difference
        // fires in column 3, everywhere else is flat.
        let mut data = Vec::new();
        for _ in 0..3 {
            for i in 0..36 {
                data.push(if i % 6 < 4 { 0.0 } else { 1.0 });
            }
        }
        let step_img = Tensor::new(vec![3, 6, 6], data).unwrap();
        let edges = edge_uncertainty_baseline(&step_img).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let v = edges.data()[y * 6 + x];
                if x == 3 {
                    assert_eq!(v, 1.0, "edge column must carry the peak");
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn random_orderings_average_worse_than_informed_ones() {
        // Sanity check of the qualitative ordering the evaluation relies
        // on: oracle <= informed (noisy error) <= random, on average.
        let mut rng = StdRng::seed_from_u64(88);
        let err = Tensor::rand_uniform(vec![16, 16], 0.0, 1.0, &mut rng);
        let mask = Tensor::full(vec![16, 16], 1.0);
        let oracle = sparsification(&err, &err, &mask, 0.05).unwrap();

        let noisy = Tensor::new(
            vec![16, 16],
            err.data().iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect(),
        )
        .unwrap();
        let informed = sparsification(&err, &noisy, &mask, 0.05).unwrap();

        let shuffled = Tensor::rand_uniform(vec![16, 16], 0.0, 1.0, &mut rng);
        let random = sparsification(&err, &shuffled, &mask, 0.05).unwrap();

        let a_informed = ause(&informed, &oracle).unwrap();
        let a_random = ause(&random, &oracle).unwrap();
        assert!(a_informed > 0.0);
        assert!(
            a_informed < a_random,
            "informed {a_informed} should beat random {a_random}"
        );
    }
}
