//! Finite-difference audit of the whole differentiable stack.
//!
//! [`gradient_suite`] compares reverse-mode gradients against central
//! differences for every tensor op, every network block, and every loss,
//! across a caller-supplied list of seeds. Inputs are drawn away from the
//! kinks of non-smooth ops (sign margins around relu and abs corners, bands
//! around clamp bounds, separated operands for min and max, fractional
//! sampling coordinates clear of cell boundaries) so the numeric difference
//! is trustworthy at the probe step. Deep blocks keep a smaller step and a
//! probe cap: the smaller step shrinks the chance of a probe crossing an
//! activation kink somewhere downstream, and the cap keeps the suite fast.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, DiffError, GradCheck, GradCheckReport, Tape, Tensor, Var};
use crate::geometry::Pose;
use crate::losses::{
    loss_adversarial, loss_cg, loss_depth_scale_invariant, loss_fa_total, loss_l1u,
    loss_perceptual, loss_photometric, loss_smooth, GanRole, LossConfig, PerceptualExtractor,
};
use crate::netblocks::params::{discriminator_blobs, generator_blobs};
use crate::netblocks::{
    afa_aggregate, decode, disc_image, disc_temporal, encode, gated_attention, patch_attention,
    Bound, NetConfig, ParamStore,
};
use crate::scenegen::{Scene, SceneSpec};

/// Seeds used when the caller has no preference.
pub const DEFAULT_SEEDS: [u64; 10] = [3, 7, 11, 19, 23, 31, 42, 57, 71, 89];

type CheckResult = std::result::Result<GradCheckReport, DiffError>;

/// Outcome of one named check, aggregated over all seeds.
#[derive(Clone, Debug)]
pub struct SuiteCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst floored relative error seen across seeds and probes.
    pub max_rel_err: f64,
    /// Report of the first failing seed; empty when the check passed.
    pub detail: String,
}

impl fmt::Display for SuiteCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<26} max rel err {:.3e}",
            if self.passed { "ok    " } else { "FAILED" },
            self.name,
            self.max_rel_err
        )?;
        if !self.detail.is_empty() {
            write!(f, "\n{}", self.detail)?;
        }
        Ok(())
    }
}

/// Runs every check on every seed and reports the worst case per check.
pub fn gradient_suite(seeds: &[u64]) -> Vec<SuiteCheck> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let mut worst = 0.0f64;
            let mut passed = true;
            let mut detail = String::new();
            for &seed in seeds {
                match check(seed) {
                    Ok(report) => {
                        worst = worst.max(report.max_rel_err());
                        if !report.passed() && passed {
                            passed = false;
                            detail = format!("seed {seed}:\n{report}");
                        }
                    }
                    Err(err) => {
                        worst = f64::INFINITY;
                        if passed {
                            passed = false;
                            detail = format!("seed {seed}: {err}");
                        }
                    }
                }
            }
            SuiteCheck { name, passed, max_rel_err: worst, detail }
        })
        .collect()
}

const CHECKS: &[(&str, fn(u64) -> CheckResult)] = &[
    ("op_add_sub_broadcast", op_add_sub_broadcast),
    ("op_mul_div", op_mul_div),
    ("op_affine_neg_abs", op_affine_neg_abs),
    ("op_exp_ln_sq", op_exp_ln_sq),
    ("op_sigmoid_tanh", op_sigmoid_tanh),
    ("op_relu_leaky", op_relu_leaky),
    ("op_clamp", op_clamp),
    ("op_min_max", op_min_max),
    ("op_conv2d_stride1", op_conv2d_stride1),
    ("op_conv2d_stride2", op_conv2d_stride2),
    ("op_grid_sample", op_grid_sample),
    ("op_concat_slice_shift", op_concat_slice_shift),
    ("op_softmax", op_softmax),
    ("op_pool_upsample_filter", op_pool_upsample_filter),
    ("op_reductions", op_reductions),
    ("op_broadcast_rank0", op_broadcast_rank0),
    ("block_encoder", block_encoder),
    ("block_afa", block_afa),
    ("block_patch_attention", block_patch_attention),
    ("block_gated_attention", block_gated_attention),
    ("block_decoder", block_decoder),
    ("block_disc_image", block_disc_image),
    ("block_disc_temporal", block_disc_temporal),
    ("loss_photometric_smooth", check_photometric_smooth),
    ("loss_l1u", check_l1u),
    ("loss_perceptual", check_perceptual),
    ("loss_adversarial", check_adversarial),
    ("loss_fa_total", check_fa_total),
    ("loss_cg", check_cg),
    ("loss_depth_scale_inv", check_depth_scale_invariant),
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape.to_vec(), lo, hi, r)
}

/// Magnitudes in `[lo, hi]` with a random sign per element, so every value
/// keeps at least `lo` distance from zero.
fn signed_band(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mag = uniform(shape, lo, hi, r);
    let sign = uniform(shape, -1.0, 1.0, r);
    let data = mag
        .data()
        .iter()
        .zip(sign.data())
        .map(|(m, s)| if *s >= 0.0 { *m } else { -*m })
        .collect();
    Tensor::new(mag.shape().to_vec(), data).expect("same shape")
}

/// `base` plus a per-element offset whose magnitude lies in
/// `[margin, margin + spread]`, sign random. Keeps elementwise gaps (for
/// abs, min, max) clear of the tie point.
fn offset_from(base: &Tensor<f64>, margin: f64, spread: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let jitter = uniform(base.shape(), -1.0, 1.0, r);
    let data = base
        .data()
        .iter()
        .zip(jitter.data())
        .map(|(b, u)| {
            let mag = margin + spread * u.abs();
            b + if *u >= 0.0 { mag } else { -mag }
        })
        .collect();
    Tensor::new(base.shape().to_vec(), data).expect("same shape")
}

/// Random values pushed at least `band` away from both clamp edges.
fn outside_bands(shape: &[usize], bound: f64, band: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = uniform(shape, -1.2 * bound - 0.5, 1.2 * bound + 0.5, r);
    for v in t.data_mut() {
        for edge in [-bound, bound] {
            if (*v - edge).abs() < band {
                *v = edge + if *v >= edge { band } else { -band };
            }
        }
    }
    t
}

/// Binary mask with roughly `keep` fraction of ones and at least one set.
fn binary_mask(shape: &[usize], keep: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = uniform(shape, 0.0, 1.0, r);
    for v in t.data_mut() {
        *v = if *v < keep { 1.0 } else { 0.0 };
    }
    t.data_mut()[0] = 1.0;
    t
}

/// Pixel-unit sampling grid over a `h_in` by `w_in` image: every coordinate
/// sits strictly inside the image with a fractional part in `[0.3, 0.7]`,
/// so probes never cross a bilinear cell boundary or the padding border.
fn frac_coords(hc: usize, wc: usize, h_in: usize, w_in: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = Vec::with_capacity(2 * hc * wc);
    for limit in [w_in, h_in] {
        for _ in 0..hc * wc {
            let cell = r.gen_range(0..limit - 1) as f64;
            data.push(cell + r.gen_range(0.3..0.7));
        }
    }
    Tensor::new(vec![1, 2, hc, wc], data).expect("counted")
}

/// Positive disparity on a checkerboard so every forward difference stays
/// far from the absolute-value kink of the smoothness term.
fn checkerboard_disp(h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            data.push(1.0 + 0.2 * sign + r.gen_range(0.0..0.05));
        }
    }
    Tensor::new(vec![1, 1, h, w], data).expect("counted")
}

fn lift<V, E: fmt::Display>(r: std::result::Result<V, E>) -> std::result::Result<V, DiffError> {
    r.map_err(|e| DiffError::Invalid { op: "gradient_suite", detail: e.to_string() })
}

fn tiny_net() -> NetConfig {
    NetConfig {
        input_channels: 4,
        enc_widths: [3, 4, 5],
        dec_widths: [3, 4, 5],
        disc_widths: [3, 4, 6],
    }
}

fn blob64(store: &ParamStore, name: &str) -> Tensor<f64> {
    store.get(name).expect("declared blob").cast::<f64>()
}

/// Binds every blob of `store` as a constant except the named leaves.
fn bound_with(tape: &Tape<f64>, store: &ParamStore, leaves: &[(&str, &Var<f64>)]) -> Bound<f64> {
    Bound::from_vars(store.names().map(|name| {
        let var = match leaves.iter().find(|(leaf, _)| *leaf == name) {
            Some((_, v)) => (*v).clone(),
            None => tape.constant(&blob64(store, name)),
        };
        (name.to_string(), var)
    }))
}

fn op_add_sub_broadcast(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let a = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[3, 1], -1.0, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("a", a), ("b", b)], |_, v| {
        let sum = v[0].add(&v[1])?.sq()?.mean_all()?;
        let diff = v[0].sub(&v[1])?.mul_scalar(0.5)?.mean_all()?;
        sum.add(&diff)
    })
}

fn op_mul_div(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let a = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
    let b = signed_band(&[2, 3, 4], 0.5, 1.5, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("a", a), ("b", b)], |_, v| {
        let prod = v[0].mul(&v[1])?.mean_all()?;
        let quot = v[0].div(&v[1])?.mean_all()?;
        prod.add(&quot)
    })
}

fn op_affine_neg_abs(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let a = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let b = signed_band(&[3, 4], 0.2, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("a", a), ("b", b)], |_, v| {
        let chain = v[0].affine(1.7, 0.3)?.neg()?.mul_scalar(0.5)?.add_scalar(0.1)?.sq()?;
        chain.mean_all()?.add(&v[1].abs()?.mean_all()?)
    })
}

fn op_exp_ln_sq(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x)], |_, v| {
        let grown = v[0].exp()?.mean_all()?;
        let logd = v[0].sq()?.add_scalar(0.5)?.ln()?.mean_all()?;
        grown.add(&logd)
    })
}

fn op_sigmoid_tanh(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 4], -2.0, 2.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x)], |_, v| {
        v[0].sigmoid()?.mul(&v[0].tanh()?)?.mean_all()
    })
}

fn op_relu_leaky(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let a = signed_band(&[3, 5], 0.15, 1.0, &mut r);
    let b = signed_band(&[3, 5], 0.15, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("a", a), ("b", b)], |_, v| {
        let pos = v[0].relu()?.sq()?.mean_all()?;
        let leaky = v[1].leaky_relu(0.2)?.sq()?.mean_all()?;
        pos.add(&leaky)
    })
}

fn op_clamp(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = outside_bands(&[4, 5], 0.5, 0.05, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x)], |_, v| {
        v[0].clamp(-0.5, 0.5)?.sq()?.mean_all()
    })
}

fn op_min_max(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let a = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let b = offset_from(&a, 0.2, 0.3, &mut r);
    let c = offset_from(&a, 0.2, 0.3, &mut r);
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("a", a), ("b", b), ("c", c)],
        |_, v| {
            let lo = v[0].minimum(&v[1])?.sq()?.mean_all()?;
            let hi = v[0].maximum(&v[2])?.sq()?.mean_all()?;
            lo.add(&hi)
        },
    )
}

fn op_conv2d_stride1(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[1, 3, 6, 7], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let b = uniform(&[4], -0.5, 0.5, &mut r);
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("x", x), ("w", w), ("b", b)],
        |_, v| v[0].conv2d(&v[1], &v[2], 1, 1)?.sq()?.mean_all(),
    )
}

fn op_conv2d_stride2(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[1, 2, 8, 8], -1.0, 1.0, &mut r);
    let w = uniform(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let b = uniform(&[3], -0.5, 0.5, &mut r);
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("x", x), ("w", w), ("b", b)],
        |_, v| v[0].conv2d(&v[1], &v[2], 2, 1)?.sq()?.mean_all(),
    )
}

fn op_grid_sample(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[1, 2, 5, 6], -1.0, 1.0, &mut r);
    let coords = frac_coords(4, 5, 5, 6, &mut r);
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("x", x), ("coords", coords)],
        |_, v| v[0].grid_sample(&v[1])?.sq()?.mean_all(),
    )
}

fn op_concat_slice_shift(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let a = uniform(&[1, 2, 4, 5], -1.0, 1.0, &mut r);
    let b = uniform(&[1, 3, 4, 5], -1.0, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("a", a), ("b", b)], |_, v| {
        let joined = crate::diffcore::concat(&[v[0].clone(), v[1].clone()], 1)?;
        joined.slice(1, 1, 3)?.shift2d(1, -2)?.sq()?.mean_all()
    })
}

fn op_softmax(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 4, 5], -1.5, 1.5, &mut r);
    let w = uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x), ("w", w)], |_, v| {
        let over_ch = v[0].softmax(1)?.mul(&v[1])?.mean_all()?;
        let over_batch = v[0].softmax(0)?.sq()?.mean_all()?;
        over_ch.add(&over_batch)
    })
}

fn op_pool_upsample_filter(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[1, 2, 4, 6], -1.0, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x)], |_, v| {
        let roundtrip = v[0].avg_pool(2)?.upsample_bilinear(2)?;
        roundtrip.add(&v[0].box_filter(1)?)?.sq()?.mean_all()
    })
}

fn op_reductions(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x)], |_, v| {
        let kept = v[0].sum_axes(&[1], true)?.mul(&v[0])?.mean_all()?;
        let dropped = v[0].mean_axes(&[0, 2], false)?.sq()?.sum_all()?;
        kept.add(&dropped)
    })
}

fn op_broadcast_rank0(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let x = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let s = Tensor::new(vec![], vec![r.gen_range(0.2..0.9)]).expect("scalar");
    grad_check(&GradCheck { seed, ..GradCheck::default() }, &[("x", x), ("s", s)], |_, v| {
        v[0].mul(&v[1])?.mean_all()?.add(&v[1].sq()?)
    })
}

fn block_encoder(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&generator_blobs(&tiny_net()), seed);
    let x = uniform(&[1, 4, 8, 12], -1.0, 1.0, &mut r);
    let w = blob64(&store, "enc.l0.down.w");
    let b = blob64(&store, "enc.l2.res.b");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(
        &check,
        &[("x", x), ("enc.l0.down.w", w), ("enc.l2.res.b", b)],
        |tape, v| {
            let p = bound_with(tape, &store, &[("enc.l0.down.w", &v[1]), ("enc.l2.res.b", &v[2])]);
            let [l0, l1, l2] = lift(encode(&p, &v[0]))?;
            l0.sq()?.mean_all()?.add(&l1.sq()?.mean_all()?)?.add(&l2.sq()?.mean_all()?)
        },
    )
}

fn block_afa(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&generator_blobs(&tiny_net()), seed);
    let f0 = uniform(&[1, 4, 4, 6], -1.0, 1.0, &mut r);
    let f1 = uniform(&[1, 4, 4, 6], -1.0, 1.0, &mut r);
    let f2 = uniform(&[1, 4, 4, 6], -1.0, 1.0, &mut r);
    let masks: Vec<Tensor<f64>> =
        (0..3).map(|_| uniform(&[1, 1, 4, 6], 0.1, 0.9, &mut r)).collect();
    let w = blob64(&store, "afa.l1.w");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(
        &check,
        &[("frame0", f0), ("frame1", f1), ("afa.l1.w", w)],
        move |tape, v| {
            let p = bound_with(tape, &store, &[("afa.l1.w", &v[2])]);
            let feats = vec![v[0].clone(), v[1].clone(), tape.constant(&f2)];
            let mask_vars: Vec<Var<f64>> = masks.iter().map(|m| tape.constant(m)).collect();
            let (agg, attn) = lift(afa_aggregate(&p, 1, &feats, &mask_vars))?;
            agg.sq()?.mean_all()?.add(&attn.mean_all()?)
        },
    )
}

fn block_patch_attention(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&generator_blobs(&tiny_net()), seed);
    let x_full = uniform(&[1, 8, 5, 6], -1.0, 1.0, &mut r);
    let x_res = uniform(&[1, 4, 5, 6], -1.0, 1.0, &mut r);
    let w = blob64(&store, "dec.l1.attn.gamma1.w");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(
        &check,
        &[("x_full", x_full), ("x_res", x_res), ("dec.l1.attn.gamma1.w", w)],
        |tape, v| {
            let p = bound_with(tape, &store, &[("dec.l1.attn.gamma1.w", &v[2])]);
            let out = lift(patch_attention(&p, "dec.l1.attn", &v[0], &v[1]))?;
            out.sq()?.mean_all()
        },
    )
}

fn block_gated_attention(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&generator_blobs(&tiny_net()), seed);
    let x = uniform(&[1, 3, 6, 8], -1.0, 1.0, &mut r);
    let gw = blob64(&store, "dec.l0.gate.g.w");
    let rw = blob64(&store, "dec.l0.attn.r.w");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(
        &check,
        &[("x", x), ("dec.l0.gate.g.w", gw), ("dec.l0.attn.r.w", rw)],
        |tape, v| {
            let p = bound_with(
                tape,
                &store,
                &[("dec.l0.gate.g.w", &v[1]), ("dec.l0.attn.r.w", &v[2])],
            );
            let (gated, hidden) = lift(gated_attention(&p, "dec.l0", &v[0], None))?;
            gated.sq()?.mean_all()?.add(&hidden.mean_all()?)
        },
    )
}

fn block_decoder(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&generator_blobs(&tiny_net()), seed);
    let a0 = uniform(&[1, 3, 8, 12], -1.0, 1.0, &mut r);
    let a1 = uniform(&[1, 4, 4, 6], -1.0, 1.0, &mut r);
    let a2 = uniform(&[1, 5, 2, 3], -1.0, 1.0, &mut r);
    let w = blob64(&store, "dec.rgb.w");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(
        &check,
        &[("agg0", a0), ("agg1", a1), ("agg2", a2), ("dec.rgb.w", w)],
        |tape, v| {
            let p = bound_with(tape, &store, &[("dec.rgb.w", &v[3])]);
            let agg = [v[0].clone(), v[1].clone(), v[2].clone()];
            let out = lift(decode(&p, &agg, None))?;
            out.rgb.sq()?.mean_all()?.add(&out.uncertainty.mean_all()?)
        },
    )
}

fn block_disc_image(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&discriminator_blobs(&tiny_net()), seed);
    let rgb = uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let mask = binary_mask(&[1, 1, 8, 8], 0.5, &mut r);
    let w = blob64(&store, "disc_q.c1.w");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(&check, &[("rgb", rgb), ("disc_q.c1.w", w)], move |tape, v| {
        let p = bound_with(tape, &store, &[("disc_q.c1.w", &v[1])]);
        let score = lift(disc_image(&p, &v[0], &tape.constant(&mask)))?;
        score.sq()?.mean_all()
    })
}

fn block_disc_temporal(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let store = ParamStore::init(&discriminator_blobs(&tiny_net()), seed);
    let f0 = uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let f1 = uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let f2 = uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let mask = binary_mask(&[1, 1, 8, 8], 0.5, &mut r);
    let w = blob64(&store, "disc_t.out.w");
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(
        &check,
        &[("frame0", f0), ("frame2", f2), ("disc_t.out.w", w)],
        move |tape, v| {
            let p = bound_with(tape, &store, &[("disc_t.out.w", &v[2])]);
            let frames = [v[0].clone(), tape.constant(&f1), v[1].clone()];
            let score = lift(disc_temporal(&p, &frames, &tape.constant(&mask)))?;
            score.sq()?.mean_all()
        },
    )
}

fn check_photometric_smooth(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let target = uniform(&[1, 3, 6, 8], 0.1, 0.9, &mut r);
    let warped = offset_from(&target, 0.2, 0.2, &mut r);
    let disp = checkerboard_disp(6, 8, &mut r);
    let nu = binary_mask(&[1, 1, 6, 8], 0.7, &mut r);
    let image = uniform(&[1, 3, 6, 8], 0.0, 1.0, &mut r);
    let cfg = LossConfig::default();
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("target", target), ("warped", warped), ("disp", disp)],
        move |tape, v| {
            let photo =
                lift(loss_photometric(&v[0], &[v[1].clone()], &tape.constant(&nu), &cfg))?;
            let smooth = lift(loss_smooth(&v[2], &tape.constant(&image)))?;
            photo.add(&smooth)
        },
    )
}

fn check_l1u(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let output = uniform(&[1, 3, 6, 8], 0.1, 0.9, &mut r);
    let warped = offset_from(&output, 0.2, 0.2, &mut r);
    let unc = uniform(&[1, 1, 6, 8], 0.3, 0.7, &mut r);
    let mask = binary_mask(&[1, 1, 6, 8], 0.6, &mut r);
    let eps = LossConfig::default().uncertainty_eps;
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("output", output), ("warped", warped), ("uncertainty", unc)],
        move |tape, v| lift(loss_l1u(&v[0], &v[1], &v[2], &tape.constant(&mask), eps)),
    )
}

fn check_perceptual(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let output = uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let warped = uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let mask = binary_mask(&[1, 1, 8, 8], 0.5, &mut r);
    let extractor = PerceptualExtractor::new(7);
    let check = GradCheck { h: 1e-6, max_probes: 6, seed, ..GradCheck::default() };
    grad_check(&check, &[("output", output), ("warped", warped)], move |tape, v| {
        lift(loss_perceptual(&v[0], &v[1], &tape.constant(&mask), &extractor))
    })
}

fn check_adversarial(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let real = uniform(&[1, 1, 4, 4], -0.5, 1.5, &mut r);
    let fake_d = uniform(&[1, 1, 4, 4], -0.5, 1.5, &mut r);
    let fake_g = uniform(&[1, 1, 4, 4], -0.5, 1.5, &mut r);
    let mask = binary_mask(&[1, 1, 8, 8], 0.5, &mut r);
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("real", real), ("fake_d", fake_d), ("fake_g", fake_g)],
        move |tape, v| {
            let m = tape.constant(&mask);
            let d = lift(loss_adversarial(Some(&v[0]), &v[1], &m, GanRole::Discriminator))?;
            let g = lift(loss_adversarial(None, &v[2], &m, GanRole::Generator))?;
            d.add(&g)
        },
    )
}

fn check_fa_total(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let parts: Vec<Tensor<f64>> =
        (0..4).map(|_| Tensor::scalar(r.gen_range(0.1..0.9))).collect();
    let cfg = LossConfig::default();
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[
            ("l1u", parts[0].clone()),
            ("perceptual", parts[1].clone()),
            ("adv_image", parts[2].clone()),
            ("adv_temporal", parts[3].clone()),
        ],
        move |_, v| lift(loss_fa_total(&v[0], &v[1], &v[2], &v[3], &cfg)),
    )
}

fn check_cg(seed: u64) -> CheckResult {
    let spec = SceneSpec {
        seed: 40 + seed,
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
    let scene = lift(Scene::build(&spec))?;
    let t = 4;
    let target_frame = lift(scene.render(t))?;
    let as_image = |rgb: &Tensor<f32>| {
        let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
        Tensor::new(vec![1, 3, h, w], rgb.data().iter().map(|v| *v as f64).collect())
            .expect("same element count")
    };
    let (h, w) = (target_frame.depth.shape()[0], target_frame.depth.shape()[1]);
    // Off the rendered optimum so reprojections land at generic positions.
    let disp = Tensor::new(
        vec![1, 1, h, w],
        target_frame
            .depth
            .data()
            .iter()
            .enumerate()
            .map(|(i, z)| (1.05 + 0.01 * (i % 7) as f64) / *z as f64)
            .collect(),
    )
    .expect("counted");
    let target = as_image(&target_frame.rgb);
    let mut sources = Vec::new();
    for s in [t - 1, t + 1] {
        let frame = lift(scene.render(s))?;
        sources.push((as_image(&frame.rgb), Pose::relative(&target_frame.pose, &frame.pose)));
    }
    let check = GradCheck { max_probes: 6, seed, ..GradCheck::default() };
    grad_check(&check, &[("disp", disp)], move |tape, v| {
        let tv = tape.constant(&target);
        let src: Vec<(Var<f64>, Pose)> =
            sources.iter().map(|(img, pose)| (tape.constant(img), *pose)).collect();
        lift(loss_cg(&v[0], &tv, &src, &scene.intrinsics, &LossConfig::default()))
    })
}

fn check_depth_scale_invariant(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let pred = uniform(&[1, 1, 5, 7], -1.0, 1.0, &mut r);
    let gt = uniform(&[1, 1, 5, 7], -1.0, 1.0, &mut r);
    let mask = binary_mask(&[1, 1, 5, 7], 0.6, &mut r);
    grad_check(
        &GradCheck { seed, ..GradCheck::default() },
        &[("pred_log", pred), ("gt_log", gt)],
        move |tape, v| lift(loss_depth_scale_invariant(&v[0], &v[1], &tape.constant(&mask))),
    )
}
