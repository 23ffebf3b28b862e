use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, Var};

/// Central-difference gradient verification at `f64`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Perturbation step.
    pub h: f64,
    /// Acceptance threshold on the floored relative error.
    pub tol: f64,
    /// Cap on probed elements per input (random subset when exceeded).
    pub max_probes: usize,
    /// Seed for probe selection.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_probes: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|i| i.max_rel_err < self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|i| i.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.inputs {
            writeln!(
                f,
                "  {:<24} probes {:>4}  max rel err {:.3e}  (analytic {:.6e} vs numeric {:.6e} at [{}])",
                i.name, i.probes, i.max_rel_err, i.worst_analytic, i.worst_numeric, i.worst_index
            )?;
        }
        write!(
            f,
            "  => {} (tol {:.1e})",
            if self.passed() { "ok" } else { "FAILED" },
            self.tol
        )
    }
}

/// Relative error with a unit floor, so tiny gradients are judged on
/// absolute error and large ones on relative error.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Compares the tape's gradients of `f` against central differences.
///
/// `f` must build a scalar loss from leaves handed to it in `inputs`
/// order; it runs once for the analytic pass and twice per probed
/// element. Probes every element unless `cfg.max_probes` trims it.
pub fn grad_check<F>(cfg: &GradCheck, inputs: &[(&str, Tensor<f64>)], f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = tensors.iter().map(|t| tape.leaf(t)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    // Analytic gradients.
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|(_, t)| tape.leaf(t)).collect();
    let loss = f(&tape, &vars)?;
    loss.backward()?;
    let grads: Vec<Tensor<f64>> = vars
        .iter()
        .map(|v| v.grad().expect("leaf gradient present after backward"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (which, (name, tensor)) in inputs.iter().enumerate() {
        let numel = tensor.numel();
        let probe_ids: Vec<usize> = if numel <= cfg.max_probes {
            (0..numel).collect()
        } else {
            sample(&mut rng, numel, cfg.max_probes).into_vec()
        };
        let mut report = InputReport {
            name: (*name).to_string(),
            probes: probe_ids.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for idx in probe_ids {
            let mut plus = base.clone();
            plus[which].data_mut()[idx] += cfg.h;
            let mut minus = base.clone();
            minus[which].data_mut()[idx] -= cfg.h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * cfg.h);
            let analytic = grads[which].data()[idx];
            let err = rel_err(analytic, numeric);
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst_index = idx;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        inputs: reports,
        tol: cfg.tol,
    })
}
