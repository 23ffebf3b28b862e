//! Run configuration: plain-text key=value files with `#` comments.
//!
//! Every key has a default except `dataset`, which training and evaluation
//! need to locate their scenes. Unknown keys are rejected so a typo cannot
//! silently fall back to a default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::losses::LossConfig;
use crate::netblocks::NetConfig;

use super::{config_err, Result};

/// Share of training steps that feed ground-truth narrow frames instead of
/// previous outputs, warming the recurrent path up before it sees its own
/// predictions.
pub const TEACHER_FORCING_FRAC: f64 = 0.2;

/// Where the depths behind the coordinate maps come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DepthSource {
    /// Ground-truth depth straight from the renderer.
    #[default]
    GroundTruth,
    /// Per-frame inverse depth fitted by [`super::optimize_depth_cg`].
    Optimized,
}

/// Structural switches for the ablation comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Replace attention-based aggregation with a plain mean over frames.
    NoAfa,
    /// Strip the gated self-attention blocks out of the decoder.
    NoGsa,
    /// Train with a plain L1 term instead of the uncertainty-weighted one.
    NoUncertainty,
}

/// Everything a run needs, parsed from a key=value file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Dataset directory (required).
    pub dataset: PathBuf,
    /// Output directory for checkpoints and logs.
    pub out: PathBuf,
    /// Past frames per sample (k).
    pub past_frames: usize,
    /// How many of the most recent inputs are replaced by previous outputs (j).
    pub recurrent_frames: usize,
    /// Width fraction of the narrow crop.
    pub narrow_ratio: f64,
    /// Wide frame extent.
    pub width: usize,
    pub height: usize,
    /// Network channel layout.
    pub net: NetConfig,
    /// Learning rates for the generator and the discriminators.
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Moment decay rates shared by both optimizers.
    pub beta1: f64,
    pub beta2: f64,
    /// Samples accumulated per parameter update.
    pub batch: usize,
    /// Total optimizer steps.
    pub steps: usize,
    pub seed: u64,
    /// A checkpoint is written every this many steps (and at the end).
    pub checkpoint_every: usize,
    /// Scenes at the end of the dataset reserved for evaluation.
    pub holdout: usize,
    /// Checkpoint to continue from; empty for a fresh run.
    pub resume: Option<PathBuf>,
    pub depth_source: DepthSource,
    pub ablation: Ablation,
    pub loss: LossConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            out: PathBuf::from("run"),
            past_frames: 5,
            recurrent_frames: 2,
            narrow_ratio: 0.5,
            width: 128,
            height: 64,
            net: NetConfig::default(),
            lr_gen: 2e-4,
            lr_disc: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 1,
            steps: 1000,
            seed: 7,
            checkpoint_every: 500,
            holdout: 2,
            resume: None,
            depth_source: DepthSource::GroundTruth,
            ablation: Ablation::None,
            loss: LossConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_widths(key: &str, value: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| config_err(format!("key '{key}': want three comma-separated widths")))
}

impl RunConfig {
    /// Parses config text. Keys may appear at most once; unknown keys and
    /// unparsable values are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut have_dataset = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(config_err(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            match key {
                "dataset" => {
                    cfg.dataset = PathBuf::from(value);
                    have_dataset = true;
                }
                "out" => cfg.out = PathBuf::from(value),
                "past_frames" => cfg.past_frames = parse_num(key, value)?,
                "recurrent_frames" => cfg.recurrent_frames = parse_num(key, value)?,
                "narrow_ratio" => cfg.narrow_ratio = parse_num(key, value)?,
                "width" => cfg.width = parse_num(key, value)?,
                "height" => cfg.height = parse_num(key, value)?,
                "enc_widths" => cfg.net.enc_widths = parse_widths(key, value)?,
                "dec_widths" => cfg.net.dec_widths = parse_widths(key, value)?,
                "disc_widths" => cfg.net.disc_widths = parse_widths(key, value)?,
                "lr_gen" => cfg.lr_gen = parse_num(key, value)?,
                "lr_disc" => cfg.lr_disc = parse_num(key, value)?,
                "beta1" => cfg.beta1 = parse_num(key, value)?,
                "beta2" => cfg.beta2 = parse_num(key, value)?,
                "batch" => cfg.batch = parse_num(key, value)?,
                "steps" => cfg.steps = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_num(key, value)?,
                "holdout" => cfg.holdout = parse_num(key, value)?,
                "resume" => {
                    cfg.resume = (!value.is_empty()).then(|| PathBuf::from(value));
                }
                "depth_source" => {
                    cfg.depth_source = match value {
                        "ground-truth" => DepthSource::GroundTruth,
                        "optimized" => DepthSource::Optimized,
                        other => {
                            return Err(config_err(format!(
                                "key 'depth_source': want ground-truth or optimized, got '{other}'"
                            )))
                        }
                    }
                }
                "ablation" => {
                    cfg.ablation = match value {
                        "none" => Ablation::None,
                        "no-afa" => Ablation::NoAfa,
                        "no-gsa" => Ablation::NoGsa,
                        "no-uncertainty" => Ablation::NoUncertainty,
                        other => {
                            return Err(config_err(format!(
                                "key 'ablation': want none, no-afa, no-gsa, or no-uncertainty, got '{other}'"
                            )))
                        }
                    }
                }
                "alpha" => cfg.loss.alpha = parse_num(key, value)?,
                "lambda_s" => cfg.loss.lambda_s = parse_num(key, value)?,
                "lambda1" => cfg.loss.lambda1 = parse_num(key, value)?,
                "lambda2" => cfg.loss.lambda2 = parse_num(key, value)?,
                "uncertainty_eps" => cfg.loss.uncertainty_eps = parse_num(key, value)?,
                "perceptual_seed" => cfg.loss.perceptual_seed = parse_num(key, value)?,
                other => return Err(config_err(format!("unknown key '{other}'"))),
            }
        }
        if !have_dataset {
            return Err(config_err("missing required key 'dataset'"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Renders the config back into parseable key=value text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = |s: &mut String, k: &str, v: String| {
            writeln!(s, "{k}={v}").expect("string write");
        };
        w(&mut s, "dataset", self.dataset.display().to_string());
        w(&mut s, "out", self.out.display().to_string());
        w(&mut s, "past_frames", self.past_frames.to_string());
        w(&mut s, "recurrent_frames", self.recurrent_frames.to_string());
        w(&mut s, "narrow_ratio", self.narrow_ratio.to_string());
        w(&mut s, "width", self.width.to_string());
        w(&mut s, "height", self.height.to_string());
        let triple = |v: [usize; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        w(&mut s, "enc_widths", triple(self.net.enc_widths));
        w(&mut s, "dec_widths", triple(self.net.dec_widths));
        w(&mut s, "disc_widths", triple(self.net.disc_widths));
        w(&mut s, "lr_gen", self.lr_gen.to_string());
        w(&mut s, "lr_disc", self.lr_disc.to_string());
        w(&mut s, "beta1", self.beta1.to_string());
        w(&mut s, "beta2", self.beta2.to_string());
        w(&mut s, "batch", self.batch.to_string());
        w(&mut s, "steps", self.steps.to_string());
        w(&mut s, "seed", self.seed.to_string());
        w(&mut s, "checkpoint_every", self.checkpoint_every.to_string());
        w(&mut s, "holdout", self.holdout.to_string());
        if let Some(resume) = &self.resume {
            w(&mut s, "resume", resume.display().to_string());
        }
        let depth = match self.depth_source {
            DepthSource::GroundTruth => "ground-truth",
            DepthSource::Optimized => "optimized",
        };
        w(&mut s, "depth_source", depth.to_string());
        let ablation = match self.ablation {
            Ablation::None => "none",
            Ablation::NoAfa => "no-afa",
            Ablation::NoGsa => "no-gsa",
            Ablation::NoUncertainty => "no-uncertainty",
        };
        w(&mut s, "ablation", ablation.to_string());
        w(&mut s, "alpha", self.loss.alpha.to_string());
        w(&mut s, "lambda_s", self.loss.lambda_s.to_string());
        w(&mut s, "lambda1", self.loss.lambda1.to_string());
        w(&mut s, "lambda2", self.loss.lambda2.to_string());
        w(&mut s, "uncertainty_eps", self.loss.uncertainty_eps.to_string());
        w(&mut s, "perceptual_seed", self.loss.perceptual_seed.to_string());
        s
    }

    /// Width of the narrow crop.
    pub fn narrow_width(&self) -> usize {
        (self.width as f64 * self.narrow_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.recurrent_frames > self.past_frames {
            return Err(config_err(format!(
                "recurrent_frames {} exceeds past_frames {}",
                self.recurrent_frames, self.past_frames
            )));
        }
        if self.past_frames < 2 {
            return Err(config_err(
                "past_frames must be at least 2 so the temporal critic sees three frames",
            ));
        }
        if !(self.narrow_ratio > 0.0 && self.narrow_ratio < 1.0) {
            return Err(config_err(format!("narrow_ratio {} outside (0, 1)", self.narrow_ratio)));
        }
        if self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(config_err(format!(
                "frame {}x{} must be divisible by 8 for the discriminators",
                self.width, self.height
            )));
        }
        if self.narrow_width() % 4 != 0 {
            return Err(config_err(format!(
                "narrow width {} must be divisible by 4 for the feature pyramid",
                self.narrow_width()
            )));
        }
        for (name, v) in [
            ("lr_gen", self.lr_gen),
            ("lr_disc", self.lr_disc),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(config_err(format!("{name} {v} must be finite and nonnegative")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(config_err("moment decays must be below 1"));
        }
        if self.batch == 0 || self.steps == 0 || self.checkpoint_every == 0 {
            return Err(config_err("batch, steps, and checkpoint_every must be positive"));
        }
        self.net.validate().map_err(|e| config_err(e.to_string()))?;
        self.loss.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.past_frames, 5);
        assert_eq!(cfg.recurrent_frames, 2);
        assert_eq!(cfg.narrow_ratio, 0.5);
        assert_eq!(cfg.lr_gen, 2e-4);
        assert_eq!(cfg.lr_disc, 2e-4);
        assert_eq!((cfg.beta1, cfg.beta2), (0.5, 0.999));
        assert_eq!(cfg.net, NetConfig::default());
        assert_eq!(cfg.depth_source, DepthSource::GroundTruth);
        assert_eq!(cfg.ablation, Ablation::None);
    }

    #[test]
    fn parses_comments_whitespace_and_overrides() {
        let text = "\
# toy run
dataset = data/toy   # trailing comment
out=scratch/run1
steps= 42
enc_widths = 4, 6, 8
ablation=no-afa
lambda1=1.5
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("data/toy"));
        assert_eq!(cfg.out, PathBuf::from("scratch/run1"));
        assert_eq!(cfg.steps, 42);
        assert_eq!(cfg.net.enc_widths, [4, 6, 8]);
        assert_eq!(cfg.ablation, Ablation::NoAfa);
        assert_eq!(cfg.loss.lambda1, 1.5);
        assert_eq!(cfg.batch, 1);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_error() {
        let unknown = RunConfig::parse("dataset=d\nlearning_rate=1\n");
        assert!(unknown.unwrap_err().to_string().contains("unknown key 'learning_rate'"));
        let dup = RunConfig::parse("dataset=d\nsteps=1\nsteps=2\n");
        assert!(dup.unwrap_err().to_string().contains("duplicate key 'steps'"));
        let bare = RunConfig::parse("dataset=d\nsteps\n");
        assert!(bare.unwrap_err().to_string().contains("expected key=value"));
        let bad = RunConfig::parse("dataset=d\nsteps=ten\n");
        assert!(bad.unwrap_err().to_string().contains("cannot parse 'ten'"));
    }

    #[test]
    fn missing_dataset_is_rejected() {
        let err = RunConfig::parse("steps=5\n").unwrap_err();
        assert!(err.to_string().contains("dataset"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn structural_invariants_are_enforced() {
        assert!(RunConfig::parse("dataset=d\nrecurrent_frames=9\n").is_err());
        assert!(RunConfig::parse("dataset=d\nwidth=100\n").is_err());
        assert!(RunConfig::parse("dataset=d\nnarrow_ratio=1.5\n").is_err());
        assert!(RunConfig::parse("dataset=d\nbeta2=1.0\n").is_err());
        assert!(RunConfig::parse("dataset=d\nbatch=0\n").is_err());
        assert!(RunConfig::parse("dataset=d\ndepth_source=lidar\n").is_err());
    }

    #[test]
    fn text_round_trip_preserves_every_field() {
        let mut cfg = RunConfig::default();
        cfg.dataset = PathBuf::from("data/toy");
        cfg.net = NetConfig::small();
        cfg.steps = 123;
        cfg.resume = Some(PathBuf::from("run/ckpt_000100.fckpt"));
        cfg.ablation = Ablation::NoGsa;
        cfg.depth_source = DepthSource::Optimized;
        cfg.loss.lambda_s = 0.0;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
