//! Alternating adversarial training over narrow-to-wide sequences.
//!
//! Each optimizer step draws `batch` consecutive samples from a
//! deterministic schedule (scenes shuffled once per epoch, targets visited
//! in order within a scene, rollout state cleared at every sequence
//! start). One forward pass per sample feeds two backward passes: first
//! the critics score the prediction detached from the generator, then the
//! tape gradients are re-armed and the full generator objective is
//! backpropagated with the critics held fixed. Both updates apply every
//! step, critics first. Early steps run teacher-forced (no recurrent
//! feedback) until a fifth of the run has passed.
//!
//! Checkpoints bundle generator and critic blobs, both optimizer states,
//! the step counter, and the rollout buffers, so a resumed run continues
//! bit-for-bit where the original left off.

use std::collections::BTreeMap;
use std::fs;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::losses::{
    loss_adversarial, loss_fa_total, loss_l1u, loss_perceptual, GanRole, PerceptualExtractor,
};
use crate::netblocks::params::{discriminator_blobs, generator_blobs, BlobSpec};
use crate::netblocks::{
    disc_image, disc_temporal, read_checkpoint, write_checkpoint, NetConfig, ParamStore,
};
use crate::scenegen::{Dataset, SequenceSample};

use super::config::{Ablation, DepthSource, RunConfig, TEACHER_FORCING_FRAC};
use super::depthopt::{optimize_depth_cg, DepthOptConfig};
use super::forward::{forward_step, RolloutState};
use super::optim::Adam;
use super::{config_err, data_err, numeric_err, PipelineError, Result};

/// Column order of `losses.csv`; one row per optimizer step.
pub const LOSS_CSV_HEADER: &str = "step,l1u,perc,adv_g,adv_d,advT_g,advT_d,cg,total";

/// Steps of photometric depth optimization per frame when the run feeds
/// estimated instead of rendered depth into the coordinate maps.
const DEPTH_OPT_STEPS: usize = 60;

/// Checkpoint key of the completed-step counter.
const STEP_KEY: &str = "trainer.step";

/// Loss components averaged over one optimizer step's batch.
#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    /// 1-based index of the completed step.
    pub step: usize,
    /// Uncertainty-weighted reconstruction term.
    pub l1u: f64,
    /// Random-feature perceptual term.
    pub perc: f64,
    /// Generator side of the image critic.
    pub adv_g: f64,
    /// Critic side of the image critic.
    pub adv_d: f64,
    /// Generator side of the temporal critic.
    pub advt_g: f64,
    /// Critic side of the temporal critic.
    pub advt_d: f64,
    /// Final photometric-consistency loss of the depth estimates; zero
    /// when rendered depth is used directly.
    pub cg: f64,
    /// Weighted generator objective actually minimized.
    pub total: f64,
}

impl StepLosses {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            self.step,
            self.l1u,
            self.perc,
            self.adv_g,
            self.adv_d,
            self.advt_g,
            self.advt_d,
            self.cg,
            self.total
        )
    }

    pub fn all_finite(&self) -> bool {
        [
            self.l1u, self.perc, self.adv_g, self.adv_d, self.advt_g, self.advt_d, self.cg,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// What a finished (or resumed) run produced.
#[derive(Debug, Default)]
pub struct TrainReport {
    /// Per-step losses in order, starting at the first step this run
    /// itself executed.
    pub losses: Vec<StepLosses>,
    /// Checkpoints written, oldest first.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(PathBuf::as_path)
    }
}

/// Training loop state: data, both parameter stores, their optimizers,
/// and the recurrent rollout threaded between consecutive samples.
pub struct Trainer {
    cfg: RunConfig,
    dataset: Dataset,
    gen: ParamStore,
    disc: ParamStore,
    opt_gen: Adam,
    opt_disc: Adam,
    extractor: PerceptualExtractor,
    state: RolloutState<f32>,
    step: usize,
}

impl Trainer {
    /// Opens the dataset, checks it against the config, and initializes
    /// or resumes parameters and optimizers.
    pub fn new(cfg: RunConfig) -> Result<Trainer> {
        cfg.validate()?;
        let dataset = Dataset::open(&cfg.dataset)?;
        if dataset.width != cfg.width || dataset.height != cfg.height {
            return Err(config_err(format!(
                "dataset frames are {}x{}, config wants {}x{}",
                dataset.width, dataset.height, cfg.width, cfg.height
            )));
        }
        if dataset.past_frames != cfg.past_frames {
            return Err(config_err(format!(
                "dataset provides {} past frames, config wants {}",
                dataset.past_frames, cfg.past_frames
            )));
        }
        if (dataset.narrow_ratio - cfg.narrow_ratio).abs() > 1e-9 {
            return Err(config_err(format!(
                "dataset narrow_ratio {} does not match config {}",
                dataset.narrow_ratio, cfg.narrow_ratio
            )));
        }
        if dataset.scenes <= cfg.holdout {
            return Err(config_err(format!(
                "{} scenes leave nothing to train on after holding out {}",
                dataset.scenes, cfg.holdout
            )));
        }
        if dataset.samples_per_scene() == 0 {
            return Err(data_err(format!(
                "scenes of {} steps are too short for {} past frames",
                dataset.steps, dataset.past_frames
            )));
        }

        let mut gen = ParamStore::init(&generator_blobs(&cfg.net), cfg.seed);
        let mut disc = ParamStore::init(&discriminator_blobs(&cfg.net), cfg.seed.wrapping_add(1));
        let mut opt_gen = Adam::new(&gen, cfg.lr_gen, cfg.beta1, cfg.beta2);
        let mut opt_disc = Adam::new(&disc, cfg.lr_disc, cfg.beta1, cfg.beta2);
        let mut state = RolloutState::new(cfg.recurrent_frames);
        let mut step = 0;
        if let Some(path) = &cfg.resume {
            let blobs = read_checkpoint(path)?;
            gen = take_store(&blobs, &generator_blobs(&cfg.net))?;
            disc = take_store(&blobs, &discriminator_blobs(&cfg.net))?;
            opt_gen.load("opt.gen", &blobs)?;
            opt_disc.load("opt.disc", &blobs)?;
            step = unpack_counter(&blobs, STEP_KEY)? as usize;
            state = restore_state(&blobs, cfg.recurrent_frames);
        }
        let extractor = PerceptualExtractor::new(cfg.loss.perceptual_seed);
        Ok(Trainer {
            cfg,
            dataset,
            gen,
            disc,
            opt_gen,
            opt_disc,
            extractor,
            state,
            step,
        })
    }

    pub fn completed_steps(&self) -> usize {
        self.step
    }

    pub fn gen_params(&self) -> &ParamStore {
        &self.gen
    }

    pub fn disc_params(&self) -> &ParamStore {
        &self.disc
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn train_scenes(&self) -> usize {
        self.dataset.scenes - self.cfg.holdout
    }

    /// Scene visit order for one epoch, reproducible from the run seed but
    /// different between epochs.
    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train_scenes()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        order.shuffle(&mut rng);
        order
    }

    /// Scene and target step of the `idx`-th sample of the run, plus
    /// whether it opens a new sequence.
    fn schedule(&self, idx: usize) -> (usize, usize, bool) {
        let sps = self.dataset.samples_per_scene();
        let per_epoch = self.train_scenes() * sps;
        let epoch = idx / per_epoch;
        let within = idx % per_epoch;
        let scene = self.epoch_order(epoch)[within / sps];
        let offset = within % sps;
        (scene, self.dataset.first_target() + offset, offset == 0)
    }

    /// Whether recurrent feedback is still disabled at the current step.
    fn teacher_forced(&self) -> bool {
        let forced = (TEACHER_FORCING_FRAC * self.cfg.steps as f64).ceil() as usize;
        self.step < forced
    }

    /// Runs one optimizer step: accumulates critic and generator
    /// gradients over the batch, then applies the critic update followed
    /// by the generator update.
    pub fn step_once(&mut self) -> Result<StepLosses> {
        let mut gen_grads = zero_grads(&self.gen);
        let mut disc_grads = zero_grads(&self.disc);
        let mut acc = [0.0f64; 7];
        let mut cg = 0.0;
        for b in 0..self.cfg.batch {
            let idx = self.step * self.cfg.batch + b;
            let (scene, t, start) = self.schedule(idx);
            if start {
                self.state.clear();
            }
            let mut sample = self.dataset.sample(scene, t)?;
            if self.cfg.depth_source == DepthSource::Optimized {
                cg += self.replace_depths(&mut sample)?;
            }
            let part = self.sample_pass(&sample, &mut gen_grads, &mut disc_grads)?;
            if !part.iter().all(|v| v.is_finite()) {
                return Err(self.nan_abort(scene, t, &part));
            }
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
        let inv = 1.0 / self.cfg.batch as f64;
        for g in gen_grads.values_mut().chain(disc_grads.values_mut()) {
            for v in g.data_mut() {
                *v *= inv as f32;
            }
        }
        self.opt_disc.step(&mut self.disc, disc_grads)?;
        self.opt_gen.step(&mut self.gen, gen_grads)?;
        self.step += 1;
        Ok(StepLosses {
            step: self.step,
            l1u: acc[0] * inv,
            perc: acc[1] * inv,
            adv_g: acc[2] * inv,
            adv_d: acc[3] * inv,
            advt_g: acc[4] * inv,
            advt_d: acc[5] * inv,
            cg: cg * inv,
            total: acc[6] * inv,
        })
    }

    /// Forward once, backward twice. Returns
    /// `[l1u, perc, adv_g, adv_d, advT_g, advT_d, total]` and advances the
    /// rollout state.
    fn sample_pass(
        &mut self,
        sample: &SequenceSample,
        gen_grads: &mut BTreeMap<String, Tensor<f32>>,
        disc_grads: &mut BTreeMap<String, Tensor<f32>>,
    ) -> Result<[f64; 7]> {
        let cfg = &self.cfg;
        let tape: Tape<f32> = Tape::new();
        let pg = self.gen.bind(&tape, true);
        let pd = self.disc.bind(&tape, true);

        let recurrent = if self.teacher_forced() { 0 } else { cfg.recurrent_frames };
        let (out, next) = forward_step(&pg, sample, &self.state, recurrent, cfg.ablation)?;

        let k = sample.past_count();
        let shape = sample.target().wide_rgb.shape().to_vec();
        let (h, w) = (shape[1], shape[2]);
        let wide = |t: &Tensor<f32>| -> Result<Var<f32>> {
            Ok(tape.constant(&t.clone().reshape(vec![1, 3, h, w])?))
        };
        let gt = wide(&sample.target().wide_rgb)?;
        let mask = tape.constant(&sample.mask.clone().reshape(vec![1, 1, h, w])?);

        // The last three wide frames, oldest first. Once the rollout
        // buffers previous predictions they stand in for the two older
        // frames, matching what the generator actually produced; at
        // sequence starts the rendered wide frames fill in.
        let prev = |age: usize| -> Result<Var<f32>> {
            match self.state.past_rgb(age) {
                Some(o) => Ok(tape.constant(o)),
                None => wide(&sample.frames[k - age].wide_rgb),
            }
        };
        let (p2, p1) = (prev(2)?, prev(1)?);
        let w2 = wide(&sample.frames[k - 2].wide_rgb)?;
        let w1 = wide(&sample.frames[k - 1].wide_rgb)?;

        // Critic pass: the prediction enters detached so generator blobs
        // see none of these gradients.
        let fake = tape.constant(&out.rgb.value());
        let d_real = disc_image(&pd, &gt, &mask)?;
        let d_fake = disc_image(&pd, &fake, &mask)?;
        let adv_d = loss_adversarial(Some(&d_real), &d_fake, &mask, GanRole::Discriminator)?;
        let t_real = disc_temporal(&pd, &[w2, w1, gt.clone()], &mask)?;
        let t_fake = disc_temporal(&pd, &[p2.clone(), p1.clone(), fake], &mask)?;
        let advt_d = loss_adversarial(Some(&t_real), &t_fake, &mask, GanRole::Discriminator)?;
        adv_d.add(&advt_d)?.backward()?;
        accumulate(disc_grads, pd.grads());
        tape.reset_grads();

        // Generator pass: critics participate but their gradients are
        // discarded, so they act as fixed scoring functions.
        let l1u = match cfg.ablation {
            Ablation::NoUncertainty => out.rgb.sub(&gt)?.abs()?.mean_all()?,
            _ => {
                let eps = cfg.loss.uncertainty_eps;
                let u = out.uncertainty.clamp(eps, 1.0 - eps)?;
                loss_l1u(&out.rgb, &gt, &u, &mask, eps)?
            }
        };
        let perc = loss_perceptual(&out.rgb, &gt, &mask, &self.extractor)?;
        let g_fake = disc_image(&pd, &out.rgb, &mask)?;
        let adv_g = loss_adversarial(None, &g_fake, &mask, GanRole::Generator)?;
        let gt_fake = disc_temporal(&pd, &[p2, p1, out.rgb.clone()], &mask)?;
        let advt_g = loss_adversarial(None, &gt_fake, &mask, GanRole::Generator)?;
        let total = loss_fa_total(&l1u, &perc, &adv_g, &advt_g, &cfg.loss)?;
        total.backward()?;
        accumulate(gen_grads, pg.grads());

        self.state = next;
        Ok([
            f64::from(l1u.item()),
            f64::from(perc.item()),
            f64::from(adv_g.item()),
            f64::from(adv_d.item()),
            f64::from(advt_g.item()),
            f64::from(advt_d.item()),
            f64::from(total.item()),
        ])
    }

    /// Swaps every frame's narrow depth for a photometric estimate
    /// optimized against its nearest neighbor, and returns the mean final
    /// consistency loss.
    fn replace_depths(&self, sample: &mut SequenceSample) -> Result<f64> {
        let intr = sample.narrow_intrinsics();
        let opt = DepthOptConfig {
            steps: DEPTH_OPT_STEPS,
            loss: self.cfg.loss.clone(),
            ..DepthOptConfig::default()
        };
        let n = sample.frames.len();
        let mut total = 0.0;
        for i in 0..n {
            let j = if i == 0 { 1 } else { i - 1 };
            // Both rel_poses map into the present camera; chain through
            // it to express frame i's camera in source j's.
            let rel = sample.frames[j]
                .rel_pose
                .inverse()
                .compose(&sample.frames[i].rel_pose);
            let shape = sample.frames[i].narrow_depth.shape().to_vec();
            let init = Tensor::full(shape.clone(), 0.2f32);
            let result = optimize_depth_cg(
                &sample.frames[i].narrow_rgb,
                &[(sample.frames[j].narrow_rgb.clone(), rel)],
                &intr,
                &init,
                &opt,
            )?;
            total += result.losses.last().copied().unwrap_or(0.0);
            let depth: Vec<f32> = result.inverse_depth.data().iter().map(|d| 1.0 / d).collect();
            sample.frames[i].narrow_depth = Tensor::new(shape, depth)?;
        }
        Ok(total / n as f64)
    }

    fn nan_abort(&self, scene: usize, t: usize, part: &[f64; 7]) -> PipelineError {
        let names = ["l1u", "perc", "adv_g", "adv_d", "advT_g", "advT_d", "total"];
        let mut text = format!(
            "non-finite loss during optimizer step {} (scene {scene}, target step {t}, seed {})\n",
            self.step + 1,
            self.cfg.seed
        );
        for (name, value) in names.iter().zip(part) {
            text.push_str(&format!("  {name} = {value}\n"));
        }
        let path = self.cfg.out.join(format!("nan_dump_step_{:06}.txt", self.step + 1));
        let _ = fs::create_dir_all(&self.cfg.out);
        let _ = fs::write(&path, text);
        numeric_err(format!(
            "non-finite loss at step {} (scene {scene}, target {t}); diagnostics in {}",
            self.step + 1,
            path.display()
        ))
    }

    /// Writes model blobs, both optimizer states, the step counter, and
    /// the rollout buffers as one checkpoint.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut blobs = self.gen.blobs().clone();
        for (name, t) in self.disc.blobs() {
            blobs.insert(name.clone(), t.clone());
        }
        self.opt_gen.save("opt.gen", &mut blobs);
        self.opt_disc.save("opt.disc", &mut blobs);
        blobs.insert(STEP_KEY.to_string(), pack_counter(self.step as u64));
        for (i, (o, u)) in self.state.buffered().enumerate() {
            blobs.insert(format!("trainer.state.o{i}"), o.clone());
            blobs.insert(format!("trainer.state.u{i}"), u.clone());
        }
        if let Some(hidden) = self.state.hidden() {
            for (l, t) in hidden.iter().enumerate() {
                blobs.insert(format!("trainer.state.h{l}"), t.clone());
            }
        }
        write_checkpoint(path, &blobs)?;
        Ok(())
    }
}

/// Runs the configured loop to completion: schedules samples, alternates
/// critic and generator updates, appends a CSV row per step, and writes
/// periodic checkpoints plus a final one.
pub fn train_run(cfg: &RunConfig) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg.clone())?;
    fs::create_dir_all(&cfg.out)
        .map_err(|e| data_err(format!("cannot create {}: {e}", cfg.out.display())))?;
    let csv_path = cfg.out.join("losses.csv");
    let fresh = cfg.resume.is_none();
    let mut csv = OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&csv_path)
        .map_err(|e| data_err(format!("cannot open {}: {e}", csv_path.display())))?;
    if fresh {
        writeln!(csv, "{LOSS_CSV_HEADER}")
            .map_err(|e| data_err(format!("cannot write {}: {e}", csv_path.display())))?;
    }
    let mut report = TrainReport::default();
    while trainer.completed_steps() < cfg.steps {
        let losses = trainer.step_once()?;
        writeln!(csv, "{}", losses.csv_row())
            .map_err(|e| data_err(format!("cannot write {}: {e}", csv_path.display())))?;
        report.losses.push(losses);
        let done = trainer.completed_steps();
        if done % cfg.checkpoint_every == 0 || done == cfg.steps {
            let path = cfg.out.join(format!("ckpt_{done:06}.fckpt"));
            trainer.save_checkpoint(&path)?;
            report.checkpoints.push(path);
        }
    }
    Ok(report)
}

/// Reads a checkpoint and rebuilds both parameter stores, inferring the
/// layer widths from the stored blob shapes.
pub fn load_model(path: &Path) -> Result<(NetConfig, ParamStore, ParamStore)> {
    let blobs = read_checkpoint(path)?;
    let net = net_config_from_blobs(&blobs)?;
    let gen = take_store(&blobs, &generator_blobs(&net))?;
    let disc = take_store(&blobs, &discriminator_blobs(&net))?;
    Ok((net, gen, disc))
}

/// Recovers the layer widths of a checkpointed model from conv weight
/// shapes.
pub fn net_config_from_blobs(blobs: &BTreeMap<String, Tensor<f32>>) -> Result<NetConfig> {
    let dim = |name: &str, axis: usize| -> Result<usize> {
        let t = blobs
            .get(name)
            .ok_or_else(|| data_err(format!("checkpoint is missing blob '{name}'")))?;
        t.shape()
            .get(axis)
            .copied()
            .ok_or_else(|| data_err(format!("blob '{name}' has too few axes")))
    };
    let net = NetConfig {
        input_channels: dim("enc.l0.down.w", 1)?,
        enc_widths: [
            dim("enc.l0.down.w", 0)?,
            dim("enc.l1.down.w", 0)?,
            dim("enc.l2.down.w", 0)?,
        ],
        dec_widths: [
            dim("dec.l0.fuse.w", 0)?,
            dim("dec.l1.fuse.w", 0)?,
            dim("dec.l2.fuse.w", 0)?,
        ],
        disc_widths: [
            dim("disc_q.c0.w", 0)?,
            dim("disc_q.c1.w", 0)?,
            dim("disc_q.c2.w", 0)?,
        ],
    };
    net.validate()?;
    Ok(net)
}

/// Pulls the named blobs out of a checkpoint map, checking shapes.
fn take_store(blobs: &BTreeMap<String, Tensor<f32>>, specs: &[BlobSpec]) -> Result<ParamStore> {
    let mut map = BTreeMap::new();
    for spec in specs {
        let t = blobs
            .get(&spec.name)
            .ok_or_else(|| data_err(format!("checkpoint is missing blob '{}'", spec.name)))?;
        if t.shape() != spec.shape {
            return Err(data_err(format!(
                "blob '{}' has shape {:?}, expected {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
        map.insert(spec.name.clone(), t.clone());
    }
    Ok(ParamStore::from_blobs(map))
}

fn restore_state(blobs: &BTreeMap<String, Tensor<f32>>, cap: usize) -> RolloutState<f32> {
    let mut outputs = Vec::new();
    for i in 0.. {
        match (
            blobs.get(&format!("trainer.state.o{i}")),
            blobs.get(&format!("trainer.state.u{i}")),
        ) {
            (Some(o), Some(u)) => outputs.push((o.clone(), u.clone())),
            _ => break,
        }
    }
    let hidden = match (
        blobs.get("trainer.state.h0"),
        blobs.get("trainer.state.h1"),
        blobs.get("trainer.state.h2"),
    ) {
        (Some(a), Some(b), Some(c)) => Some([a.clone(), b.clone(), c.clone()]),
        _ => None,
    };
    RolloutState::restore(cap, outputs, hidden)
}

fn pack_counter(t: u64) -> Tensor<f32> {
    Tensor::new(vec![2], vec![(t >> 32) as f32, (t & 0xffff_ffff) as f32]).expect("counter shape")
}

fn unpack_counter(blobs: &BTreeMap<String, Tensor<f32>>, key: &str) -> Result<u64> {
    let t = blobs
        .get(key)
        .ok_or_else(|| data_err(format!("checkpoint is missing counter '{key}'")))?;
    if t.numel() != 2 {
        return Err(data_err(format!("counter '{key}' has wrong shape")));
    }
    Ok(((t.data()[0] as u64) << 32) | (t.data()[1] as u64))
}

fn zero_grads(store: &ParamStore) -> BTreeMap<String, Tensor<f32>> {
    store
        .blobs()
        .iter()
        .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape().to_vec())))
        .collect()
}

/// Adds present gradients into the accumulator; blobs a pass never
/// touched (e.g. ablated branches) simply keep their zeros.
fn accumulate(into: &mut BTreeMap<String, Tensor<f32>>, grads: Vec<(String, Option<Tensor<f32>>)>) {
    for (name, grad) in grads {
        if let Some(grad) = grad {
            let slot = into.get_mut(&name).expect("gradient for a declared blob");
            for (a, b) in slot.data_mut().iter_mut().zip(grad.data()) {
                *a += *b;
            }
        }
    }
}
