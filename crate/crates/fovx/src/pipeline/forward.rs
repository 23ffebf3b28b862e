//! One recurrent forward pass: coordinate maps, warped pyramids,
//! aggregation, decoding.
//!
//! Every input frame follows the same route: build a coordinate map by
//! forward-projecting its pixels into the present wide view and reversing
//! the projection, encode the frame, warp the feature pyramid with the map,
//! and fuse across frames with per-level attention. The present narrow
//! frame is just the degenerate case with an identity pose. When the
//! rollout state holds previous predictions, the most recent inputs switch
//! from dataset narrow frames to those wide outputs with their uncertainty
//! in the fourth channel, which is what makes consecutive outputs cohere.

use std::collections::VecDeque;

use crate::diffcore::{concat, Scalar, Tape, Tensor, Var};
use crate::geometry::{project_forward, reverse_coordinates, warp_features, CoordinateMap};
use crate::netblocks::{afa_aggregate, decode_with, encode, Bound};
use crate::scenegen::SequenceSample;

use super::{data_err, Ablation, Result};

/// Predictions of one step, still attached to the tape.
pub struct StepOutput<T: Scalar> {
    /// Wide RGB `[1, 3, H, W]` in (0, 1).
    pub rgb: Var<T>,
    /// Wide uncertainty `[1, 1, H, W]` in (0, 1).
    pub uncertainty: Var<T>,
    /// Per-level attention over frames, `[frames, 1, h, w]`, finest first.
    pub attention: [Var<T>; 3],
}

/// Detached recurrent state threaded through a sequence.
///
/// Holds up to `cap` previous outputs with their uncertainties (most recent
/// last) plus the decoder hidden states; cleared whenever a new sequence
/// starts so no prediction leaks across scene boundaries.
#[derive(Debug, Clone)]
pub struct RolloutState<T: Scalar> {
    outputs: VecDeque<(Tensor<T>, Tensor<T>)>,
    hidden: Option<[Tensor<T>; 3]>,
    cap: usize,
}

impl<T: Scalar> RolloutState<T> {
    /// State carrying at most `cap` previous outputs (the config's j).
    pub fn new(cap: usize) -> Self {
        Self {
            outputs: VecDeque::with_capacity(cap + 1),
            hidden: None,
            cap,
        }
    }

    /// Forgets everything; call at every sequence boundary.
    pub fn clear(&mut self) {
        self.outputs.clear();
        self.hidden = None;
    }

    /// Number of buffered previous outputs.
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty() && self.hidden.is_none()
    }

    /// Most recent previous output, if any: (RGB, uncertainty).
    pub fn latest(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.outputs.back().map(|(o, u)| (o, u))
    }

    /// RGB of the output `age` steps back (1 = latest), if buffered.
    pub fn past_rgb(&self, age: usize) -> Option<&Tensor<T>> {
        if age == 0 || age > self.outputs.len() {
            return None;
        }
        self.outputs.get(self.outputs.len() - age).map(|(o, _)| o)
    }

    /// Buffered previous outputs, oldest first: (RGB, uncertainty).
    pub fn buffered(&self) -> impl Iterator<Item = (&Tensor<T>, &Tensor<T>)> {
        self.outputs.iter().map(|(o, u)| (o, u))
    }

    /// Decoder hidden states from the previous step, if any.
    pub fn hidden(&self) -> Option<&[Tensor<T>; 3]> {
        self.hidden.as_ref()
    }

    /// Rebuilds a state from serialized pieces, e.g. when resuming a run.
    pub fn restore(
        cap: usize,
        outputs: Vec<(Tensor<T>, Tensor<T>)>,
        hidden: Option<[Tensor<T>; 3]>,
    ) -> Self {
        let mut state = Self::new(cap);
        for (o, u) in outputs {
            state.outputs.push_back((o, u));
            while state.outputs.len() > cap {
                state.outputs.pop_front();
            }
        }
        state.hidden = hidden;
        state
    }

    /// Records a step's detached values and rotates the ring buffer.
    pub fn advance(&mut self, out: &StepOutput<T>, hidden: &[Var<T>; 3]) {
        if self.cap > 0 {
            self.outputs.push_back((out.rgb.value(), out.uncertainty.value()));
            while self.outputs.len() > self.cap {
                self.outputs.pop_front();
            }
        }
        self.hidden = Some([hidden[0].value(), hidden[1].value(), hidden[2].value()]);
    }
}

/// Coordinate map sending the present wide view back into a source frame:
/// forward-project the source depth, then reverse onto the target grid.
fn frame_map(
    sample: &SequenceSample,
    depth: &Tensor<f32>,
    src_wide: bool,
    rel: &crate::geometry::Pose,
) -> Result<CoordinateMap> {
    let src_k = if src_wide { sample.intrinsics } else { sample.narrow_intrinsics() };
    let flow = project_forward(depth, &src_k, &sample.intrinsics, rel)?;
    let (h, w) = wide_extent(sample);
    Ok(reverse_coordinates(&flow, h, w))
}

fn wide_extent(sample: &SequenceSample) -> (usize, usize) {
    let shape = sample.target().wide_rgb.shape();
    (shape[1], shape[2])
}

/// Stacks RGB with a fourth channel (zeros for dataset frames, the previous
/// uncertainty for recurrent ones) as one `[1, 4, h, w]` input.
fn frame_input<T: Scalar>(
    tape: &Tape<T>,
    rgb: Tensor<T>,
    extra: Option<Tensor<T>>,
) -> Result<Var<T>> {
    let shape = rgb.shape().to_vec();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let rgb = tape.constant(&rgb.reshape(vec![1, 3, h, w])?);
    let extra = match extra {
        Some(u) => tape.constant(&u.reshape(vec![1, 1, h, w])?),
        None => tape.constant(&Tensor::full(vec![1, 1, h, w], T::zero())),
    };
    Ok(concat(&[rgb, extra], 1)?)
}

/// Runs the aggregation network on one sample.
///
/// `recurrent` caps how many of the most recent past inputs are replaced by
/// buffered previous outputs; pass 0 to force every input to come from the
/// dataset (teacher forcing). The returned state is `state` advanced by
/// this step's detached predictions.
pub fn forward_step<T: Scalar>(
    p: &Bound<T>,
    sample: &SequenceSample,
    state: &RolloutState<T>,
    recurrent: usize,
    ablation: Ablation,
) -> Result<(StepOutput<T>, RolloutState<T>)> {
    let k = sample.past_count();
    let (h, w) = wide_extent(sample);
    for (o, u) in &state.outputs {
        if o.shape() != [1, 3, h, w] || u.shape() != [1, 1, h, w] {
            return Err(data_err(format!(
                "rollout state holds a {:?} output but the sample is {h}x{w}",
                o.shape()
            )));
        }
    }
    let replaced = recurrent.min(state.outputs.len()).min(k);

    let anchor = p
        .var("enc.l0.down.w")
        .map_err(|e| data_err(format!("bound parameters lack the encoder: {e}")))?;
    let tape = anchor.tape().clone();

    // Per-frame encoded pyramids and full-resolution coordinate maps.
    let mut pyramids = Vec::with_capacity(k + 1);
    let mut maps = Vec::with_capacity(k + 1);
    for (i, frame) in sample.frames.iter().enumerate() {
        let age = k - i; // 0 for the present frame, 1 for t-1, ...
        let recur = age >= 1 && age <= replaced;
        let (input, map) = if recur {
            let (rgb, unc) = &state.outputs[state.outputs.len() - age];
            let map = frame_map(sample, &frame.wide_depth, true, &frame.rel_pose)?;
            (frame_input(&tape, rgb.clone(), Some(unc.clone()))?, map)
        } else {
            let map = frame_map(sample, &frame.narrow_depth, false, &frame.rel_pose)?;
            (frame_input(&tape, frame.narrow_rgb.cast::<T>(), None)?, map)
        };
        pyramids.push(encode(p, &input)?);
        maps.push(map);
    }

    // Warp every pyramid into the present wide view and fuse per level.
    let mut agg: Vec<Var<T>> = Vec::with_capacity(3);
    let mut attention: Vec<Var<T>> = Vec::with_capacity(3);
    for level in 0..3 {
        let stride = 1 << level;
        let mut feats = Vec::with_capacity(k + 1);
        let mut masks = Vec::with_capacity(k + 1);
        for (pyr, map) in pyramids.iter().zip(&maps) {
            let lvl = map.level(stride)?;
            feats.push(warp_features(&pyr[level], &lvl)?);
            let (lh, lw) = lvl.size();
            masks.push(tape.constant(&lvl.valid.cast::<T>().reshape(vec![1, 1, lh, lw])?));
        }
        let (fused, attn) = match ablation {
            Ablation::NoAfa => {
                let mut sum = feats[0].clone();
                for f in &feats[1..] {
                    sum = sum.add(f)?;
                }
                let n = feats.len();
                let fused = sum.mul_scalar(1.0 / n as f64)?;
                let (lh, lw) = (h / stride, w / stride);
                let uniform =
                    tape.constant(&Tensor::full(vec![n, 1, lh, lw], T::from_f64(1.0 / n as f64)));
                (fused, uniform)
            }
            _ => afa_aggregate(p, level, &feats, &masks)?,
        };
        agg.push(fused);
        attention.push(attn);
    }
    let agg: [Var<T>; 3] = agg.try_into().map_err(|_| data_err("pyramid level count"))?;
    let attention: [Var<T>; 3] =
        attention.try_into().map_err(|_| data_err("pyramid level count"))?;

    // Previous decoder hiddens ride into the current view on the t-1 map.
    let gsa = ablation != Ablation::NoGsa;
    let hidden_vars: Option<[Var<T>; 3]> = match (&state.hidden, gsa, k) {
        (Some(hid), true, 1..) => Some([
            tape.constant(&hid[0]),
            tape.constant(&hid[1]),
            tape.constant(&hid[2]),
        ]),
        _ => None,
    };
    let hidden_maps: Option<[CoordinateMap; 3]> = match &hidden_vars {
        Some(_) => {
            let prev = &sample.frames[k - 1];
            let wide = frame_map(sample, &prev.wide_depth, true, &prev.rel_pose)?;
            Some([wide.level(1)?, wide.level(2)?, wide.level(4)?])
        }
        None => None,
    };
    let prev = hidden_vars
        .as_ref()
        .zip(hidden_maps.as_ref())
        .map(|(v, m)| (v, m));

    let decoded = decode_with(p, &agg, prev, gsa)?;
    let out = StepOutput {
        rgb: decoded.rgb,
        uncertainty: decoded.uncertainty,
        attention,
    };
    let mut next = state.clone();
    next.advance(&out, &decoded.hidden);
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netblocks::params::generator_blobs;
    use crate::netblocks::{NetConfig, ParamStore};
    use crate::scenegen::{Scene, SceneSpec};

    fn toy_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            width: 32,
            height: 16,
            narrow_ratio: 0.5,
            steps: 8,
            speed: 0.2,
            yaw_rate: 0.01,
            pitch_amp: 0.0,
            box_count: 4,
            past_frames: 3,
        }
    }

    fn toy_sample(seed: u64, t: usize) -> SequenceSample {
        let scene = Scene::build(&toy_spec(seed)).unwrap();
        crate::scenegen::make_sequence(&scene, t).unwrap()
    }

    fn store() -> ParamStore {
        ParamStore::init(&generator_blobs(&NetConfig::tiny()), 17)
    }

    fn run(
        store: &ParamStore,
        sample: &SequenceSample,
        state: &RolloutState<f32>,
        recurrent: usize,
        ablation: Ablation,
    ) -> (StepOutput<f32>, RolloutState<f32>) {
        let tape = Tape::<f32>::new();
        let p = store.bind(&tape, false);
        forward_step(&p, sample, state, recurrent, ablation).unwrap()
    }

    #[test]
    fn outputs_have_wide_extent_and_open_unit_range() {
        let sample = toy_sample(3, 3);
        let (out, next) = run(&store(), &sample, &RolloutState::new(2), 2, Ablation::None);
        assert_eq!(out.rgb.shape(), vec![1, 3, 16, 32]);
        assert_eq!(out.uncertainty.shape(), vec![1, 1, 16, 32]);
        out.rgb.with_data(|d| assert!(d.iter().all(|&v| v > 0.0 && v < 1.0)));
        out.uncertainty.with_data(|d| assert!(d.iter().all(|&v| v > 0.0 && v < 1.0)));
        assert_eq!(next.len(), 1);
        assert!(!next.is_empty());
    }

    #[test]
    fn attention_distributes_unit_weight_over_frames() {
        let sample = toy_sample(4, 3);
        let (out, _) = run(&store(), &sample, &RolloutState::new(2), 0, Ablation::None);
        for (level, attn) in out.attention.iter().enumerate() {
            let shape = attn.shape();
            assert_eq!(shape[0], sample.frames.len());
            let (hw, frames) = (shape[2] * shape[3], shape[0]);
            attn.with_data(|d| {
                for px in 0..hw {
                    let total: f32 = (0..frames).map(|f| d[f * hw + px]).sum();
                    assert!((total - 1.0).abs() < 1e-5, "level {level} pixel {px}: {total}");
                }
            });
        }
    }

    #[test]
    fn empty_state_ignores_the_recurrent_budget() {
        let sample = toy_sample(5, 3);
        let st = store();
        let (a, _) = run(&st, &sample, &RolloutState::new(2), 2, Ablation::None);
        let (b, _) = run(&st, &sample, &RolloutState::new(2), 0, Ablation::None);
        assert_eq!(a.rgb.value().data(), b.rgb.value().data());
    }

    #[test]
    fn populated_state_changes_the_prediction_only_when_enabled() {
        let st = store();
        let s3 = toy_sample(6, 3);
        let s4 = toy_sample(6, 4);
        let (_, state) = run(&st, &s3, &RolloutState::new(2), 0, Ablation::None);

        let (fed, _) = run(&st, &s4, &state, 2, Ablation::None);
        let (forced, _) = run(&st, &s4, &state, 0, Ablation::None);
        let diff: f32 = fed
            .rgb
            .value()
            .data()
            .iter()
            .zip(forced.rgb.value().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0, "replacing inputs with previous outputs changed nothing");
    }

    #[test]
    fn cleared_state_makes_sequences_order_independent() {
        let st = store();
        let a = toy_sample(7, 3);
        let b = toy_sample(8, 3);

        let (_, after_a) = run(&st, &a, &RolloutState::new(2), 2, Ablation::None);
        let mut carried = after_a.clone();
        carried.clear();
        assert!(carried.is_empty());
        let (after_clear, _) = run(&st, &b, &carried, 2, Ablation::None);
        let (fresh, _) = run(&st, &b, &RolloutState::new(2), 2, Ablation::None);
        assert_eq!(
            after_clear.rgb.value().data(),
            fresh.rgb.value().data(),
            "cleared state must erase the previous sequence"
        );

        let (leaked, _) = run(&st, &b, &after_a, 2, Ablation::None);
        let diff: f32 = leaked
            .rgb
            .value()
            .data()
            .iter()
            .zip(fresh.rgb.value().data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 0.0, "stale state should have influenced the output");
    }

    #[test]
    fn state_from_a_different_extent_is_rejected() {
        let st = store();
        let small = toy_sample(9, 3);
        let (_, state) = run(&st, &small, &RolloutState::new(2), 0, Ablation::None);

        let mut spec = toy_spec(9);
        spec.width = 64;
        spec.height = 32;
        let big = crate::scenegen::make_sequence(&Scene::build(&spec).unwrap(), 3).unwrap();
        let tape = Tape::<f32>::new();
        let p = st.bind(&tape, false);
        let Err(err) = forward_step(&p, &big, &state, 2, Ablation::None) else {
            panic!("mismatched state was accepted");
        };
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn mean_pooling_ablation_reports_uniform_attention() {
        let sample = toy_sample(10, 3);
        let (out, _) = run(&store(), &sample, &RolloutState::new(2), 0, Ablation::NoAfa);
        let n = sample.frames.len() as f32;
        for attn in &out.attention {
            attn.with_data(|d| assert!(d.iter().all(|&v| v == 1.0 / n)));
        }
    }

    #[test]
    fn gsa_ablation_ignores_decoder_hidden_state() {
        let st = store();
        let s3 = toy_sample(11, 3);
        let s4 = toy_sample(11, 4);
        let (_, state) = run(&st, &s3, &RolloutState::new(0), 0, Ablation::NoGsa);
        assert_eq!(state.len(), 0, "cap 0 buffers no outputs");

        let (with_hidden, _) = run(&st, &s4, &state, 0, Ablation::NoGsa);
        let (without, _) = run(&st, &s4, &RolloutState::new(0), 0, Ablation::NoGsa);
        assert_eq!(with_hidden.rgb.value().data(), without.rgb.value().data());
    }
}
