//! Named parameter blobs: declaration, initialization, and tape binding.
//!
//! Every learnable tensor in the model is a blob with a hierarchical name
//! (`enc.l0.down.w`, `dec.l2.attn.gamma1.b`, ...). Blob shapes are derived
//! from a [`NetConfig`] by [`generator_blobs`] / [`discriminator_blobs`],
//! values are held in a [`ParamStore`], and a forward pass binds the store
//! to a tape as leaves or constants ([`ParamStore::bind`]). Initialization
//! draws each blob from its own counter-based stream seeded by the blob
//! name, so values do not depend on enumeration order or on which other
//! blobs exist.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Scalar, Tape, Tensor, Var};

use super::{attn_hidden, attn_mid, NetConfig, NetError, Result};

/// How a blob is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean normal scaled by fan-in, for conv weights followed by a
    /// (leaky) rectifier.
    HeNormal,
    /// Zero-mean normal with a fixed standard deviation.
    Normal(f64),
    /// All zeros, for biases.
    Zero,
}

/// Declared name, shape, and init of one parameter blob.
#[derive(Clone, Debug)]
pub struct BlobSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Pushes the weight and bias specs of one conv layer.
pub fn conv_blobs(out: &mut Vec<BlobSpec>, name: &str, out_ch: usize, in_ch: usize, k: usize, init: Init) {
    out.push(BlobSpec {
        name: format!("{name}.w"),
        shape: vec![out_ch, in_ch, k, k],
        init,
    });
    out.push(BlobSpec {
        name: format!("{name}.b"),
        shape: vec![out_ch],
        init: Init::Zero,
    });
}

/// Blobs of one patch self-attention core reading `in_ch` channels and
/// producing `out_ch` channels.
pub(crate) fn attention_blobs(out: &mut Vec<BlobSpec>, prefix: &str, in_ch: usize, out_ch: usize) {
    let mid = attn_mid(out_ch);
    let hidden = attn_hidden(out_ch);
    let taps = super::FOOTPRINT * super::FOOTPRINT;
    conv_blobs(out, &format!("{prefix}.phi"), mid, in_ch, 1, Init::HeNormal);
    conv_blobs(out, &format!("{prefix}.psi"), mid, in_ch, 1, Init::HeNormal);
    conv_blobs(out, &format!("{prefix}.beta"), out_ch, in_ch, 1, Init::HeNormal);
    conv_blobs(out, &format!("{prefix}.gamma0"), hidden, mid * (taps + 1), 1, Init::HeNormal);
    conv_blobs(out, &format!("{prefix}.gamma1"), taps * out_ch, hidden, 1, Init::HeNormal);
    conv_blobs(out, &format!("{prefix}.r"), out_ch, out_ch, 3, Init::HeNormal);
}

/// Blobs of one gated self-attention block over `ch`-channel features. The
/// attention core reads the features concatenated with the warped hidden
/// state, so its input width is `2 * ch`.
pub(crate) fn gated_attention_blobs(out: &mut Vec<BlobSpec>, prefix: &str, ch: usize) {
    attention_blobs(out, &format!("{prefix}.attn"), 2 * ch, ch);
    conv_blobs(out, &format!("{prefix}.gate.g"), ch, ch, 3, Init::HeNormal);
    conv_blobs(out, &format!("{prefix}.gate.a"), ch, ch, 3, Init::HeNormal);
}

/// All generator blobs: encoder, per-level attention fusion, decoder with
/// gated self-attention, and the two output heads.
pub fn generator_blobs(cfg: &NetConfig) -> Vec<BlobSpec> {
    let [e0, e1, e2] = cfg.enc_widths;
    let [d0, d1, d2] = cfg.dec_widths;
    let mut out = Vec::new();

    conv_blobs(&mut out, "enc.l0.down", e0, cfg.input_channels, 3, Init::HeNormal);
    conv_blobs(&mut out, "enc.l0.res", e0, e0, 3, Init::HeNormal);
    conv_blobs(&mut out, "enc.l1.down", e1, e0, 3, Init::HeNormal);
    conv_blobs(&mut out, "enc.l1.res", e1, e1, 3, Init::HeNormal);
    conv_blobs(&mut out, "enc.l2.down", e2, e1, 3, Init::HeNormal);
    conv_blobs(&mut out, "enc.l2.res", e2, e2, 3, Init::HeNormal);

    for (level, &width) in cfg.enc_widths.iter().enumerate() {
        // Features plus one validity-mask channel in, one logit out.
        conv_blobs(&mut out, &format!("afa.l{level}"), 1, width + 1, 3, Init::HeNormal);
    }

    conv_blobs(&mut out, "dec.l2.fuse", d2, e2, 3, Init::HeNormal);
    conv_blobs(&mut out, "dec.l1.fuse", d1, e1 + d2, 3, Init::HeNormal);
    conv_blobs(&mut out, "dec.l0.fuse", d0, e0 + d1, 3, Init::HeNormal);
    for (level, &width) in cfg.dec_widths.iter().enumerate() {
        gated_attention_blobs(&mut out, &format!("dec.l{level}"), width);
    }
    conv_blobs(&mut out, "dec.rgb", 3, d0, 3, Init::HeNormal);
    conv_blobs(&mut out, "dec.unc", 1, d0, 3, Init::HeNormal);
    out
}

/// Input channels of the single-image discriminator: RGB plus the
/// out-of-view mask.
pub const DISC_IMAGE_CHANNELS: usize = 4;

/// Input channels of the temporal discriminator: three stacked RGB frames
/// plus the out-of-view mask.
pub const DISC_TEMPORAL_CHANNELS: usize = 10;

/// All discriminator blobs (both the image and the temporal stack critic).
pub fn discriminator_blobs(cfg: &NetConfig) -> Vec<BlobSpec> {
    let [q0, q1, q2] = cfg.disc_widths;
    let mut out = Vec::new();
    for (prefix, in_ch) in [("disc_q", DISC_IMAGE_CHANNELS), ("disc_t", DISC_TEMPORAL_CHANNELS)] {
        conv_blobs(&mut out, &format!("{prefix}.c0"), q0, in_ch, 3, Init::Normal(0.02));
        conv_blobs(&mut out, &format!("{prefix}.c1"), q1, q0, 3, Init::Normal(0.02));
        conv_blobs(&mut out, &format!("{prefix}.c2"), q2, q1, 3, Init::Normal(0.02));
        conv_blobs(&mut out, &format!("{prefix}.out"), 1, q2, 1, Init::Normal(0.02));
    }
    out
}

/// FNV-1a hash of the blob name, mixed with the global seed. Keyed by name
/// so adding or reordering blobs never reshuffles existing draws.
fn blob_seed(global: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in name.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finisher over the combined state.
    let mut z = h ^ global.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fill(spec: &BlobSpec, seed: u64) -> Tensor<f32> {
    match spec.init {
        Init::Zero => Tensor::zeros(spec.shape.clone()),
        Init::HeNormal => {
            let fan_in: usize = spec.shape[1..].iter().product();
            sample_normal(spec, (2.0 / fan_in as f64).sqrt(), seed)
        }
        Init::Normal(std) => sample_normal(spec, std, seed),
    }
}

fn sample_normal(spec: &BlobSpec, std: f64, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(blob_seed(seed, &spec.name));
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(spec.shape.clone(), |_| dist.sample(&mut rng) as f32)
}

/// Values of every declared blob, keyed by name. The map is ordered so
/// iteration, checkpoints, and optimizer state all agree on a layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    blobs: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    /// Draws fresh values for `specs` from streams derived from `seed`.
    pub fn init(specs: &[BlobSpec], seed: u64) -> Self {
        let blobs = specs
            .iter()
            .map(|s| (s.name.clone(), fill(s, seed)))
            .collect();
        Self { blobs }
    }

    /// All-zero values for `specs`.
    pub fn zeros(specs: &[BlobSpec]) -> Self {
        let blobs = specs
            .iter()
            .map(|s| (s.name.clone(), Tensor::zeros(s.shape.clone())))
            .collect();
        Self { blobs }
    }

    pub fn from_blobs(blobs: BTreeMap<String, Tensor<f32>>) -> Self {
        Self { blobs }
    }

    pub fn blobs(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.blobs
    }

    pub fn into_blobs(self) -> BTreeMap<String, Tensor<f32>> {
        self.blobs
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blobs.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.blobs.get(name).ok_or_else(|| NetError::MissingBlob {
            name: name.to_string(),
        })
    }

    /// Replaces a blob's values; the shape must match the declaration.
    pub fn set(&mut self, name: &str, value: Tensor<f32>) -> Result<()> {
        let slot = self.blobs.get_mut(name).ok_or_else(|| NetError::MissingBlob {
            name: name.to_string(),
        })?;
        if slot.shape() != value.shape() {
            return Err(NetError::BadBlob {
                name: name.to_string(),
                detail: format!("shape {:?} does not match {:?}", value.shape(), slot.shape()),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Mutable visit of every blob in name order (optimizer updates).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<f32>)) {
        for (name, tensor) in self.blobs.iter_mut() {
            f(name, tensor);
        }
    }

    /// Puts every blob on `tape`, as leaves when `trainable` (gradients are
    /// accumulated) or as constants otherwise (frozen, e.g. the critic seen
    /// by the generator step).
    pub fn bind<T: Scalar>(&self, tape: &Tape<T>, trainable: bool) -> Bound<T> {
        let vars = self
            .blobs
            .iter()
            .map(|(name, tensor)| {
                let cast = tensor.cast::<T>();
                let var = if trainable {
                    tape.leaf(&cast)
                } else {
                    tape.constant(&cast)
                };
                (name.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// A [`ParamStore`] bound to one tape; blocks fetch their blobs by name.
pub struct Bound<T: Scalar> {
    vars: BTreeMap<String, Var<T>>,
}

impl<T: Scalar> Bound<T> {
    /// Builds a binding from explicit (name, var) pairs; used by gradient
    /// checks that need individual blobs as probe inputs.
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var<T>)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var<T>> {
        self.vars.get(name).cloned().ok_or_else(|| NetError::MissingBlob {
            name: name.to_string(),
        })
    }

    /// Convolution with the weight and bias blobs under `name`.
    pub fn conv(&self, name: &str, x: &Var<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        Ok(x.conv2d(&w, &b, stride, padding)?)
    }

    /// Gradients of every bound blob, in name order; `None` for blobs that
    /// received no gradient.
    pub fn grads(&self) -> Vec<(String, Option<Tensor<T>>)> {
        self.vars
            .iter()
            .map(|(name, var)| (name.clone(), var.grad()))
            .collect()
    }
}
