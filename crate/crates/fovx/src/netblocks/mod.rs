//! Building blocks of the frame-aggregation network.
//!
//! The generator is a shared conv encoder applied to every input frame
//! ([`encode`]), a per-level attention step that fuses the warped feature
//! pyramids ([`afa_aggregate`]), and a recurrent decoder with a gated patch
//! self-attention block at every scale plus RGB and uncertainty heads
//! ([`decode`]). Two strided patch discriminators, one on single images and
//! one on short frame stacks, provide the adversarial signal.
//!
//! All parameters live in a [`ParamStore`] of named blobs so checkpoints,
//! optimizers, and gradient checks can enumerate them uniformly; for a
//! forward pass a store is bound to a tape ([`ParamStore::bind`]) and blocks
//! look their blobs up by name.

mod afa;
mod attention;
mod checkpoint;
mod decoder;
mod disc;
mod encoder;

pub mod params;

pub use afa::afa_aggregate;
pub use attention::{gated_attention, patch_attention, FOOTPRINT};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use decoder::{decode, decode_with, DecodeOutput};
pub use disc::{disc_image, disc_temporal};
pub use encoder::encode;
pub use params::{BlobSpec, Bound, Init, ParamStore};

use crate::diffcore::DiffError;
use crate::geometry::GeomError;

/// Negative slope of the leaky ReLUs inside the generator.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Negative slope of the leaky ReLUs inside the discriminators.
pub const DISC_SLOPE: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("unknown parameter blob '{name}'")]
    MissingBlob { name: String },
    #[error("parameter blob '{name}': {detail}")]
    BadBlob { name: String, detail: String },
    #[error("{path}: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Channel layout of the network; every blob shape derives from this.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Encoder input channels: RGB plus one uncertainty channel.
    pub input_channels: usize,
    /// Encoder widths per pyramid level (strides 1, 2, 4).
    pub enc_widths: [usize; 3],
    /// Decoder widths per level, finest first.
    pub dec_widths: [usize; 3],
    /// Discriminator widths per stride-2 stage.
    pub disc_widths: [usize; 3],
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_channels: 4,
            enc_widths: [16, 32, 64],
            dec_widths: [16, 24, 32],
            disc_widths: [24, 48, 96],
        }
    }
}

impl NetConfig {
    /// Scaled-down layout for desk-size training runs.
    pub fn small() -> Self {
        Self {
            input_channels: 4,
            enc_widths: [8, 16, 32],
            dec_widths: [12, 16, 24],
            disc_widths: [16, 32, 64],
        }
    }

    /// Minimal layout for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_channels: 4,
            enc_widths: [3, 4, 5],
            dec_widths: [3, 4, 5],
            disc_widths: [4, 6, 8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .enc_widths
            .iter()
            .chain(&self.dec_widths)
            .chain(&self.disc_widths);
        if self.input_channels == 0 || widths.clone().any(|&w| w == 0) {
            return Err(NetError::BadBlob {
                name: "config".into(),
                detail: "channel widths must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Width of the query/key maps inside patch self-attention.
pub(crate) fn attn_mid(out_ch: usize) -> usize {
    (out_ch / 4).max(2)
}

/// Hidden width of the two-layer weight-generation stack.
pub(crate) fn attn_hidden(out_ch: usize) -> usize {
    (out_ch / 2).max(4)
}
