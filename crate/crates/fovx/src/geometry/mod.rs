//! Pinhole camera geometry for propagating past frames into the current
//! wide view.
//!
//! The direction of travel is forward: every pixel of a *source* frame is
//! lifted with its depth, moved through the relative rigid transform, and
//! projected into the *target* wide camera ([`project_forward`]). Because
//! warping needs a map indexed by target pixels, the forward map is then
//! reversed with a z-buffer ([`reverse_coordinates`]), and features are
//! gathered through the reversed map ([`warp_features`]).
//!
//! All projective math runs in f64 and is stored as f32; pixel coordinates
//! are pixel centers at integers, x along width, y along height.

mod camera;
mod coordmap;
mod io;
mod project;
mod warp;

pub use camera::{narrow_mask, narrow_span, pixel_grid, Intrinsics, Pose};
pub use coordmap::{reverse_coordinates, CoordinateMap};
pub use io::{read_depth, read_poses, write_depth, write_poses};
pub use project::{project_forward, FlowField, NEAR_PLANE};
pub use warp::{rigid_resample_coords, warp_features, warp_image};

#[derive(Debug, thiserror::Error)]
pub enum GeomError {
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("pose rotation is not orthonormal (max deviation {dev:.3e})")]
    BadRotation { dev: f64 },
    #[error("{path}: {detail}")]
    BadFile { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Diff(#[from] crate::diffcore::DiffError),
}

pub type Result<T> = std::result::Result<T, GeomError>;
