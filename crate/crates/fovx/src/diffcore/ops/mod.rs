//! Differentiable op set. Each op runs its forward kernel eagerly, checks
//! the output for non-finite values, and registers a reverse rule on the
//! tape. Image ops take NCHW tensors.

mod conv;
mod elementwise;
mod reduce;
mod resample;
mod sample;
mod shape;
mod softmax;

pub use shape::concat;
