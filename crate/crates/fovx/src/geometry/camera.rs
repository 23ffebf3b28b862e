//! Camera intrinsics, rigid poses, and the view masks derived from them.

use super::{GeomError, Result};
use crate::diffcore::Tensor;

/// Pinhole intrinsics in pixel units.
///
/// A narrow camera cut out of a wide one keeps the focal lengths and shifts
/// the principal point by the crop origin; see [`Intrinsics::cropped`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Intrinsics for an image of the given size with a 90 degree horizontal
    /// field of view and square pixels.
    pub fn for_size(width: usize, height: usize) -> Self {
        let f = width as f64 / 2.0;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Intrinsics of a crop whose origin sits at `(x0, y0)` in this camera.
    pub fn cropped(&self, x0: usize, y0: usize) -> Self {
        Self {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx - x0 as f64,
            cy: self.cy - y0 as f64,
        }
    }

    /// Lift a pixel at depth `d` to a camera-space point.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d]
    }

    /// Project a camera-space point to pixel coordinates. The caller is
    /// responsible for checking that `p[2]` is positive.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.fx * (p[0] / p[2]) + self.cx,
            self.fy * (p[1] / p[2]) + self.cy,
        ]
    }
}

/// Rigid transform stored as a row-major 4x4 matrix with its bottom row
/// fixed to `[0, 0, 0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(pub [[f64; 4]; 4]);

impl Pose {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Pose(m)
    }

    pub fn from_parts(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        Pose(m)
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut p = Self::identity();
        for i in 0..3 {
            p.0[i][3] = t[i];
        }
        p
    }

    /// Rotation about the y (up/down) axis; positive angles turn the camera
    /// toward positive x.
    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], [0.0; 3])
    }

    /// Rotation about the x (right) axis; with y pointing down, positive
    /// angles pitch the camera upward.
    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], [0.0; 3])
    }

    /// Matrix product `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for (k, row) in other.0.iter().enumerate() {
                    acc += self.0[i][k] * row[j];
                }
                m[i][j] = acc;
            }
        }
        Pose(m)
    }

    /// Rigid inverse: transposed rotation, negated rotated translation.
    pub fn inverse(&self) -> Pose {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.0[j][i];
            }
        }
        for i in 0..3 {
            m[i][3] = -(m[i][0] * self.0[0][3] + m[i][1] * self.0[1][3] + m[i][2] * self.0[2][3]);
        }
        m[3][3] = 1.0;
        Pose(m)
    }

    /// Transform that maps points expressed in the `from` camera into the
    /// `to` camera, given both camera-to-world poses.
    pub fn relative(from_cam_to_world: &Pose, to_cam_to_world: &Pose) -> Pose {
        to_cam_to_world.inverse().compose(from_cam_to_world)
    }

    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, row) in self.0.iter().take(3).enumerate() {
            out[i] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
        }
        out
    }

    /// Checks that the rotation block is orthonormal with positive
    /// determinant and that the bottom row is `[0, 0, 0, 1]`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for row in self.0.iter().take(3) {
                    dot += row[i] * row[j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((dot - want).abs());
            }
        }
        let r = &self.0;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        dev = dev.max((det - 1.0).abs());
        for (j, &v) in self.0[3].iter().enumerate() {
            let want = if j == 3 { 1.0 } else { 0.0 };
            dev = dev.max((v - want).abs());
        }
        if dev > tol {
            return Err(GeomError::BadRotation { dev });
        }
        Ok(())
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (i, row) in self.0.iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(row);
        }
        out
    }

    pub fn from_row_major(v: &[f64; 16]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row.copy_from_slice(&v[i * 4..i * 4 + 4]);
        }
        Pose(m)
    }
}

/// Per-pixel center coordinates as a `[2, h, w]` tensor, channel 0 holding
/// x and channel 1 holding y.
pub fn pixel_grid(h: usize, w: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = x as f32;
            data[h * w + y * w + x] = y as f32;
        }
    }
    Tensor::new(vec![2, h, w], data).expect("grid shape")
}

/// Horizontal extent `(x0, width)` of a centered narrow view covering
/// `ratio` of a wide image `w` pixels across.
pub fn narrow_span(w: usize, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(GeomError::Invalid {
            op: "narrow_span",
            detail: format!("ratio {ratio} outside (0, 1]"),
        });
    }
    let nw = ((w as f64 * ratio).round() as usize).clamp(1, w);
    Ok(((w - nw) / 2, nw))
}

/// Mask over the wide image that is 1 outside the centered narrow view and
/// 0 inside it, shaped `[1, h, w]`.
pub fn narrow_mask(h: usize, w: usize, ratio: f64) -> Result<Tensor<f32>> {
    let (x0, nw) = narrow_span(w, ratio)?;
    let mut data = vec![1.0f32; h * w];
    for y in 0..h {
        for v in &mut data[y * w + x0..y * w + x0 + nw] {
            *v = 0.0;
        }
    }
    Ok(Tensor::new(vec![1, h, w], data).expect("mask shape"))
}
