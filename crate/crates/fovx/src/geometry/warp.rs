//! Gathering source features through a reversed coordinate map, and the
//! differentiable depth-to-coordinates path used by depth optimization.

use super::camera::{pixel_grid, Intrinsics, Pose};
use super::coordmap::CoordinateMap;
use super::project::NEAR_PLANE;
use super::{GeomError, Result};
use crate::diffcore::{concat, Scalar, Tape, Tensor, Var};

/// Samples `features` (`[1, c, sh, sw]`) at the map's source coordinates,
/// producing `[1, c, th, tw]` with zeros where the map is invalid.
///
/// Stored coordinates are exact integers, so valid taps copy source values
/// bitwise; the sentinel `(-1, -1)` of invalid entries falls outside the
/// source and the zero-padding of the sampler plus the validity mask keep
/// those outputs at zero. Gradients flow into `features` only.
pub fn warp_features<T: Scalar>(features: &Var<T>, map: &CoordinateMap) -> Result<Var<T>> {
    if features.shape().len() != 4 || features.shape()[0] != 1 {
        return Err(GeomError::Invalid {
            op: "warp_features",
            detail: format!("features must be [1, c, h, w], got {:?}", features.shape()),
        });
    }
    let (th, tw) = map.size();
    let tape = features.tape();
    let coords = tape.constant(&map.coords.cast::<T>().reshape(vec![1, 2, th, tw])?);
    let valid = tape.constant(&map.valid.cast::<T>().reshape(vec![1, 1, th, tw])?);
    Ok(features.grid_sample(&coords)?.mul(&valid)?)
}

/// Differentiable backward-warp coordinates: for every target pixel with
/// tape-tracked depth (`[1, 1, h, w]`), the position in a source image
/// where the corresponding scene point lands. `relative` maps
/// target-camera coordinates into the source camera. Feeding the result to
/// `grid_sample` builds warped candidates whose gradient reaches the depth
/// map, which is what direct depth optimization trains on. Points pushed
/// behind the camera are clamped to the near plane instead of erroring, so
/// the loss surface stays finite.
pub fn rigid_resample_coords<T: Scalar>(
    depth: &Var<T>,
    intr: &Intrinsics,
    relative: &Pose,
) -> Result<Var<T>> {
    let shape = depth.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 1 {
        return Err(GeomError::Invalid {
            op: "rigid_resample_coords",
            detail: format!("depth must be [1, 1, h, w], got {shape:?}"),
        });
    }
    relative.validate(1e-6)?;
    let (h, w) = (shape[2], shape[3]);
    let tape = depth.tape();
    let grid = tape.constant(&pixel_grid(h, w).cast::<T>().reshape(vec![1, 2, h, w])?);
    let u = grid.slice(1, 0, 1)?;
    let v = grid.slice(1, 1, 1)?;

    let x = u.add_scalar(-intr.cx)?.mul_scalar(1.0 / intr.fx)?.mul(depth)?;
    let y = v.add_scalar(-intr.cy)?.mul_scalar(1.0 / intr.fy)?.mul(depth)?;
    let m = relative.0;
    let row = |r: [f64; 4]| -> crate::diffcore::Result<Var<T>> {
        x.mul_scalar(r[0])?
            .add(&y.mul_scalar(r[1])?)?
            .add(&depth.mul_scalar(r[2])?)?
            .add_scalar(r[3])
    };
    let xs = row(m[0])?;
    let ys = row(m[1])?;
    let zs = row(m[2])?;
    let near = tape.constant(&Tensor::full(vec![1, 1, h, w], T::from_f64(NEAR_PLANE)));
    let zs = zs.maximum(&near)?;
    let us = xs.div(&zs)?.mul_scalar(intr.fx)?.add_scalar(intr.cx)?;
    let vs = ys.div(&zs)?.mul_scalar(intr.fy)?.add_scalar(intr.cy)?;
    Ok(concat(&[us, vs], 1)?)
}

/// Plain-tensor warp for evaluation paths, same sampling rules as
/// [`warp_features`]. `image` is `[c, sh, sw]`, the result `[c, th, tw]`.
pub fn warp_image(image: &Tensor<f32>, map: &CoordinateMap) -> Result<Tensor<f32>> {
    if image.shape().len() != 3 {
        return Err(GeomError::Invalid {
            op: "warp_image",
            detail: format!("image must be [c, h, w], got {:?}", image.shape()),
        });
    }
    let c = image.shape()[0];
    let (sh, sw) = (image.shape()[1], image.shape()[2]);
    let tape: Tape<f32> = Tape::new();
    let feat = tape.constant(&image.clone().reshape(vec![1, c, sh, sw])?);
    let (th, tw) = map.size();
    let out = warp_features(&feat, map)?;
    Ok(out.value().reshape(vec![c, th, tw])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::geometry::camera::{Intrinsics, Pose};
    use crate::geometry::coordmap::reverse_coordinates;
    use crate::geometry::project::project_forward;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_map_copies_bitwise() {
        let img = Tensor::<f32>::rand_uniform(vec![3, 8, 16], -1.0, 1.0, &mut rng(5));
        let map = CoordinateMap::identity(8, 16);
        let out = warp_image(&img, &map).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn identity_projection_warp_is_bit_exact() {
        let k = Intrinsics::for_size(16, 8);
        let depth = Tensor::full(vec![8, 16], 3.0);
        let fwd = project_forward(&depth, &k, &k, &Pose::identity()).unwrap();
        let map = reverse_coordinates(&fwd, 8, 16);
        let img = Tensor::<f32>::rand_uniform(vec![3, 8, 16], 0.0, 1.0, &mut rng(9));
        let out = warp_image(&img, &map).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn invalid_targets_come_out_zero() {
        let mut map = CoordinateMap::identity(2, 3);
        map.coords.data_mut()[0] = -1.0;
        map.coords.data_mut()[6] = -1.0;
        map.valid.data_mut()[0] = 0.0;
        let img = Tensor::full(vec![1, 2, 3], 7.0);
        let out = warp_image(&img, &map).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[1], 7.0);
    }

    #[test]
    fn gather_matches_direct_lookup() {
        use rand::Rng;
        let mut rng = rng(3);
        let (h, w) = (5, 7);
        let img = Tensor::<f32>::rand_uniform(vec![2, h, w], -2.0, 2.0, &mut rng);
        let mut map = CoordinateMap::identity(h, w);
        for i in 0..h * w {
            let sx = rng.gen_range(0..w);
            let sy = rng.gen_range(0..h);
            map.coords.data_mut()[i] = sx as f32;
            map.coords.data_mut()[h * w + i] = sy as f32;
        }
        let out = warp_image(&img, &map).unwrap();
        for c in 0..2 {
            for i in 0..h * w {
                let sx = map.coords.data()[i] as usize;
                let sy = map.coords.data()[h * w + i] as usize;
                assert_eq!(out.data()[c * h * w + i], img.data()[c * h * w + sy * w + sx]);
            }
        }
    }

    #[test]
    fn gradients_reach_only_sampled_pixels() {
        let tape: Tape<f32> = Tape::new();
        let feat = tape.leaf(&Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f32));
        let mut map = CoordinateMap::identity(1, 2);
        // Both outputs read source pixel (1, 1).
        for i in 0..2 {
            map.coords.data_mut()[i] = 1.0;
            map.coords.data_mut()[2 + i] = 1.0;
        }
        let out = warp_features(&feat, &map).unwrap();
        out.sum_all().unwrap().backward().unwrap();
        assert_eq!(feat.grad().unwrap().data(), &[0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn resample_coords_under_identity_motion_are_the_pixel_grid() {
        let tape: Tape<f64> = Tape::new();
        let depth = tape.constant(&Tensor::rand_uniform(vec![1, 1, 4, 6], 1.0, 8.0, &mut rng(4)));
        let intr = Intrinsics::for_size(6, 4);
        let coords = rigid_resample_coords(&depth, &intr, &Pose::identity()).unwrap();
        let want = crate::geometry::pixel_grid(4, 6).cast::<f64>();
        coords.with_data(|d| {
            for (a, b) in d.iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        });
    }

    #[test]
    fn resample_coords_match_a_per_pixel_projection_loop() {
        let (h, w) = (5, 8);
        let intr = Intrinsics::for_size(w, h);
        let relative = Pose::rot_y(0.04).compose(&Pose::translation([0.2, -0.05, 0.3]));
        let depth = Tensor::<f64>::rand_uniform(vec![1, 1, h, w], 2.0, 6.0, &mut rng(5));

        let tape: Tape<f64> = Tape::new();
        let coords = rigid_resample_coords(&tape.constant(&depth), &intr, &relative)
            .unwrap()
            .value();
        for y in 0..h {
            for x in 0..w {
                let d = depth.at(&[0, 0, y, x]);
                let p = intr.unproject(x as f64, y as f64, d);
                let q = relative.transform(p);
                let uv = intr.project(q);
                assert!((coords.at(&[0, 0, y, x]) - uv[0]).abs() < 1e-9, "({y},{x})");
                assert!((coords.at(&[0, 1, y, x]) - uv[1]).abs() < 1e-9, "({y},{x})");
            }
        }
    }

    #[test]
    fn resample_coords_gradients_match_finite_differences() {
        use crate::diffcore::{grad_check, GradCheck};
        let (h, w) = (3, 4);
        let intr = Intrinsics::for_size(w, h);
        let relative = Pose::rot_y(-0.03).compose(&Pose::translation([0.1, 0.02, 0.25]));
        let depth = Tensor::<f64>::rand_uniform(vec![1, 1, h, w], 2.0, 5.0, &mut rng(6));
        let report = grad_check(&GradCheck::default(), &[("depth", depth)], |_, vars| {
            let coords = rigid_resample_coords(&vars[0], &intr, &relative).unwrap();
            coords.sq()?.mean_all()
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
