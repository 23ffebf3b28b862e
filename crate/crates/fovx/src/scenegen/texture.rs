//! Hash-based procedural textures.
//!
//! Everything bottoms out in an integer lattice hash, so texture values are
//! identical across platforms and runs. Value noise interpolates the
//! lattice smoothly; several octaves stacked give surfaces enough gradient
//! for photometric objectives to bite on.

/// Uniform value in [0, 1) from a lattice point and a stream seed.
pub fn lattice(ix: i64, iy: i64, seed: u32) -> f32 {
    let mut h = (ix as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ ((seed as u64) << 32 | seed as u64).wrapping_mul(0xd6e8_feb8_6659_fd93);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// Smoothly interpolated lattice noise in [0, 1).
pub fn value_noise(x: f64, y: f64, seed: u32) -> f32 {
    let fx = x.floor();
    let fy = y.floor();
    let (ix, iy) = (fx as i64, fy as i64);
    let tx = (x - fx) as f32;
    let ty = (y - fy) as f32;
    let sx = tx * tx * (3.0 - 2.0 * tx);
    let sy = ty * ty * (3.0 - 2.0 * ty);
    let v00 = lattice(ix, iy, seed);
    let v10 = lattice(ix + 1, iy, seed);
    let v01 = lattice(ix, iy + 1, seed);
    let v11 = lattice(ix + 1, iy + 1, seed);
    let top = v00 + (v10 - v00) * sx;
    let bot = v01 + (v11 - v01) * sx;
    top + (bot - top) * sy
}

/// Three octaves of value noise, normalized back to [0, 1).
pub fn octaves(x: f64, y: f64, seed: u32) -> f32 {
    let mut acc = 0.0f32;
    let mut amp = 1.0f32;
    let mut norm = 0.0f32;
    let mut freq = 1.0f64;
    for octave in 0..3 {
        acc += amp * value_noise(x * freq, y * freq, seed.wrapping_add(octave * 7919));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    acc / norm
}

/// Two-tone checker over unit cells.
pub fn checker(x: f64, y: f64) -> f32 {
    let c = (x.floor() as i64 + y.floor() as i64).rem_euclid(2);
    if c == 0 {
        0.35
    } else {
        0.65
    }
}
