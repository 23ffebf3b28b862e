//! Ray-cast renderer with exact per-pixel depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::texture::{checker, octaves, value_noise};
use super::{Result, SceneError, SceneSpec};
use crate::diffcore::Tensor;
use crate::exec;
use crate::geometry::{Intrinsics, Pose, NEAR_PLANE};

/// Camera height above the ground plane in meters.
pub const CAMERA_HEIGHT: f64 = 1.5;

/// Depth assigned to rays that hit nothing.
pub const SKY_DEPTH: f32 = 100.0;

/// Ground hits farther than this count as sky.
const MAX_RANGE: f64 = 5000.0;

/// One rendered wide frame with its exact depth and camera-to-world pose.
#[derive(Debug, Clone)]
pub struct Frame {
    /// RGB in [0,1], `[3, h, w]`, every channel snapped to a multiple of
    /// 1/255 so 8-bit image files round-trip losslessly.
    pub rgb: Tensor<f32>,
    /// Planar depth (camera-frame z) in meters, `[h, w]`, at least the
    /// near plane everywhere.
    pub depth: Tensor<f32>,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
struct Block {
    min: [f64; 3],
    max: [f64; 3],
    tint: [f32; 3],
    tex_seed: u32,
}

impl Block {
    /// Slab intersection. Returns entry distance and the hit axis, or None
    /// if the ray misses. Entry behind `t_min` means the origin is inside
    /// or past the block.
    fn hit(&self, org: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut axis = 0;
        for i in 0..3 {
            if dir[i].abs() < 1e-12 {
                if org[i] < self.min[i] || org[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let mut t0 = (self.min[i] - org[i]) / dir[i];
            let mut t1 = (self.max[i] - org[i]) / dir[i];
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_enter {
                t_enter = t0;
                axis = i;
            }
            t_exit = t_exit.min(t1);
            if t_enter > t_exit {
                return None;
            }
        }
        Some((t_enter, axis))
    }

    fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|i| p[i] > self.min[i] - margin && p[i] < self.max[i] + margin)
    }
}

/// A fully sampled world plus its camera trajectory.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    blocks: Vec<Block>,
    poses: Vec<Pose>,
    ground_seed: u32,
    sky_seed: u32,
}

impl Scene {
    /// Samples the world and trajectory from `spec.seed`. The same spec
    /// always builds the same scene.
    pub fn build(spec: &SceneSpec) -> Result<Scene> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x5851_f42d_4c95_7f2d));
        let ground_seed = rng.gen::<u32>();
        let sky_seed = rng.gen::<u32>();

        // Per-scene motion jitter stays inside the spec magnitudes so the
        // validated flow bound still holds.
        let speed = spec.speed * rng.gen_range(0.6..1.0);
        let yaw_rate = spec.yaw_rate * rng.gen_range(-1.0..1.0);
        let pitch_amp = spec.pitch_amp * rng.gen_range(0.5..1.0);

        let mut poses = Vec::with_capacity(spec.steps);
        let mut pos = [0.0, -CAMERA_HEIGHT, 0.0];
        for step in 0..spec.steps {
            let yaw = yaw_rate * step as f64;
            let pitch = pitch_amp * (std::f64::consts::TAU * step as f64 / spec.steps as f64).sin();
            let rot = Pose::rot_y(yaw).compose(&Pose::rot_x(pitch));
            poses.push(rot.compose_translation(pos));
            let heading = rot.transform([0.0, 0.0, 1.0]);
            pos[0] += heading[0] * speed;
            pos[2] += heading[2] * speed;
        }

        let track_len = speed * spec.steps as f64;
        let mut blocks = Vec::with_capacity(spec.box_count);
        'next_block: for _ in 0..spec.box_count {
            for _attempt in 0..32 {
                let sx = rng.gen_range(0.6..3.0);
                let sy = rng.gen_range(1.0..3.5);
                let sz = rng.gen_range(0.6..3.0);
                let cx = rng.gen_range(-9.0..9.0);
                let cz = rng.gen_range(3.0..track_len + 22.0);
                let block = Block {
                    min: [cx - sx / 2.0, -sy, cz - sz / 2.0],
                    max: [cx + sx / 2.0, 0.0, cz + sz / 2.0],
                    tint: [
                        rng.gen_range(0.45..0.95),
                        rng.gen_range(0.45..0.95),
                        rng.gen_range(0.45..0.95),
                    ],
                    tex_seed: rng.gen::<u32>(),
                };
                let clear = poses
                    .iter()
                    .all(|p| !block.contains([p.0[0][3], p.0[1][3], p.0[2][3]], 1.0));
                if clear {
                    blocks.push(block);
                    continue 'next_block;
                }
            }
            // Crowded layout: placing fewer blocks keeps determinism.
        }

        Ok(Scene {
            spec: spec.clone(),
            intrinsics: Intrinsics::for_size(spec.width, spec.height),
            blocks,
            poses,
            ground_seed,
            sky_seed,
        })
    }

    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    pub fn pose(&self, step: usize) -> Result<Pose> {
        self.poses.get(step).copied().ok_or_else(|| SceneError::Spec {
            detail: format!("step {step} outside trajectory of {}", self.spec.steps),
        })
    }

    /// Ray casts the wide frame at `step`.
    pub fn render(&self, step: usize) -> Result<Frame> {
        let pose = self.pose(step)?;
        let org = [pose.0[0][3], pose.0[1][3], pose.0[2][3]];
        for block in &self.blocks {
            if block.contains(org, NEAR_PLANE) {
                return Err(SceneError::DegenerateCamera {
                    step,
                    detail: format!("camera at {org:?} inside a block"),
                });
            }
        }
        let (h, w) = (self.spec.height, self.spec.width);
        let k = self.intrinsics;
        // Rows shade independently into interleaved [r, g, b, depth]
        // pixels, then unzip into the planar layout.
        let mut px = vec![[0.0f32; 4]; h * w];
        exec::for_each_chunk(&mut px, w, |y, row| {
            for (x, out) in row.iter_mut().enumerate() {
                let (c, d) = self.shade(&pose, &k, x, y);
                *out = [c[0], c[1], c[2], d];
            }
        });
        let mut rgb = vec![0.0f32; 3 * h * w];
        let mut depth = vec![0.0f32; h * w];
        for (i, p) in px.iter().enumerate() {
            rgb[i] = p[0];
            rgb[h * w + i] = p[1];
            rgb[2 * h * w + i] = p[2];
            depth[i] = p[3];
        }
        Ok(Frame {
            rgb: Tensor::new(vec![3, h, w], rgb).expect("rgb shape"),
            depth: Tensor::new(vec![h, w], depth).expect("depth shape"),
            pose,
        })
    }

    /// Color and planar depth of one pixel. Pure in (pose, pixel).
    fn shade(&self, pose: &Pose, k: &Intrinsics, x: usize, y: usize) -> ([f32; 3], f32) {
        let dir_cam = [
            (x as f64 - k.cx) / k.fx,
            (y as f64 - k.cy) / k.fy,
            1.0,
        ];
        let rot = pose.rotation();
        let dir = rot.transform(dir_cam);
        let org = [pose.0[0][3], pose.0[1][3], pose.0[2][3]];

        // Nearest hit along the ray; t equals planar depth because the
        // camera-frame direction has unit z.
        let mut best: Option<(f64, [f32; 3])> = None;
        if dir[1] > 1e-9 {
            let t = -org[1] / dir[1];
            if t > NEAR_PLANE && t < MAX_RANGE {
                let hx = org[0] + t * dir[0];
                let hz = org[2] + t * dir[2];
                best = Some((t, self.ground_color(hx, hz)));
            }
        }
        for block in &self.blocks {
            if let Some((t, axis)) = block.hit(org, dir) {
                if t > NEAR_PLANE && best.map_or(true, |(bt, _)| t < bt) {
                    let hit = [org[0] + t * dir[0], org[1] + t * dir[1], org[2] + t * dir[2]];
                    best = Some((t, block_color(block, hit, axis)));
                }
            }
        }
        match best {
            Some((t, c)) => (snap(c), t as f32),
            None => (snap(self.sky_color(dir)), SKY_DEPTH),
        }
    }

    fn ground_color(&self, x: f64, z: f64) -> [f32; 3] {
        let base = checker(x * 0.5, z * 0.5);
        let n = octaves(x * 1.3, z * 1.3, self.ground_seed);
        let v = 0.55 * base + 0.45 * n;
        [v * 0.85 + 0.05, v * 0.75 + 0.08, v * 0.6 + 0.06]
    }

    fn sky_color(&self, dir: [f64; 3]) -> [f32; 3] {
        let len = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let up = (-dir[1] / len).clamp(0.0, 1.0) as f32;
        let drift = value_noise(dir[0] / len * 3.0, dir[1] / len * 3.0, self.sky_seed);
        let v = 0.08 * drift;
        [0.55 + 0.1 * up + v, 0.65 + 0.12 * up + v, 0.82 + 0.14 * up + v]
    }
}

fn block_color(block: &Block, hit: [f64; 3], axis: usize) -> [f32; 3] {
    let (u, v) = match axis {
        0 => (hit[2], hit[1]),
        1 => (hit[0], hit[2]),
        _ => (hit[0], hit[1]),
    };
    let n = octaves(u * 2.1, v * 2.1, block.tex_seed);
    let shade = 0.45 + 0.55 * n;
    [
        block.tint[0] * shade,
        block.tint[1] * shade,
        block.tint[2] * shade,
    ]
}

/// Quantize to exact multiples of 1/255 inside [0, 1].
fn snap(c: [f32; 3]) -> [f32; 3] {
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    [q(c[0]), q(c[1]), q(c[2])]
}

impl Pose {
    /// Same rotation with zero translation.
    pub(crate) fn rotation(&self) -> Pose {
        let mut p = *self;
        for i in 0..3 {
            p.0[i][3] = 0.0;
        }
        p
    }

    /// Same rotation with `t` as translation.
    pub(crate) fn compose_translation(&self, t: [f64; 3]) -> Pose {
        let mut p = self.rotation();
        for i in 0..3 {
            p.0[i][3] = t[i];
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let spec = SceneSpec {
            width: 32,
            height: 16,
            ..SceneSpec::desk(7)
        };
        let a = Scene::build(&spec).unwrap().render(3).unwrap();
        let b = Scene::build(&spec).unwrap().render(3).unwrap();
        assert_eq!(a.rgb.data(), b.rgb.data());
        assert_eq!(a.depth.data(), b.depth.data());
        assert_eq!(a.pose, b.pose);
    }

    #[test]
    fn ground_depth_matches_the_analytic_ray() {
        // Level camera, no blocks: rows at or above the principal row see
        // sky, rows below see the ground at h * fy / (v - cy).
        let spec = SceneSpec {
            width: 32,
            height: 16,
            box_count: 0,
            yaw_rate: 0.0,
            speed: 0.0,
            ..SceneSpec::desk(1)
        };
        let scene = Scene::build(&spec).unwrap();
        let frame = scene.render(0).unwrap();
        let k = scene.intrinsics;
        let (h, w) = (16, 32);
        for y in 0..h {
            let dy = y as f64 - k.cy;
            let want = if dy > 0.0 {
                (CAMERA_HEIGHT * k.fy / dy) as f32
            } else {
                SKY_DEPTH
            };
            for x in 0..w {
                let got = frame.depth.data()[y * w + x];
                assert!(
                    (got - want).abs() < want * 1e-5 + 1e-4,
                    "row {y}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn depth_respects_the_near_plane() {
        let scene = Scene::build(&SceneSpec {
            width: 32,
            height: 16,
            ..SceneSpec::desk(3)
        })
        .unwrap();
        for step in [0, 5, 19] {
            let f = scene.render(step).unwrap();
            assert!(f.depth.data().iter().all(|&d| d >= NEAR_PLANE as f32));
        }
    }

    #[test]
    fn rgb_is_snapped_to_8_bit_levels() {
        let scene = Scene::build(&SceneSpec {
            width: 32,
            height: 16,
            ..SceneSpec::desk(5)
        })
        .unwrap();
        let f = scene.render(2).unwrap();
        for &v in f.rgb.data() {
            assert!((0.0..=1.0).contains(&v));
            let scaled = v * 255.0;
            assert!((scaled - scaled.round()).abs() < 1e-4);
        }
    }

    #[test]
    fn block_slab_test_agrees_with_point_sampling() {
        let block = Block {
            min: [-1.0, -2.0, 4.0],
            max: [1.0, 0.0, 6.0],
            tint: [1.0, 1.0, 1.0],
            tex_seed: 0,
        };
        // Straight down the z axis from the origin at block center height.
        let (t, axis) = block.hit([0.0, -1.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert_eq!(axis, 2);
        // Miss to the side.
        assert!(block.hit([3.0, -1.0, 0.0], [0.0, 0.0, 1.0]).is_none());
        // From inside, entry is behind the origin.
        let (t_in, _) = block.hit([0.0, -1.0, 5.0], [0.0, 0.0, 1.0]).unwrap();
        assert!(t_in < 0.0);
        assert!(block.contains([0.0, -1.0, 5.0], 0.0));
    }

    #[test]
    fn scene_flow_stays_small() {
        // Measured mean flow between successive frames must stay under the
        // documented 20 px bound (it should be far under at desk motion).
        use crate::geometry::{project_forward, Pose};
        let spec = SceneSpec::desk(11);
        let scene = Scene::build(&spec).unwrap();
        let a = scene.render(8).unwrap();
        let b = scene.render(9).unwrap();
        let rel = Pose::relative(&a.pose, &b.pose);
        let fwd = project_forward(&a.depth, &scene.intrinsics, &scene.intrinsics, &rel).unwrap();
        let flow = fwd.flow(&scene.intrinsics, &scene.intrinsics);
        let n = spec.width * spec.height;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for i in 0..n {
            if fwd.valid.data()[i] == 1.0 {
                let fx = flow.data()[i] as f64;
                let fy = flow.data()[n + i] as f64;
                sum += (fx * fx + fy * fy).sqrt();
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!(mean < 20.0, "mean flow {mean:.2} px");
        assert!(mean > 0.01, "scene is not moving");
    }

    #[test]
    fn spec_validation_rejects_fast_motion() {
        let mut spec = SceneSpec::desk(1);
        spec.speed = 1.0;
        assert!(matches!(spec.validate(), Err(SceneError::Spec { .. })));
        let mut spec = SceneSpec::desk(1);
        spec.narrow_ratio = 0.0;
        assert!(spec.validate().is_err());
        assert!(SceneSpec::desk(1).validate().is_ok());
    }
}
