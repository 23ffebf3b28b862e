//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   manifest.txt          key=value, one per line
//!   scene_0000/
//!     poses.txt           camera-to-world, one 4x4 row-major matrix per line
//!     frame_0000.png      wide RGB, 8-bit
//!     depth_0000.bin      wide depth, binary format of the geometry module
//!   scene_0001/ ...
//! ```
//!
//! Frames are snapped to 8-bit levels at render time, so the PNG round
//! trip is lossless and [`Dataset::sample`] reproduces in-memory samples
//! bit for bit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::render::Scene;
use super::sequence::{crop_narrow, FrameView, SequenceSample};
use super::{Result, SceneError, SceneSpec};
use crate::diffcore::Tensor;
use crate::geometry::{self, narrow_mask, narrow_span, Intrinsics, Pose};

const MANIFEST_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, detail: impl Into<String>) -> SceneError {
    SceneError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn scene_dir(root: &Path, scene: usize) -> PathBuf {
    root.join(format!("scene_{scene:04}"))
}

fn frame_png(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("frame_{step:04}.png"))
}

fn depth_bin(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("depth_{step:04}.bin"))
}

fn write_png(path: &Path, rgb: &Tensor<f32>) -> Result<()> {
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let mut buf = vec![0u8; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            buf[i * 3 + c] = (rgb.data()[c * h * w + i] * 255.0).round() as u8;
        }
    }
    let img: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from shape");
    img.save(path)
        .map_err(|e| corrupt(path, format!("png write failed: {e}")))
}

fn read_png(path: &Path, h: usize, w: usize) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| corrupt(path, format!("png read failed: {e}")))?
        .into_rgb8();
    if img.width() as usize != w || img.height() as usize != h {
        return Err(corrupt(
            path,
            format!("size {}x{} does not match manifest {w}x{h}", img.width(), img.height()),
        ));
    }
    let raw = img.into_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = raw[i * 3 + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).map_err(|e| corrupt(path, e.to_string()))
}

/// Renders `scenes` scenes from `base` (scene `i` uses `base.seed + i`) and
/// writes the full layout under `root`.
pub fn write_dataset(base: &SceneSpec, scenes: usize, root: &Path) -> Result<()> {
    base.validate()?;
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let k = Intrinsics::for_size(base.width, base.height);
    let manifest = root.join("manifest.txt");
    let mut out = BufWriter::new(File::create(&manifest).map_err(|e| io_err(&manifest, e))?);
    for (key, value) in [
        ("version", MANIFEST_VERSION.to_string()),
        ("scenes", scenes.to_string()),
        ("steps", base.steps.to_string()),
        ("width", base.width.to_string()),
        ("height", base.height.to_string()),
        ("narrow_ratio", format!("{}", base.narrow_ratio)),
        ("past_frames", base.past_frames.to_string()),
        ("seed", base.seed.to_string()),
        ("fx", format!("{}", k.fx)),
        ("fy", format!("{}", k.fy)),
        ("cx", format!("{}", k.cx)),
        ("cy", format!("{}", k.cy)),
    ] {
        writeln!(out, "{key}={value}").map_err(|e| io_err(&manifest, e))?;
    }
    out.flush().map_err(|e| io_err(&manifest, e))?;

    for s in 0..scenes {
        let spec = SceneSpec {
            seed: base.seed.wrapping_add(s as u64),
            ..base.clone()
        };
        let scene = Scene::build(&spec)?;
        let dir = scene_dir(root, s);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut poses = Vec::with_capacity(base.steps);
        for step in 0..base.steps {
            let frame = scene.render(step)?;
            write_png(&frame_png(&dir, step), &frame.rgb)?;
            geometry::write_depth(&depth_bin(&dir, step), &frame.depth)?;
            poses.push(frame.pose);
        }
        geometry::write_poses(&dir.join("poses.txt"), &poses)?;
    }
    Ok(())
}

/// Read side of the layout. Opening parses and checks the manifest; frames
/// are loaded lazily per sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub scenes: usize,
    pub steps: usize,
    pub width: usize,
    pub height: usize,
    pub narrow_ratio: f64,
    pub past_frames: usize,
    pub seed: u64,
    pub intrinsics: Intrinsics,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest = root.join("manifest.txt");
        let text = fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
        let mut version = None;
        let mut scenes = None;
        let mut steps = None;
        let mut width = None;
        let mut height = None;
        let mut narrow_ratio = None;
        let mut past_frames = None;
        let mut seed = None;
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                corrupt(&manifest, format!("line {}: expected key=value", lineno + 1))
            })?;
            let bad = |what: &str| corrupt(&manifest, format!("line {}: bad {what}", lineno + 1));
            match key.trim() {
                "version" => version = Some(value.parse::<u32>().map_err(|_| bad("version"))?),
                "scenes" => scenes = Some(value.parse::<usize>().map_err(|_| bad("scenes"))?),
                "steps" => steps = Some(value.parse::<usize>().map_err(|_| bad("steps"))?),
                "width" => width = Some(value.parse::<usize>().map_err(|_| bad("width"))?),
                "height" => height = Some(value.parse::<usize>().map_err(|_| bad("height"))?),
                "narrow_ratio" => {
                    narrow_ratio = Some(value.parse::<f64>().map_err(|_| bad("narrow_ratio"))?)
                }
                "past_frames" => {
                    past_frames = Some(value.parse::<usize>().map_err(|_| bad("past_frames"))?)
                }
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                "fx" => fx = Some(value.parse::<f64>().map_err(|_| bad("fx"))?),
                "fy" => fy = Some(value.parse::<f64>().map_err(|_| bad("fy"))?),
                "cx" => cx = Some(value.parse::<f64>().map_err(|_| bad("cx"))?),
                "cy" => cy = Some(value.parse::<f64>().map_err(|_| bad("cy"))?),
                other => {
                    return Err(corrupt(
                        &manifest,
                        format!("line {}: unknown key {other:?}", lineno + 1),
                    ))
                }
            }
        }
        let missing = |what: &str| corrupt(&manifest, format!("missing key {what}"));
        let version = version.ok_or_else(|| missing("version"))?;
        if version != MANIFEST_VERSION {
            return Err(corrupt(
                &manifest,
                format!("version {version} unsupported, expected {MANIFEST_VERSION}"),
            ));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            scenes: scenes.ok_or_else(|| missing("scenes"))?,
            steps: steps.ok_or_else(|| missing("steps"))?,
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            narrow_ratio: narrow_ratio.ok_or_else(|| missing("narrow_ratio"))?,
            past_frames: past_frames.ok_or_else(|| missing("past_frames"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            intrinsics: Intrinsics::new(
                fx.ok_or_else(|| missing("fx"))?,
                fy.ok_or_else(|| missing("fy"))?,
                cx.ok_or_else(|| missing("cx"))?,
                cy.ok_or_else(|| missing("cy"))?,
            ),
        })
    }

    /// Steps usable as sample targets within each scene.
    pub fn samples_per_scene(&self) -> usize {
        self.steps - self.past_frames
    }

    /// First usable target step.
    pub fn first_target(&self) -> usize {
        self.past_frames
    }

    pub fn load_frame(&self, scene: usize, step: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let dir = scene_dir(&self.root, scene);
        let rgb = read_png(&frame_png(&dir, step), self.height, self.width)?;
        let depth = geometry::read_depth(&depth_bin(&dir, step)).map_err(|e| match e {
            geometry::GeomError::BadFile { path, detail } => SceneError::Corrupt { path, detail },
            other => SceneError::Geom(other),
        })?;
        if depth.shape() != [self.height, self.width] {
            return Err(corrupt(
                &depth_bin(&dir, step),
                format!("depth shape {:?} does not match manifest", depth.shape()),
            ));
        }
        Ok((rgb, depth))
    }

    pub fn poses(&self, scene: usize) -> Result<Vec<Pose>> {
        let path = scene_dir(&self.root, scene).join("poses.txt");
        let poses = geometry::read_poses(&path)?;
        if poses.len() != self.steps {
            return Err(corrupt(
                &path,
                format!("{} poses, manifest says {}", poses.len(), self.steps),
            ));
        }
        Ok(poses)
    }

    /// Loads the sample whose present frame is step `t` of `scene`.
    pub fn sample(&self, scene: usize, t: usize) -> Result<SequenceSample> {
        let k = self.past_frames;
        if scene >= self.scenes || t < k || t >= self.steps {
            return Err(SceneError::Spec {
                detail: format!(
                    "sample (scene {scene}, step {t}) outside dataset of {} scenes x {} steps",
                    self.scenes, self.steps
                ),
            });
        }
        let poses = self.poses(scene)?;
        let (x0, nw) = narrow_span(self.width, self.narrow_ratio)?;
        let target_pose = poses[t];
        let mut frames = Vec::with_capacity(k + 1);
        for step in t - k..=t {
            let (rgb, depth) = self.load_frame(scene, step)?;
            frames.push(FrameView {
                narrow_rgb: crop_narrow(&rgb, x0, nw),
                narrow_depth: crop_narrow(&depth, x0, nw),
                wide_rgb: rgb,
                wide_depth: depth,
                rel_pose: Pose::relative(&poses[step], &target_pose),
            });
        }
        Ok(SequenceSample {
            frames,
            mask: narrow_mask(self.height, self.width, self.narrow_ratio)?,
            intrinsics: self.intrinsics,
            narrow_x0: x0,
            narrow_width: nw,
        })
    }
}
