//! Synthetic "moving shapes" clips whose classes differ only in motion.
//!
//! Every class is a (axis, direction, speed) variant of one trajectory
//! family. A reversed class renders a clip of its forward partner and plays
//! it backwards, so the two classes have the same distribution over
//! individual frames. The static coordinate is drawn from the same
//! distribution as the moving coordinate's per-frame position, which makes
//! the horizontal and vertical families agree frame-by-frame as well on a
//! square canvas. Only the temporal order of the frames carries the label.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, MANIFEST_VERSION};
use super::pcfv::{write_feature_clip, FeatureClip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disc,
    Plus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionClass {
    pub name: String,
    pub axis: Axis,
    /// Plays the forward trajectory backwards.
    pub reversed: bool,
    /// Multiplier on the base travel distance.
    #[serde(default = "one")]
    pub speed: f64,
}

fn one() -> f64 {
    1.0
}

/// The standard class list: right/left, down/up, then the same at double
/// speed. Reversal partners are adjacent.
pub fn standard_classes(n: usize) -> Result<Vec<MotionClass>> {
    if n < 2 || n > 8 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "class count {n} must be even and between 2 and 8"
        )));
    }
    let table = [
        ("right", Axis::Horizontal, false, 1.0),
        ("left", Axis::Horizontal, true, 1.0),
        ("down", Axis::Vertical, false, 1.0),
        ("up", Axis::Vertical, true, 1.0),
        ("right_fast", Axis::Horizontal, false, 2.0),
        ("left_fast", Axis::Horizontal, true, 2.0),
        ("down_fast", Axis::Vertical, false, 2.0),
        ("up_fast", Axis::Vertical, true, 2.0),
    ];
    Ok(table[..n]
        .iter()
        .map(|&(name, axis, reversed, speed)| MotionClass {
            name: name.into(),
            axis,
            reversed,
            speed,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingShapesConfig {
    pub height: usize,
    pub width: usize,
    /// Raw clip length in frames.
    pub frames: usize,
    pub classes: Vec<MotionClass>,
    pub shape_kinds: Vec<ShapeKind>,
    pub min_size: f64,
    pub max_size: f64,
    /// Distance in pixels the shape covers over a clip at speed 1.
    pub travel: f64,
    pub min_intensity: f64,
    pub max_intensity: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub seed: u64,
}

impl Default for MovingShapesConfig {
    fn default() -> Self {
        MovingShapesConfig {
            height: 32,
            width: 32,
            frames: 90,
            classes: standard_classes(4).expect("4 is valid"),
            shape_kinds: vec![ShapeKind::Square, ShapeKind::Disc, ShapeKind::Plus],
            min_size: 6.0,
            max_size: 9.0,
            travel: 16.0,
            min_intensity: 160.0,
            max_intensity: 255.0,
            noise_sigma: 8.0,
            train_clips: 200,
            val_clips: 50,
            test_clips: 50,
            seed: 7,
        }
    }
}

impl MovingShapesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.shape_kinds.is_empty() || self.frames == 0 {
            return Err(Error::Config("need shape kinds and >= 1 frame".into()));
        }
        if !(0.0 < self.min_size && self.min_size <= self.max_size) {
            return Err(Error::Config("invalid shape size range".into()));
        }
        if self.min_intensity > self.max_intensity || self.noise_sigma < 0.0 {
            return Err(Error::Config("invalid intensity or noise settings".into()));
        }
        for c in &self.classes {
            let extent = match c.axis {
                Axis::Horizontal => self.width,
                Axis::Vertical => self.height,
            } as f64;
            let other = match c.axis {
                Axis::Horizontal => self.height,
                Axis::Vertical => self.width,
            } as f64;
            let need = self.max_size + self.travel * c.speed;
            if need > extent.min(other) {
                return Err(Error::Config(format!(
                    "canvas {}x{} too small for class {:?}: shape {} + travel {} needs {need}",
                    self.height,
                    self.width,
                    c.name,
                    self.max_size,
                    self.travel * c.speed
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-clip seed derived from the master seed.
pub fn clip_seed(master: u64, split: usize, class: usize, index: usize) -> u64 {
    let mut s = splitmix(master);
    for part in [split as u64, class as u64, index as u64] {
        s = splitmix(s ^ part);
    }
    s
}

fn inside(kind: ShapeKind, lx: f64, ly: f64, size: f64) -> bool {
    if lx < 0.0 || ly < 0.0 || lx >= size || ly >= size {
        return false;
    }
    match kind {
        ShapeKind::Square => true,
        ShapeKind::Disc => {
            let r = size / 2.0;
            (lx - r).powi(2) + (ly - r).powi(2) <= r * r
        }
        ShapeKind::Plus => {
            let third = size / 3.0;
            (third..2.0 * third).contains(&lx) || (third..2.0 * third).contains(&ly)
        }
    }
}

const SUPERSAMPLE: usize = 4;

fn render(cfg: &MovingShapesConfig, kind: ShapeKind, size: f64, x0: f64, y0: f64, intensity: f64, out: &mut [f64]) {
    let (h, w) = (cfg.height, cfg.width);
    let ys = (y0.floor().max(0.0) as usize)..((y0 + size).ceil() as usize).min(h);
    let xs = (x0.floor().max(0.0) as usize)..((x0 + size).ceil() as usize).min(w);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in ys {
        for x in xs.clone() {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) * step;
                    let py = y as f64 + (sy as f64 + 0.5) * step;
                    if inside(kind, px - x0, py - y0, size) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let v = &mut out[y * w + x];
            *v = v.max(cover * intensity);
        }
    }
}

/// Renders one clip of `class` from its own seed, returning `[T, 1, H, W]`
/// pixels in `[0, 255]`, rounded to integers.
pub fn render_clip(cfg: &MovingShapesConfig, class: &MotionClass, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, t) = (cfg.height, cfg.width, cfg.frames);
    let kind = *cfg.shape_kinds.choose(&mut rng).expect("nonempty kinds");
    let size = rng.gen_range(cfg.min_size..=cfg.max_size);
    let intensity = rng.gen_range(cfg.min_intensity..=cfg.max_intensity);
    let travel = cfg.travel * class.speed;
    let extent = match class.axis {
        Axis::Horizontal => w,
        Axis::Vertical => h,
    } as f64;
    let other_extent = match class.axis {
        Axis::Horizontal => h,
        Axis::Vertical => w,
    } as f64;
    let start = rng.gen_range(0.0..=extent - size - travel);
    let other_start = rng.gen_range(0.0..=other_extent - size - travel);
    let other_tau = rng.gen_range(0..t);
    let frac = |f: usize| if t > 1 { f as f64 / (t - 1) as f64 } else { 0.0 };
    let fixed = other_start + travel * frac(other_tau);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut frames = Vec::with_capacity(t);
    for f in 0..t {
        let moving = start + travel * frac(f);
        let (x0, y0) = match class.axis {
            Axis::Horizontal => (moving, fixed),
            Axis::Vertical => (fixed, moving),
        };
        let mut img = vec![0.0; h * w];
        render(cfg, kind, size, x0, y0, intensity, &mut img);
        if cfg.noise_sigma > 0.0 {
            for v in &mut img {
                *v += noise.sample(&mut rng);
            }
        }
        for v in &mut img {
            *v = v.round().clamp(0.0, 255.0);
        }
        frames.push(Tensor::new(vec![1, h, w], img)?);
    }
    if class.reversed {
        frames.reverse();
    }
    Tensor::stack(&frames)
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Generated clips for one split.
#[derive(Clone, Debug)]
pub struct SplitClips {
    pub name: String,
    pub clips: Vec<FeatureClip>,
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub classes: Vec<String>,
    pub splits: Vec<SplitClips>,
}

impl GeneratedDataset {
    pub fn split(&self, name: &str) -> Option<&SplitClips> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Renders train/val/test splits; clips of class `c`, split `s`, index `i`
/// use [`clip_seed`]`(seed, s, c, i)`.
pub fn generate_moving_shapes(cfg: &MovingShapesConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let counts = [cfg.train_clips, cfg.val_clips, cfg.test_clips];
    let mut splits = Vec::new();
    for (si, (&name, &count)) in SPLITS.iter().zip(&counts).enumerate() {
        let mut clips = Vec::with_capacity(count * cfg.classes.len());
        for (ci, class) in cfg.classes.iter().enumerate() {
            for i in 0..count {
                let frames = render_clip(cfg, class, clip_seed(cfg.seed, si, ci, i))?;
                let id = format!("{}_{i:04}", class.name);
                clips.push(FeatureClip::new(frames, ci, id, true)?);
            }
        }
        splits.push(SplitClips {
            name: name.to_string(),
            clips,
        });
    }
    Ok(GeneratedDataset {
        classes: cfg.class_names(),
        splits,
    })
}

/// Writes `<split>/<source_id>.pcfv` files and a `<split>.json` manifest per
/// split under `out_dir`.
pub fn write_dataset(ds: &GeneratedDataset, out_dir: &Path) -> Result<Vec<DatasetManifest>> {
    let mut manifests = Vec::new();
    for split in &ds.splits {
        let dir = out_dir.join(&split.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::with_capacity(split.clips.len());
        for clip in &split.clips {
            let file = format!("{}.pcfv", clip.source_id);
            write_feature_clip(clip, &dir.join(&file))?;
            entries.push(ManifestEntry {
                path: format!("{}/{file}", split.name),
                label: clip.label,
                frames: clip.num_frames(),
            });
        }
        let m = DatasetManifest {
            version: MANIFEST_VERSION,
            classes: ds.classes.clone(),
            split: split.name.clone(),
            entries,
        };
        m.save(&out_dir.join(format!("{}.json", split.name)))?;
        manifests.push(m);
    }
    Ok(manifests)
}
