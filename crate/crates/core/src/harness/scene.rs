//! Synthetic detection scenes.
//!
//! A scene is a `G x G` grid of feature tokens standing in for encoder
//! output. The token whose cell holds an object center carries the object's
//! class, its center offset inside the cell, its size and the cell position;
//! every other token is pure noise.
//!
//! Object token layout (`C` classes):
//!
//! | dims            | content                                   |
//! |-----------------|-------------------------------------------|
//! | `0..C`          | class one-hot times [`CLASS_SCALE`]       |
//! | `C, C+1`        | `cx·G − col`, `cy·G − row`                |
//! | `C+2, C+3`      | `w`, `h`                                  |
//! | `C+4, C+5`      | `(col + 0.5)/G`, `(row + 0.5)/G`          |
//! | `C+6..d_model`  | sinusoidal encoding of the cell position  |

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoxCXCYWH};
use crate::numerics::Tensor2D;

pub const CLASS_SCALE: f64 = 2.0;
pub const MAX_PAIR_IOU: f64 = 0.3;
pub const MAX_TRIES: usize = 1000;
pub const MIN_SIDE: f64 = 0.08;
pub const MAX_SIDE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub grid: usize,
    pub num_classes: usize,
    pub d_model: usize,
    pub noise: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Multiplier on every encoded object feature (noise is not scaled).
    pub signal_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            num_classes: 5,
            d_model: 32,
            noise: 0.1,
            min_objects: 1,
            max_objects: 4,
            signal_scale: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.num_classes == 0 {
            return Err(Error::Config("data.grid and model.num_classes must be positive".into()));
        }
        if self.d_model < self.num_classes + 6 {
            return Err(Error::Config(format!(
                "model.d_model {} too small for {} classes (need at least {})",
                self.d_model,
                self.num_classes,
                self.num_classes + 6
            )));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "need 1 <= data.min_objects <= data.max_objects, got {}..{}",
                self.min_objects, self.max_objects
            )));
        }
        if self.max_objects > self.grid * self.grid {
            return Err(Error::Config(
                "data.max_objects exceeds the number of grid cells".into(),
            ));
        }
        if !(self.signal_scale > 0.0) {
            return Err(Error::Config(format!(
                "data.signal_scale must be positive, got {}",
                self.signal_scale
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "data.noise must be nonnegative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub gts: Vec<GroundTruth>,
    /// `G² x d_model` token features.
    pub features: Tensor2D,
}

/// Standard normal draw via Box-Muller.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

fn cell_of(b: &BoxCXCYWH, grid: usize) -> (usize, usize) {
    let g = grid as f64;
    let col = ((b.cx * g) as usize).min(grid - 1);
    let row = ((b.cy * g) as usize).min(grid - 1);
    (col, row)
}

/// Scene with exactly `n_objects` objects.
pub fn gen_scene(rng: &mut ChaCha8Rng, n_objects: usize, cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    if n_objects == 0 {
        return Err(Error::Generation("a scene needs at least one object".into()));
    }
    let g = cfg.grid;
    let mut gts: Vec<GroundTruth> = Vec::with_capacity(n_objects);
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(n_objects);
    let mut tries = 0;
    while gts.len() < n_objects {
        if tries == MAX_TRIES {
            return Err(Error::Generation(format!(
                "could not place {n_objects} objects with IoU <= {MAX_PAIR_IOU} in {MAX_TRIES} tries"
            )));
        }
        tries += 1;
        let w = rng.random_range(MIN_SIDE..MAX_SIDE);
        let h = rng.random_range(MIN_SIDE..MAX_SIDE);
        let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
        let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
        let class_index = rng.random_range(0..cfg.num_classes);
        let bbox = BoxCXCYWH { cx, cy, w, h };
        let cell = cell_of(&bbox, g);
        let xy = bbox.to_xyxy();
        if cells.contains(&cell) || gts.iter().any(|o| iou(&o.bbox.to_xyxy(), &xy) > MAX_PAIR_IOU) {
            continue;
        }
        cells.push(cell);
        gts.push(GroundTruth { class_index, bbox });
    }

    let mut features = Tensor2D::zeros(cfg.tokens(), cfg.d_model);
    for (o, &(col, row)) in gts.iter().zip(&cells) {
        encode_object(features.row_mut(row * g + col), o, col, row, cfg);
    }
    if cfg.noise > 0.0 {
        for v in features.data_mut() {
            *v += cfg.noise * gaussian(rng);
        }
    }
    Ok(SyntheticScene { gts, features })
}

/// Scene with a uniformly drawn object count in `min_objects..=max_objects`.
pub fn sample_scene(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Result<SyntheticScene> {
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    gen_scene(rng, n, cfg)
}

fn encode_object(token: &mut [f64], o: &GroundTruth, col: usize, row: usize, cfg: &SceneConfig) {
    let g = cfg.grid as f64;
    let c = cfg.num_classes;
    let b = &o.bbox;
    token[o.class_index] = CLASS_SCALE;
    token[c] = b.cx * g - col as f64;
    token[c + 1] = b.cy * g - row as f64;
    token[c + 2] = b.w;
    token[c + 3] = b.h;
    let px = (col as f64 + 0.5) / g;
    let py = (row as f64 + 0.5) / g;
    token[c + 4] = px;
    token[c + 5] = py;
    for (k, v) in token[c + 6..].iter_mut().enumerate() {
        let freq = core::f64::consts::PI * libm::pow(2.0, (k / 4) as f64);
        let pos = if k % 4 < 2 { px } else { py };
        *v = if k % 2 == 0 {
            libm::sin(freq * pos)
        } else {
            libm::cos(freq * pos)
        };
    }
    token.iter_mut().for_each(|v| *v *= cfg.signal_scale);
}

/// Recovers the boxes encoded in noiseless features, in token order.
pub fn decode_boxes(features: &Tensor2D, cfg: &SceneConfig) -> Vec<(usize, BoxCXCYWH)> {
    let g = cfg.grid as f64;
    let c = cfg.num_classes;
    let mut out = Vec::new();
    for t in 0..features.rows() {
        let row: Vec<f64> = features.row(t).iter().map(|v| v / cfg.signal_scale).collect();
        let Some(class) = (0..c).find(|&k| row[k] > CLASS_SCALE / 2.0) else {
            continue;
        };
        let (col, r) = ((t % cfg.grid) as f64, (t / cfg.grid) as f64);
        out.push((
            class,
            BoxCXCYWH {
                cx: (col + row[c]) / g,
                cy: (r + row[c + 1]) / g,
                w: row[c + 2],
                h: row[c + 3],
            },
        ));
    }
    out
}

/// A fixed list of scenes drawn from its own seed.
pub fn scene_set(seed: u64, n: usize, cfg: &SceneConfig) -> Result<Vec<SyntheticScene>> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_scene(&mut rng, cfg)).collect()
}
