//! Goal descriptors for every modality, derived from rendered content.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{render_layers, Observation, RenderConfig, Surface};
use crate::error::{Error, Result};
use crate::util::derive_seed;
use crate::worldgen::{FloorPlan, ObjectInstance, Pose};

pub const AUDIO_DIM: usize = 16;
pub const AUDIO_NOISE_SCALE: f64 = 0.02;
/// Default luminance-gradient threshold of [`derive_edgemap`].
pub const EDGE_THRESHOLD: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Label,
    Sketch,
    Audio,
    Edgemap,
}

impl Modality {
    pub const ALL: [Modality; 5] = [Modality::Image, Modality::Label, Modality::Sketch, Modality::Audio, Modality::Edgemap];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Label => "label",
            Modality::Sketch => "sketch",
            Modality::Audio => "audio",
            Modality::Edgemap => "edgemap",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Modalities whose payload is an image.
    pub fn is_image_like(self) -> bool {
        matches!(self, Modality::Image | Modality::Sketch | Modality::Edgemap)
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", content = "payload", rename_all = "snake_case")]
pub enum GoalDescriptor {
    Image(Observation),
    /// Category index in `[0, 6)`; object or room vocabulary depending on the task.
    Label(usize),
    Sketch(Observation),
    Audio(Vec<f32>),
    Edgemap(Observation),
}

impl GoalDescriptor {
    pub fn modality(&self) -> Modality {
        match self {
            GoalDescriptor::Image(_) => Modality::Image,
            GoalDescriptor::Label(_) => Modality::Label,
            GoalDescriptor::Sketch(_) => Modality::Sketch,
            GoalDescriptor::Audio(_) => Modality::Audio,
            GoalDescriptor::Edgemap(_) => Modality::Edgemap,
        }
    }

    pub fn image(&self) -> Option<&Observation> {
        match self {
            GoalDescriptor::Image(o) | GoalDescriptor::Sketch(o) | GoalDescriptor::Edgemap(o) => Some(o),
            _ => None,
        }
    }

    /// Check that the payload matches the modality's shape contract.
    pub fn validate(&self) -> Result<()> {
        match self {
            GoalDescriptor::Label(i) if *i >= 6 => Err(Error::Config(format!("label index {i} outside [0, 6)"))),
            GoalDescriptor::Audio(v) if v.len() != AUDIO_DIM => {
                Err(Error::Config(format!("audio payload has {} dims, expected {AUDIO_DIM}", v.len())))
            }
            GoalDescriptor::Image(o) | GoalDescriptor::Sketch(o) | GoalDescriptor::Edgemap(o)
                if o.pixels.len() != o.height * o.width * 3 =>
            {
                Err(Error::Config("image payload size does not match its shape".into()))
            }
            _ => Ok(()),
        }
    }
}

fn luminance(img: &Observation) -> Vec<f32> {
    img.pixels.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
}

/// Binary edges of a single-channel image: central differences
/// `(L[x+1] - L[x-1]) / 2` horizontally and vertically with replicated
/// borders, magnitude compared against `threshold`.
fn edges(lum: &[f32], height: usize, width: usize, threshold: f32) -> Vec<f32> {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, height as isize - 1) as usize;
        let c = c.clamp(0, width as isize - 1) as usize;
        lum[r * width + c]
    };
    let mut out = vec![0f32; height * width];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
            let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
            if (gx * gx + gy * gy).sqrt() > threshold {
                out[r as usize * width + c as usize] = 1.0;
            }
        }
    }
    out
}

fn replicate3(mask: &[f32], height: usize, width: usize, fov: f64) -> Observation {
    let mut pixels = Vec::with_capacity(mask.len() * 3);
    for &v in mask {
        pixels.extend_from_slice(&[v, v, v]);
    }
    Observation { height, width, fov, pixels }
}

/// Gradient-magnitude edgemap with an explicit threshold.
pub fn derive_edgemap_with(img: &Observation, threshold: f32) -> GoalDescriptor {
    let mask = edges(&luminance(img), img.height, img.width, threshold);
    GoalDescriptor::Edgemap(replicate3(&mask, img.height, img.width, img.fov))
}

pub fn derive_edgemap(img: &Observation) -> GoalDescriptor {
    derive_edgemap_with(img, EDGE_THRESHOLD)
}

/// Minimum number of image columns the object must cover in a sketch view.
const SKETCH_MIN_COLUMNS: usize = 3;
const SKETCH_ATTEMPTS: u32 = 64;

/// Random nearby viewpoint looking at `obj`, determined by `variant_seed`.
pub fn sketch_viewpoint(plan: &FloorPlan, obj: &ObjectInstance, variant_seed: u64, cfg: &RenderConfig) -> Result<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(variant_seed, obj.instance_id as u64));
    let cs = plan.cell_size();
    let (cx, cy) = obj.center(cs);
    let (rows, cols) = footprint_extent(obj);
    let half_diag = 0.5 * ((rows * rows + cols * cols) as f64).sqrt() * cs;
    for _ in 0..SKETCH_ATTEMPTS {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = half_diag + rng.gen_range(0.4..1.2);
        let (x, y) = (cx + dist * theta.cos(), cy + dist * theta.sin());
        let Some(cell) = plan.cell_of_point(x, y) else { continue };
        if !plan.is_free(cell) || plan.object_at(cell).is_some() {
            continue;
        }
        let heading = (cy - y).atan2(cx - x) + rng.gen_range(-0.17..0.17);
        let pose = Pose::new(x, y, heading);
        let layers = render_layers(plan, &pose, cfg)?;
        if layers.visible_columns(obj.instance_id, f64::INFINITY) >= SKETCH_MIN_COLUMNS {
            return Ok(pose);
        }
    }
    Err(Error::NoViewpoint(obj.instance_id))
}

fn footprint_extent(obj: &ObjectInstance) -> (usize, usize) {
    let rows = obj.footprint.iter().map(|p| p.row).max().unwrap_or(0) - obj.footprint.iter().map(|p| p.row).min().unwrap_or(0) + 1;
    let cols = obj.footprint.iter().map(|p| p.col).max().unwrap_or(0) - obj.footprint.iter().map(|p| p.col).min().unwrap_or(0) + 1;
    (rows, cols)
}

/// Shape-only sketch of an object: the close-up view from
/// [`sketch_viewpoint`] is reduced to a two-level mask of the object's
/// pixels (category banding kept, color dropped), then edge-filtered.
pub fn derive_sketch(plan: &FloorPlan, obj: &ObjectInstance, variant_seed: u64, cfg: &RenderConfig) -> Result<GoalDescriptor> {
    let pose = sketch_viewpoint(plan, obj, variant_seed, cfg)?;
    let layers = render_layers(plan, &pose, cfg)?;
    let mask: Vec<f32> = layers
        .surfaces
        .iter()
        .map(|s| match s {
            Surface::Object { instance, dark, .. } if *instance == obj.instance_id => {
                if *dark {
                    0.5
                } else {
                    1.0
                }
            }
            _ => 0.0,
        })
        .collect();
    let e = edges(&mask, cfg.height, cfg.width, EDGE_THRESHOLD);
    Ok(GoalDescriptor::Sketch(replicate3(&e, cfg.height, cfg.width, cfg.fov)))
}

/// Per-category signature: a unit-height Gaussian bump of width 1 centered
/// at `2.5 c + 1.5` over 16 bins.
pub fn audio_signature(category: usize) -> [f32; AUDIO_DIM] {
    let center = 2.5 * category as f64 + 1.5;
    let mut s = [0f32; AUDIO_DIM];
    for (i, v) in s.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-0.5 * d * d).exp() as f32;
    }
    s
}

/// Distance-attenuated audio goal: `s_c / (1 + dist)` plus zero-mean
/// Gaussian noise of standard deviation `noise_scale` drawn from `noise_seed`.
pub fn derive_audio(category: usize, dist: f64, noise_seed: u64, noise_scale: f64) -> Result<GoalDescriptor> {
    if !(dist >= 0.0) {
        return Err(Error::Config(format!("audio distance must be >= 0, got {dist}")));
    }
    if category >= 6 {
        return Err(Error::Config(format!("audio category {category} outside [0, 6)")));
    }
    let scale = 1.0 / (1.0 + dist);
    let sig = audio_signature(category);
    let mut v: Vec<f32> = sig.iter().map(|&s| (s as f64 * scale) as f32).collect();
    if noise_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, noise_scale).map_err(|e| Error::Config(e.to_string()))?;
        for x in &mut v {
            *x += normal.sample(&mut rng) as f32;
        }
    }
    Ok(GoalDescriptor::Audio(v))
}
