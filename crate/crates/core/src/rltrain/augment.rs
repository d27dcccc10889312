//! Image augmentation: random crop resized back to full size, then a
//! per-channel brightness shift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::render::{GoalDescriptor, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Side of the random crop as a fraction of the image side.
    pub crop_fraction: f64,
    /// Maximum absolute per-channel brightness shift.
    pub brightness: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, crop_fraction: 0.875, brightness: 0.1 }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

/// Bilinear sample of channel `ch` at continuous pixel coordinates, edges clamped.
fn bilinear(img: &Observation, y: f64, x: f64, ch: usize) -> f32 {
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let p = |r: usize, c: usize| img.pixels[(r * img.width + c) * 3 + ch];
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Crop the `ch x cw` window at `(top, left)` and resize it to the full
/// image size with bilinear interpolation.
pub fn crop_resize(img: &Observation, top: usize, left: usize, ch: usize, cw: usize) -> Observation {
    let (h, w) = (img.height, img.width);
    let (sy, sx) = (ch as f64 / h as f64, cw as f64 / w as f64);
    let mut out = Observation { height: h, width: w, fov: img.fov, pixels: vec![0.0; h * w * 3] };
    for r in 0..h {
        let y = top as f64 + (r as f64 + 0.5) * sy - 0.5;
        for c in 0..w {
            let x = left as f64 + (c as f64 + 0.5) * sx - 0.5;
            for k in 0..3 {
                out.pixels[(r * w + c) * 3 + k] = bilinear(img, y, x, k);
            }
        }
    }
    out
}

/// Random crop plus brightness shift; identity when disabled.
pub fn augment_image<R: Rng + ?Sized>(img: &Observation, cfg: &AugmentConfig, rng: &mut R) -> Observation {
    if !cfg.enabled {
        return img.clone();
    }
    let ch = ((img.height as f64 * cfg.crop_fraction).round() as usize).clamp(1, img.height);
    let cw = ((img.width as f64 * cfg.crop_fraction).round() as usize).clamp(1, img.width);
    let top = rng.gen_range(0..=img.height - ch);
    let left = rng.gen_range(0..=img.width - cw);
    let mut out = crop_resize(img, top, left, ch, cw);
    let shift: [f32; 3] = std::array::from_fn(|_| if cfg.brightness > 0.0 { rng.gen_range(-cfg.brightness..=cfg.brightness) } else { 0.0 });
    for (i, v) in out.pixels.iter_mut().enumerate() {
        *v = (*v + shift[i % 3]).clamp(0.0, 1.0);
    }
    out
}

/// Augment an image-like goal; labels and audio pass through unchanged.
pub fn augment_goal<R: Rng + ?Sized>(goal: &GoalDescriptor, cfg: &AugmentConfig, rng: &mut R) -> GoalDescriptor {
    match goal {
        GoalDescriptor::Image(o) => GoalDescriptor::Image(augment_image(o, cfg, rng)),
        GoalDescriptor::Sketch(o) => GoalDescriptor::Sketch(augment_image(o, cfg, rng)),
        GoalDescriptor::Edgemap(o) => GoalDescriptor::Edgemap(augment_image(o, cfg, rng)),
        GoalDescriptor::Label(_) | GoalDescriptor::Audio(_) => goal.clone(),
    }
}
