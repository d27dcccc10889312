//! Egocentric column raycaster.
//!
//! One ray per image column, spread uniformly in angle over the field of
//! view; the leftmost column looks along `heading + fov / 2`. Each ray walks
//! the grid with a DDA traversal. The first wall cell ends the ray and is
//! drawn as a vertical slab `[0, wall_height]`; object cells crossed before
//! it are drawn as boxes over their category's vertical span, farthest
//! first. A point at height `z` and perpendicular distance `d` projects to
//! image row `H/2 - (z - camera_height) * f / d` with focal length
//! `f = (W/2) / tan(fov/2)`.

mod goals;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::worldgen::{FloorPlan, GridPos, ObjectCategory, Pose, RoomCategory};

pub use goals::{
    audio_signature, derive_audio, derive_edgemap, derive_edgemap_with, derive_sketch, sketch_viewpoint, GoalDescriptor,
    Modality, AUDIO_DIM, AUDIO_NOISE_SCALE, EDGE_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    /// Rays stop after this many meters without drawing anything further.
    pub max_range: f64,
    pub wall_height: f64,
    pub camera_height: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            fov: std::f64::consts::FRAC_PI_2,
            max_range: 30.0,
            wall_height: 1.5,
            camera_height: 0.75,
        }
    }
}

impl RenderConfig {
    pub fn with_resolution(mut self, res: usize) -> Self {
        self.width = res;
        self.height = res;
        self
    }

    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov / 2.0).tan()
    }

    /// Image row coordinate of height `z` at perpendicular distance `d`.
    pub fn project(&self, z: f64, d: f64) -> f64 {
        self.height as f64 / 2.0 - (z - self.camera_height) * self.focal() / d
    }

    /// Ray angle of image column `col`.
    pub fn column_angle(&self, heading: f64, col: usize) -> f64 {
        heading + self.fov / 2.0 - (col as f64 + 0.5) / self.width as f64 * self.fov
    }
}

pub const FLOOR_COLOR: [f32; 3] = [0.36, 0.30, 0.24];
pub const CEILING_COLOR: [f32; 3] = [0.88, 0.88, 0.86];

pub fn wall_color(category: Option<RoomCategory>) -> [f32; 3] {
    match category {
        Some(RoomCategory::LivingRoom) => [0.78, 0.66, 0.52],
        Some(RoomCategory::Kitchen) => [0.60, 0.78, 0.58],
        Some(RoomCategory::Bedroom) => [0.62, 0.60, 0.84],
        Some(RoomCategory::Bathroom) => [0.52, 0.78, 0.84],
        Some(RoomCategory::DiningRoom) => [0.84, 0.58, 0.52],
        Some(RoomCategory::Office) => [0.72, 0.72, 0.56],
        None => [0.6, 0.6, 0.6],
    }
}

/// Vertical extent in meters of each object category.
pub fn vertical_span(category: ObjectCategory) -> (f64, f64) {
    match category {
        ObjectCategory::Chair => (0.0, 0.6),
        ObjectCategory::Couch => (0.0, 0.5),
        ObjectCategory::Bed => (0.0, 0.35),
        ObjectCategory::Toilet => (0.0, 0.5),
        ObjectCategory::Tv => (0.5, 1.1),
        ObjectCategory::Plant => (0.0, 1.0),
    }
}

/// Category-specific banding along the normalized object height `u` in
/// `[0, 1]`. Returns whether `u` lies in a dark band; gives each category a
/// recognizable internal structure independent of its color.
pub fn dark_band(category: ObjectCategory, u: f64) -> bool {
    match category {
        ObjectCategory::Chair => u < 0.45,
        ObjectCategory::Couch => u > 0.6,
        ObjectCategory::Bed => u > 0.7,
        ObjectCategory::Toilet => (0.35..0.55).contains(&u),
        ObjectCategory::Tv => !(0.15..0.85).contains(&u),
        ObjectCategory::Plant => u < 0.3 || (0.55..0.7).contains(&u),
    }
}

/// What a pixel shows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Ceiling,
    Floor,
    Wall { room: Option<RoomCategory> },
    Object { instance: usize, dark: bool, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub fov: f64,
    /// Row-major `H x W x 3`, values in `[0, 1]`.
    pub pixels: Vec<f32>,
}

impl Observation {
    pub fn filled(height: usize, width: usize, fov: f64, color: [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&color);
        }
        Self { height, width, fov, pixels }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Append the image in channel-major `3 x H x W` layout.
    pub fn extend_chw(&self, out: &mut Vec<f32>) {
        for ch in 0..3 {
            out.extend(self.pixels.iter().skip(ch).step_by(3));
        }
    }

    pub fn from_chw(height: usize, width: usize, fov: f64, chw: &[f32]) -> Self {
        let n = height * width;
        let mut pixels = vec![0f32; n * 3];
        for ch in 0..3 {
            for i in 0..n {
                pixels[i * 3 + ch] = chw[ch * n + i];
            }
        }
        Self { height, width, fov, pixels }
    }

    /// Binary PPM (P6), 8 bits per channel, row-major.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Rendered image plus the surface seen at every pixel.
#[derive(Debug, Clone)]
pub struct RenderLayers {
    pub image: Observation,
    pub surfaces: Vec<Surface>,
}

impl RenderLayers {
    /// Number of image columns in which `instance` covers at least one pixel
    /// no farther than `max_distance` meters.
    pub fn visible_columns(&self, instance: usize, max_distance: f64) -> usize {
        let (h, w) = (self.image.height, self.image.width);
        (0..w)
            .filter(|&c| {
                (0..h).any(|r| {
                    matches!(self.surfaces[r * w + c], Surface::Object { instance: i, distance, .. } if i == instance && distance <= max_distance)
                })
            })
            .count()
    }
}

/// A contiguous run of one object's cells along a ray, as perpendicular
/// distances in meters.
#[derive(Debug, Clone, Copy)]
struct Span {
    instance: usize,
    enter: f64,
    exit: f64,
}

/// Result of casting one ray.
#[derive(Debug, Clone)]
struct RayHit {
    /// Perpendicular distance and room tint of the wall, if one was hit in range.
    wall: Option<(f64, Option<RoomCategory>, bool)>,
    objects: Vec<Span>,
}

fn cast_ray(plan: &FloorPlan, pose: &Pose, angle: f64, cfg: &RenderConfig) -> RayHit {
    let cs = plan.cell_size();
    let (px, py) = (pose.x / cs, pose.y / cs);
    let (dx, dy) = (angle.cos(), angle.sin());
    let perp = (angle - pose.heading).cos();
    let max_t = cfg.max_range / cs;
    let (mut mx, mut my) = (px.floor() as isize, py.floor() as isize);
    let delta_x = if dx == 0.0 { f64::INFINITY } else { (1.0 / dx).abs() };
    let delta_y = if dy == 0.0 { f64::INFINITY } else { (1.0 / dy).abs() };
    let (step_x, mut side_x) = if dx < 0.0 { (-1, (px - mx as f64) * delta_x) } else { (1, (mx as f64 + 1.0 - px) * delta_x) };
    let (step_y, mut side_y) = if dy < 0.0 { (-1, (py - my as f64) * delta_y) } else { (1, (my as f64 + 1.0 - py) * delta_y) };

    let origin_object = plan.object_id_at(my, mx);
    let mut last_room = plan.cell_of_point(pose.x, pose.y).and_then(|p| plan.room_at(p)).map(|r| r.category);
    let mut objects: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    loop {
        // Advance to the next cell; `t` is the ray parameter (cells) at entry.
        let y_side = side_x > side_y;
        let t = if y_side {
            let t = side_y;
            side_y += delta_y;
            my += step_y;
            t
        } else {
            let t = side_x;
            side_x += delta_x;
            mx += step_x;
            t
        };
        let d = t * cs * perp;
        let here = if t > max_t || !plan.is_free_signed(my, mx) { None } else { plan.object_id_at(my, mx).filter(|&id| Some(id) != origin_object) };
        if let Some(span) = open {
            if here != Some(span.instance) {
                objects.push(Span { exit: d, ..span });
                open = None;
            }
        }
        if t > max_t {
            return RayHit { wall: None, objects };
        }
        if !plan.is_free_signed(my, mx) {
            return RayHit { wall: Some((d, last_room, y_side)), objects };
        }
        if let Some(room) = plan.room_at(GridPos::new(my as usize, mx as usize)) {
            last_room = Some(room.category);
        }
        if let (Some(id), None) = (here, open) {
            open = Some(Span { instance: id, enter: d, exit: d });
        }
    }
}

fn shade(c: [f32; 3], f: f64) -> [f32; 3] {
    let f = f as f32;
    [(c[0] * f).clamp(0.0, 1.0), (c[1] * f).clamp(0.0, 1.0), (c[2] * f).clamp(0.0, 1.0)]
}

fn depth_factor(d: f64) -> f64 {
    1.0 / (1.0 + 0.08 * d)
}

/// Render the image together with the per-pixel surface map.
pub fn render_layers(plan: &FloorPlan, pose: &Pose, cfg: &RenderConfig) -> Result<RenderLayers> {
    plan.pose_cell(pose)?;
    let (h, w) = (cfg.height, cfg.width);
    let mut image = Observation::filled(h, w, cfg.fov, FLOOR_COLOR);
    let mut surfaces = vec![Surface::Floor; h * w];
    for r in 0..h {
        // Rows above the horizon see the ceiling.
        if (r as f64 + 0.5) < h as f64 / 2.0 {
            for c in 0..w {
                image.set_pixel(r, c, CEILING_COLOR);
                surfaces[r * w + c] = Surface::Ceiling;
            }
        }
    }
    for col in 0..w {
        let hit = cast_ray(plan, pose, cfg.column_angle(pose.heading, col), cfg);
        if let Some((d, room, y_side)) = hit.wall {
            let d = d.max(1e-6);
            let top = cfg.project(cfg.wall_height, d);
            let bottom = cfg.project(0.0, d);
            let side = if y_side { 0.8 } else { 1.0 };
            let color = shade(wall_color(room), depth_factor(d) * side);
            for r in 0..h {
                let y = r as f64 + 0.5;
                if y >= top && y < bottom {
                    image.set_pixel(r, col, color);
                    surfaces[r * w + col] = Surface::Wall { room };
                }
            }
        }
        for span in hit.objects.iter().rev() {
            let obj = &plan.objects()[span.instance];
            let (z0, z1) = vertical_span(obj.category);
            let enter = span.enter.max(1e-6);
            let exit = span.exit.max(enter);
            let top = cfg.project(z1, enter).min(cfg.project(z1, exit));
            let bottom = cfg.project(z0, enter).max(cfg.project(z0, exit));
            let front_top = cfg.project(z1, enter);
            let front_bottom = cfg.project(z0, enter);
            let base = shade(obj.render_color, depth_factor(enter));
            for r in 0..h {
                let y = r as f64 + 0.5;
                if y < top || y >= bottom {
                    continue;
                }
                // Normalized height on the front face; the top face counts as the upper edge.
                let u = if y < front_top { 1.0 } else { ((front_bottom - y) / (front_bottom - front_top)).clamp(0.0, 1.0) };
                let dark = dark_band(obj.category, u);
                let color = if dark { shade(base, 0.6) } else { base };
                image.set_pixel(r, col, color);
                surfaces[r * w + col] = Surface::Object { instance: span.instance, dark, distance: enter };
            }
        }
    }
    Ok(RenderLayers { image, surfaces })
}

/// Render the egocentric observation at a pose.
pub fn render_observation(plan: &FloorPlan, pose: &Pose, cfg: &RenderConfig) -> Result<Observation> {
    Ok(render_layers(plan, pose, cfg)?.image)
}
