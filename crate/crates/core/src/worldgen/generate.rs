//! Binary space partition floorplan generator.
//!
//! The interior of the grid is recursively split by one-cell-thick walls
//! until the sampled room count is reached. Every split wall gets a door
//! (a carved gap 4 to 8 cells wide), which keeps free space connected by
//! induction over the split tree. Door cells join the room above or to the
//! left of them. Objects are stamped as rectangular footprints inside rooms,
//! preferring rooms whose category suits the object category.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cell, FloorPlan, GridPos, ObjectCategory, ObjectInstance, RoomCategory, RoomRegion, DEFAULT_CELL_SIZE};
use crate::error::{Error, Result};
use crate::util::mix64;

/// Generator parameter preset. `B` uses a wider split-ratio range (more
/// elongated rooms) and 1.5 times the object density of `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneratorStyle {
    A,
    B,
}

impl GeneratorStyle {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorStyle::A => "A",
            GeneratorStyle::B => "B",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "A" => Some(GeneratorStyle::A),
            "B" => Some(GeneratorStyle::B),
            _ => None,
        }
    }

    fn split_range(self) -> (f64, f64) {
        match self {
            GeneratorStyle::A => (0.35, 0.65),
            GeneratorStyle::B => (0.25, 0.75),
        }
    }

    fn object_density(self) -> f64 {
        match self {
            GeneratorStyle::A => 1.0,
            GeneratorStyle::B => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Inclusive range of room counts.
    pub room_count: (usize, usize),
    /// Inclusive range of object counts before the style density factor.
    pub object_count: (usize, usize),
    pub style: GeneratorStyle,
}

impl Default for GeneratorParams {
    /// A 16 m x 16 m world.
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            cell_size: DEFAULT_CELL_SIZE,
            room_count: (5, 8),
            object_count: (12, 18),
            style: GeneratorStyle::A,
        }
    }
}

impl GeneratorParams {
    pub fn with_style(mut self, style: GeneratorStyle) -> Self {
        self.style = style;
        self
    }

    fn validate(&self, seed: u64) -> Result<()> {
        let fail = |reason: &str| Err(Error::GenerationFailed { seed, attempts: 0, reason: reason.to_string() });
        if self.width < 8 || self.height < 8 {
            return fail("grid must be at least 8x8");
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return fail("cell size must be positive");
        }
        let (lo, hi) = self.room_count;
        if lo == 0 || lo > hi || hi > super::format::MAX_ROOMS {
            return fail("room count range must satisfy 1 <= min <= max <= 62");
        }
        if self.object_count.0 > self.object_count.1 {
            return fail("object count range is empty");
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: u32 = 16;

/// Generate a plan. Pure function of `(seed, params)`.
pub fn generate_floorplan(seed: u64, params: &GeneratorParams) -> Result<FloorPlan> {
    params.validate(seed)?;
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(attempt as u64)));
        match try_generate(seed, params, &mut rng) {
            Ok(plan) => return Ok(plan),
            Err(Error::GenerationFailed { reason, .. }) => last = reason,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailed { seed, attempts: MAX_ATTEMPTS, reason: last })
}

/// Half-open cell rectangle.
#[derive(Debug, Clone, Copy)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn rows(&self) -> usize {
        self.r1 - self.r0
    }
    fn cols(&self) -> usize {
        self.c1 - self.c0
    }
    fn area(&self) -> usize {
        self.rows() * self.cols()
    }
    fn cells(&self) -> impl Iterator<Item = GridPos> + '_ {
        (self.r0..self.r1).flat_map(move |r| (self.c0..self.c1).map(move |c| GridPos::new(r, c)))
    }
}

/// Smallest room side in cells for a given grid.
fn min_side(params: &GeneratorParams) -> usize {
    (params.width.min(params.height) / 8).clamp(2, 16)
}

/// Split a rectangle into two children separated by a one-cell wall line.
/// Returns the children and the wall cells between them.
fn split<R: Rng>(rect: Rect, min: usize, style: GeneratorStyle, rng: &mut R) -> Option<(Rect, Rect, Vec<GridPos>)> {
    let horizontal_ok = rect.rows() >= 2 * min + 1;
    let vertical_ok = rect.cols() >= 2 * min + 1;
    let horizontal = match (horizontal_ok, vertical_ok) {
        (false, false) => return None,
        (true, false) => true,
        (false, true) => false,
        // Cut across the longer side; near-square rooms pick at random.
        (true, true) => {
            let ratio = rect.rows() as f64 / rect.cols() as f64;
            if ratio > 1.25 {
                true
            } else if ratio < 0.8 {
                false
            } else {
                rng.gen_bool(0.5)
            }
        }
    };
    let len = if horizontal { rect.rows() } else { rect.cols() };
    let (lo, hi) = style.split_range();
    let lo_pos = ((len as f64 * lo).round() as usize).max(min);
    let hi_pos = ((len as f64 * hi).round() as usize).min(len - min - 1);
    let pos = if lo_pos >= hi_pos { (len - 1) / 2 } else { rng.gen_range(lo_pos..=hi_pos) };
    if horizontal {
        let wr = rect.r0 + pos;
        let a = Rect { r1: wr, ..rect };
        let b = Rect { r0: wr + 1, ..rect };
        let wall = (rect.c0..rect.c1).map(|c| GridPos::new(wr, c)).collect();
        Some((a, b, wall))
    } else {
        let wc = rect.c0 + pos;
        let a = Rect { c1: wc, ..rect };
        let b = Rect { c0: wc + 1, ..rect };
        let wall = (rect.r0..rect.r1).map(|r| GridPos::new(r, wc)).collect();
        Some((a, b, wall))
    }
}

fn affinity(object: ObjectCategory, room: RoomCategory) -> f64 {
    use ObjectCategory as O;
    use RoomCategory as R;
    let favored = match object {
        O::Chair => matches!(room, R::DiningRoom | R::Office | R::Kitchen),
        O::Couch => matches!(room, R::LivingRoom),
        O::Bed => matches!(room, R::Bedroom),
        O::Toilet => matches!(room, R::Bathroom),
        O::Tv => matches!(room, R::LivingRoom | R::Bedroom),
        O::Plant => matches!(room, R::LivingRoom | R::Office | R::DiningRoom),
    };
    if favored {
        6.0
    } else {
        1.0
    }
}

/// Footprint size range in cells `(rows, cols)` before a random transpose.
fn footprint_range(category: ObjectCategory) -> ((usize, usize), (usize, usize)) {
    match category {
        ObjectCategory::Chair => ((3, 4), (3, 4)),
        ObjectCategory::Couch => ((4, 5), (8, 12)),
        ObjectCategory::Bed => ((10, 14), (7, 12)),
        ObjectCategory::Toilet => ((3, 4), (4, 5)),
        ObjectCategory::Tv => ((2, 2), (6, 9)),
        ObjectCategory::Plant => ((2, 3), (2, 3)),
    }
}

/// Base color per object category.
pub(crate) fn base_color(category: ObjectCategory) -> [f32; 3] {
    match category {
        ObjectCategory::Chair => [0.80, 0.25, 0.20],
        ObjectCategory::Couch => [0.25, 0.40, 0.85],
        ObjectCategory::Bed => [0.90, 0.75, 0.25],
        ObjectCategory::Toilet => [0.92, 0.92, 0.96],
        ObjectCategory::Tv => [0.12, 0.12, 0.16],
        ObjectCategory::Plant => [0.20, 0.70, 0.25],
    }
}

/// Category base color perturbed by up to 0.08 per channel from a hash of
/// `(category, instance_id)`.
pub fn object_color(category: ObjectCategory, instance_id: usize) -> [f32; 3] {
    let base = base_color(category);
    let h = mix64(((category.index() as u64) << 32) ^ instance_id as u64 ^ 0x5151_0b1e_c7c0_1055);
    let mut out = [0f32; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let byte = ((h >> (16 * k)) & 0xffff) as f32 / 65535.0;
        *o = (base[k] + (byte - 0.5) * 0.16).clamp(0.0, 1.0);
    }
    out
}

fn try_generate(seed: u64, params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Result<FloorPlan> {
    let (w, h) = (params.width, params.height);
    let mut grid = vec![Cell::Wall; w * h];
    let interior = Rect { r0: 1, c0: 1, r1: h - 1, c1: w - 1 };
    let min = min_side(params);
    let target = rng.gen_range(params.room_count.0..=params.room_count.1);

    let mut leaves = vec![interior];
    let mut doors: Vec<GridPos> = Vec::new();
    while leaves.len() < target {
        // Split the largest splittable leaf.
        let mut order: Vec<usize> = (0..leaves.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(leaves[i].area()));
        let Some((i, (a, b, wall))) = order.into_iter().find_map(|i| split(leaves[i], min, params.style, rng).map(|s| (i, s)))
        else {
            break;
        };
        let door_w = rng.gen_range(4..=8).min(wall.len().saturating_sub(2)).max(1);
        let start = if wall.len() > door_w + 2 { rng.gen_range(1..=wall.len() - door_w - 1) } else { 0 };
        doors.extend_from_slice(&wall[start..start + door_w]);
        leaves.swap_remove(i);
        leaves.push(a);
        leaves.push(b);
    }
    if leaves.len() < params.room_count.0 {
        return Err(Error::GenerationFailed {
            seed,
            attempts: 0,
            reason: format!("could only partition {} of {} rooms", leaves.len(), params.room_count.0),
        });
    }
    // Stable room order: by top-left corner.
    leaves.sort_by_key(|r| (r.r0, r.c0));

    let mut room_cells: Vec<Vec<GridPos>> = leaves.iter().map(|r| r.cells().collect()).collect();
    let mut room_of = vec![usize::MAX; w * h];
    for (id, cells) in room_cells.iter().enumerate() {
        for p in cells {
            grid[p.row * w + p.col] = Cell::Free;
            room_of[p.row * w + p.col] = id;
        }
    }
    // Doors are carved in split order; a later split may run through an
    // earlier door column, so assign after all walls are known.
    for &d in &doors {
        grid[d.row * w + d.col] = Cell::Free;
    }
    let mut pending: Vec<GridPos> = doors.clone();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|d| {
            let up = (d.row > 0).then(|| room_of[(d.row - 1) * w + d.col]).filter(|&r| r != usize::MAX);
            let left = (d.col > 0).then(|| room_of[d.row * w + d.col - 1]).filter(|&r| r != usize::MAX);
            let down = (d.row + 1 < h).then(|| room_of[(d.row + 1) * w + d.col]).filter(|&r| r != usize::MAX);
            let right = (d.col + 1 < w).then(|| room_of[d.row * w + d.col + 1]).filter(|&r| r != usize::MAX);
            match up.or(left).or(down).or(right) {
                Some(id) => {
                    room_of[d.row * w + d.col] = id;
                    room_cells[id].push(*d);
                    false
                }
                None => true,
            }
        });
        if pending.len() == before {
            return Err(Error::GenerationFailed { seed, attempts: 0, reason: "door without adjacent room".into() });
        }
    }

    let mut categories = RoomCategory::ALL.to_vec();
    categories.shuffle(rng);
    let rooms: Vec<RoomRegion> = room_cells
        .into_iter()
        .enumerate()
        .map(|(id, cells)| {
            let category = if id < categories.len() { categories[id] } else { *RoomCategory::ALL.choose(rng).expect("non-empty") };
            RoomRegion { id, category, cells }
        })
        .collect();

    let objects = place_objects(params, &leaves, &rooms, rng);
    match FloorPlan::from_parts(w, h, params.cell_size, grid, rooms, objects, seed, params.style) {
        Ok(plan) => Ok(plan),
        Err(Error::GenerationFailed { reason, .. }) => Err(Error::GenerationFailed { seed, attempts: 0, reason }),
        Err(e) => Err(e),
    }
}

fn place_objects(params: &GeneratorParams, leaves: &[Rect], rooms: &[RoomRegion], rng: &mut ChaCha8Rng) -> Vec<ObjectInstance> {
    let density = params.style.object_density();
    let lo = (params.object_count.0 as f64 * density).round() as usize;
    let hi = (params.object_count.1 as f64 * density).round() as usize;
    let count = rng.gen_range(lo..=hi.max(lo));
    let (w, h) = (params.width, params.height);
    // One-cell margin around each object keeps instances visually separate.
    let mut blocked = vec![false; w * h];
    let mut objects = Vec::with_capacity(count);
    let mut cats = ObjectCategory::ALL.to_vec();
    cats.shuffle(rng);
    for k in 0..count {
        let category = if k < cats.len() { cats[k] } else { *ObjectCategory::ALL.choose(rng).expect("non-empty") };
        let weights: Vec<f64> = rooms.iter().map(|r| affinity(category, r.category) * leaves[r.id].area() as f64).collect();
        let ((rl, rh), (cl, ch)) = footprint_range(category);
        for _ in 0..40 {
            let room = weighted_choice(&weights, rng);
            let leaf = leaves[room];
            let (mut fr, mut fc) = (rng.gen_range(rl..=rh), rng.gen_range(cl..=ch));
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut fr, &mut fc);
            }
            // Scale footprints down on small grids.
            let scale = (w.min(h) as f64 / 128.0).min(1.0);
            let fr = ((fr as f64 * scale).round() as usize).max(1);
            let fc = ((fc as f64 * scale).round() as usize).max(1);
            if leaf.rows() < fr + 2 || leaf.cols() < fc + 2 {
                continue;
            }
            let r0 = rng.gen_range(leaf.r0 + 1..=leaf.r1 - fr - 1);
            let c0 = rng.gen_range(leaf.c0 + 1..=leaf.c1 - fc - 1);
            let fits = (r0 - 1..r0 + fr + 1).all(|r| (c0 - 1..c0 + fc + 1).all(|c| !blocked[r * w + c]));
            if !fits {
                continue;
            }
            let footprint: Vec<GridPos> = (r0..r0 + fr).flat_map(|r| (c0..c0 + fc).map(move |c| GridPos::new(r, c))).collect();
            for p in &footprint {
                blocked[p.row * w + p.col] = true;
            }
            let instance_id = objects.len();
            objects.push(ObjectInstance { instance_id, category, footprint, render_color: object_color(category, instance_id) });
            break;
        }
    }
    objects
}

fn weighted_choice<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
