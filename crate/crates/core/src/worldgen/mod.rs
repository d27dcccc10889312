//! Procedural multi-room floorplans with room and object semantics.

mod format;
mod geodesic;
mod generate;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geodesic::{geodesic_distance, shortest_path, DistanceField, PathCost};
pub use generate::{generate_floorplan, GeneratorParams, GeneratorStyle};

/// Meters per grid cell. A 0.25 m forward step spans exactly two cells.
pub const DEFAULT_CELL_SIZE: f64 = 0.125;

macro_rules! category_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: [$name; 6] = [$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                Self::ALL.into_iter().find(|c| c.name() == s)
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

category_enum!(
    /// The six room types used by room-goal navigation.
    RoomCategory {
        LivingRoom => "living_room",
        Kitchen => "kitchen",
        Bedroom => "bedroom",
        Bathroom => "bathroom",
        DiningRoom => "dining_room",
        Office => "office",
    }
);

category_enum!(
    /// The six object types used by object-goal navigation.
    ObjectCategory {
        Chair => "chair",
        Couch => "couch",
        Bed => "bed",
        Toilet => "toilet",
        Tv => "tv",
        Plant => "plant",
    }
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Wall,
}

/// Grid coordinate. Ordering is lexicographic on `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomRegion {
    pub id: usize,
    pub category: RoomCategory,
    /// Sorted, non-empty and 4-connected.
    pub cells: Vec<GridPos>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub instance_id: usize,
    pub category: ObjectCategory,
    /// Sorted, non-empty, free cells.
    pub footprint: Vec<GridPos>,
    pub render_color: [f32; 3],
}

impl ObjectInstance {
    /// Center of the footprint in meters.
    pub fn center(&self, cell_size: f64) -> (f64, f64) {
        let n = self.footprint.len() as f64;
        let (sx, sy) = self.footprint.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.col as f64 + 0.5, sy + p.row as f64 + 0.5));
        (sx / n * cell_size, sy / n * cell_size)
    }
}

/// Agent position in meters and heading in radians. Heading 0 points along
/// +x; positive turns rotate towards +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_angle(heading) }
    }

    pub fn at_cell(p: GridPos, cell_size: f64, heading: f64) -> Self {
        Self::new((p.col as f64 + 0.5) * cell_size, (p.row as f64 + 0.5) * cell_size, heading)
    }

    pub fn euclidean(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An immutable navigable world.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    width: usize,
    height: usize,
    cell_size: f64,
    grid: Vec<Cell>,
    rooms: Vec<RoomRegion>,
    objects: Vec<ObjectInstance>,
    seed: u64,
    style: GeneratorStyle,
    room_of: Vec<Option<u16>>,
    object_of: Vec<Option<u16>>,
}

impl FloorPlan {
    /// Assemble a plan from raw parts and validate every invariant.
    pub fn from_parts(
        width: usize,
        height: usize,
        cell_size: f64,
        grid: Vec<Cell>,
        mut rooms: Vec<RoomRegion>,
        mut objects: Vec<ObjectInstance>,
        seed: u64,
        style: GeneratorStyle,
    ) -> Result<Self> {
        let invalid = |reason: String| Error::GenerationFailed { seed, attempts: 0, reason };
        if width < 8 || height < 8 {
            return Err(invalid(format!("grid {width}x{height} smaller than 8x8")));
        }
        if grid.len() != width * height {
            return Err(invalid("grid length does not match dimensions".into()));
        }
        if !(cell_size > 0.0) {
            return Err(invalid("cell size must be positive".into()));
        }
        let mut room_of = vec![None; grid.len()];
        for r in &mut rooms {
            r.cells.sort_unstable();
            if r.cells.is_empty() {
                return Err(invalid(format!("room {} is empty", r.id)));
            }
            for c in &r.cells {
                let i = c.row * width + c.col;
                if c.row >= height || c.col >= width || grid[i] != Cell::Free {
                    return Err(invalid(format!("room {} covers a non-free cell {c:?}", r.id)));
                }
                if room_of[i].is_some() {
                    return Err(invalid(format!("cell {c:?} belongs to two rooms")));
                }
                room_of[i] = Some(r.id as u16);
            }
        }
        if let Some(i) = (0..grid.len()).find(|&i| grid[i] == Cell::Free && room_of[i].is_none()) {
            return Err(invalid(format!("free cell ({}, {}) belongs to no room", i / width, i % width)));
        }
        let mut object_of = vec![None; grid.len()];
        for o in &mut objects {
            o.footprint.sort_unstable();
            if o.footprint.is_empty() {
                return Err(invalid(format!("object {} has an empty footprint", o.instance_id)));
            }
            for c in &o.footprint {
                let i = c.row * width + c.col;
                if c.row >= height || c.col >= width || grid[i] != Cell::Free {
                    return Err(invalid(format!("object {} covers a non-free cell {c:?}", o.instance_id)));
                }
                object_of[i] = Some(o.instance_id as u16);
            }
        }
        let plan = Self { width, height, cell_size, grid, rooms, objects, seed, style, room_of, object_of };
        for r in &plan.rooms {
            if !plan.is_connected_set(&r.cells) {
                return Err(invalid(format!("room {} is not 4-connected", r.id)));
            }
        }
        let free: Vec<GridPos> = plan.free_cells().collect();
        if free.is_empty() {
            return Err(invalid("no free cells".into()));
        }
        if !plan.is_connected_set(&free) {
            return Err(invalid("free space is disconnected".into()));
        }
        Ok(plan)
    }

    fn is_connected_set(&self, cells: &[GridPos]) -> bool {
        let mut member = vec![false; self.grid.len()];
        for c in cells {
            member[self.index(*c)] = true;
        }
        let mut seen = vec![false; self.grid.len()];
        let mut stack = vec![cells[0]];
        seen[self.index(cells[0])] = true;
        let mut count = 0;
        while let Some(p) = stack.pop() {
            count += 1;
            for q in self.neighbors4(p) {
                let i = self.index(q);
                if member[i] && !seen[i] {
                    seen[i] = true;
                    stack.push(q);
                }
            }
        }
        count == cells.len()
    }

    fn neighbors4(&self, p: GridPos) -> impl Iterator<Item = GridPos> + '_ {
        let (r, c) = (p.row as isize, p.col as isize);
        [(r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)]
            .into_iter()
            .filter(|&(r, c)| r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .map(|(r, c)| GridPos::new(r as usize, c as usize))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn style(&self) -> GeneratorStyle {
        self.style
    }

    pub fn rooms(&self) -> &[RoomRegion] {
        &self.rooms
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub fn grid(&self) -> &[Cell] {
        &self.grid
    }

    #[inline]
    pub fn index(&self, p: GridPos) -> usize {
        p.row * self.width + p.col
    }

    #[inline]
    pub fn pos_of(&self, index: usize) -> GridPos {
        GridPos::new(index / self.width, index % self.width)
    }

    pub fn cell(&self, p: GridPos) -> Cell {
        self.grid[self.index(p)]
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn is_free(&self, p: GridPos) -> bool {
        p.row < self.height && p.col < self.width && self.cell(p) == Cell::Free
    }

    /// Whether the integer cell `(row, col)` is inside the grid and free.
    #[inline]
    pub fn is_free_signed(&self, row: isize, col: isize) -> bool {
        self.in_bounds(row, col) && self.grid[row as usize * self.width + col as usize] == Cell::Free
    }

    pub fn free_cells(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.grid.len()).filter(|&i| self.grid[i] == Cell::Free).map(|i| self.pos_of(i))
    }

    pub fn room_at(&self, p: GridPos) -> Option<&RoomRegion> {
        self.room_of[self.index(p)].map(|id| &self.rooms[id as usize])
    }

    pub fn room_id_at(&self, p: GridPos) -> Option<usize> {
        self.room_of.get(self.index(p)).copied().flatten().map(usize::from)
    }

    pub fn object_at(&self, p: GridPos) -> Option<&ObjectInstance> {
        self.object_of[self.index(p)].map(|id| &self.objects[id as usize])
    }

    pub fn object_id_at(&self, row: isize, col: isize) -> Option<usize> {
        if !self.in_bounds(row, col) {
            return None;
        }
        self.object_of[row as usize * self.width + col as usize].map(usize::from)
    }

    pub fn objects_of(&self, category: ObjectCategory) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(move |o| o.category == category)
    }

    pub fn rooms_of(&self, category: RoomCategory) -> impl Iterator<Item = &RoomRegion> {
        self.rooms.iter().filter(move |r| r.category == category)
    }

    /// Cell containing a point, if it lies on the grid.
    pub fn cell_of_point(&self, x: f64, y: f64) -> Option<GridPos> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let (col, row) = ((x / self.cell_size).floor() as usize, (y / self.cell_size).floor() as usize);
        (row < self.height && col < self.width).then_some(GridPos::new(row, col))
    }

    /// Cell of a pose, checked to be on the grid and free.
    pub fn pose_cell(&self, pose: &Pose) -> Result<GridPos> {
        let p = self
            .cell_of_point(pose.x, pose.y)
            .ok_or_else(|| Error::InvalidPose(format!("({:.3}, {:.3}) is off the grid", pose.x, pose.y)))?;
        if self.cell(p) != Cell::Free {
            return Err(Error::InvalidPose(format!("({:.3}, {:.3}) is inside a wall", pose.x, pose.y)));
        }
        Ok(p)
    }

    /// World extent in meters `(width, height)`.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.cell_size, self.height as f64 * self.cell_size)
    }
}
