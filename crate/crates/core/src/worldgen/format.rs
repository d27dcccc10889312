//! Versioned text serialization of floorplans.
//!
//! ```text
//! ZSELPLAN v1
//! width=16 height=12 cell_size=0.125 seed=7 style=A
//! ################
//! #aaaaaa#bbbbbbb#
//! ...
//! room id=0 category=kitchen glyph=a
//! object id=0 category=chair color=0.8,0.2,0.2 cells=3,4;3,5
//! end
//! ```
//!
//! Grid rows use `#` for walls and the owning room's glyph for free cells.
//! Floats are written in shortest round-trip form, so parsing is lossless.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{Cell, FloorPlan, GeneratorStyle, GridPos, ObjectCategory, ObjectInstance, RoomCategory, RoomRegion};
use crate::error::{Error, Result};

pub const MAGIC: &str = "ZSELPLAN v1";
const GLYPHS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
pub const MAX_ROOMS: usize = 62;

impl FloorPlan {
    pub fn to_text(&self) -> Result<String> {
        if self.rooms().len() > MAX_ROOMS {
            return Err(Error::Config(format!("cannot serialize more than {MAX_ROOMS} rooms")));
        }
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(
            s,
            "width={} height={} cell_size={} seed={} style={}",
            self.width(),
            self.height(),
            self.cell_size(),
            self.seed(),
            self.style().name()
        );
        for r in 0..self.height() {
            for c in 0..self.width() {
                let p = GridPos::new(r, c);
                let glyph = match self.room_id_at(p) {
                    Some(id) if self.cell(p) == Cell::Free => GLYPHS[id] as char,
                    _ => '#',
                };
                s.push(glyph);
            }
            s.push('\n');
        }
        for room in self.rooms() {
            let _ = writeln!(s, "room id={} category={} glyph={}", room.id, room.category, GLYPHS[room.id] as char);
        }
        for o in self.objects() {
            let cells: Vec<String> = o.footprint.iter().map(|p| format!("{},{}", p.row, p.col)).collect();
            let [r, g, b] = o.render_color;
            let _ = writeln!(
                s,
                "object id={} category={} color={r},{g},{b} cells={}",
                o.instance_id,
                o.category,
                cells.join(";")
            );
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<FloorPlan> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let (ln, first) = lines.next().ok_or_else(|| perr(1, "empty input".into()))?;
        if first.trim_end() != MAGIC {
            return Err(perr(ln, format!("expected `{MAGIC}`, found `{first}`")));
        }
        let (ln, header) = lines.next().ok_or_else(|| perr(2, "missing header".into()))?;
        let kv = parse_kv(header, ln)?;
        let width: usize = field(&kv, "width", ln)?;
        let height: usize = field(&kv, "height", ln)?;
        let cell_size: f64 = field(&kv, "cell_size", ln)?;
        let seed: u64 = field(&kv, "seed", ln)?;
        let style_name: String = field(&kv, "style", ln)?;
        let style = GeneratorStyle::from_name(&style_name).ok_or_else(|| perr(ln, format!("unknown style `{style_name}`")))?;

        let mut grid = Vec::with_capacity(width * height);
        let mut glyph_cells: Vec<Vec<GridPos>> = vec![Vec::new(); MAX_ROOMS];
        for r in 0..height {
            let (ln, row) = lines.next().ok_or_else(|| perr(r + 3, "grid truncated".into()))?;
            if row.len() != width {
                return Err(perr(ln, format!("grid row has {} glyphs, expected {width}", row.len())));
            }
            for (c, ch) in row.bytes().enumerate() {
                if ch == b'#' {
                    grid.push(Cell::Wall);
                } else {
                    let id = GLYPHS.iter().position(|&g| g == ch).ok_or_else(|| perr(ln, format!("unknown glyph `{}`", ch as char)))?;
                    grid.push(Cell::Free);
                    glyph_cells[id].push(GridPos::new(r, c));
                }
            }
        }

        let mut rooms = Vec::new();
        let mut objects = Vec::new();
        let mut ended = false;
        for (ln, line) in lines.by_ref() {
            let line = line.trim_end();
            if line == "end" {
                ended = true;
                break;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| perr(ln, format!("malformed record `{line}`")))?;
            let kv = parse_kv(rest, ln)?;
            match kind {
                "room" => {
                    let id: usize = field(&kv, "id", ln)?;
                    let cat: String = field(&kv, "category", ln)?;
                    let category = RoomCategory::from_name(&cat).ok_or_else(|| perr(ln, format!("unknown room category `{cat}`")))?;
                    let glyph: String = field(&kv, "glyph", ln)?;
                    let gi = GLYPHS
                        .iter()
                        .position(|&g| glyph.as_bytes() == [g])
                        .ok_or_else(|| perr(ln, format!("bad glyph `{glyph}`")))?;
                    if id != rooms.len() || gi != id {
                        return Err(perr(ln, format!("room ids must be consecutive with matching glyphs (id {id})")));
                    }
                    rooms.push(RoomRegion { id, category, cells: std::mem::take(&mut glyph_cells[gi]) });
                }
                "object" => {
                    let instance_id: usize = field(&kv, "id", ln)?;
                    if instance_id != objects.len() {
                        return Err(perr(ln, format!("object ids must be consecutive (id {instance_id})")));
                    }
                    let cat: String = field(&kv, "category", ln)?;
                    let category =
                        ObjectCategory::from_name(&cat).ok_or_else(|| perr(ln, format!("unknown object category `{cat}`")))?;
                    let color_s: String = field(&kv, "color", ln)?;
                    let comps: Vec<f32> = color_s
                        .split(',')
                        .map(f32::from_str)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| perr(ln, format!("bad color: {e}")))?;
                    let render_color: [f32; 3] = comps.try_into().map_err(|_| perr(ln, "color needs 3 components".into()))?;
                    let cells_s: String = field(&kv, "cells", ln)?;
                    let footprint = cells_s
                        .split(';')
                        .map(|pair| {
                            let (r, c) = pair.split_once(',')?;
                            Some(GridPos::new(r.parse().ok()?, c.parse().ok()?))
                        })
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| perr(ln, format!("bad cell list `{cells_s}`")))?;
                    objects.push(ObjectInstance { instance_id, category, footprint, render_color });
                }
                other => return Err(perr(ln, format!("unknown record kind `{other}`"))),
            }
        }
        if !ended {
            return Err(perr(text.lines().count(), "missing `end`".into()));
        }
        if let Some(id) = glyph_cells.iter().position(|c| !c.is_empty()) {
            return Err(perr(0, format!("glyph `{}` used in grid without a room record", GLYPHS[id] as char)));
        }
        FloorPlan::from_parts(width, height, cell_size, grid, rooms, objects, seed, style)
            .map_err(|e| perr(0, format!("invalid plan: {e}")))
    }
}

fn parse_kv(s: &str, line: usize) -> Result<Vec<(String, String)>> {
    s.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse { line, msg: format!("expected key=value, found `{tok}`") })
        })
        .collect()
}

fn field<T: FromStr>(kv: &[(String, String)], key: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let v = kv
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Parse { line, msg: format!("missing key `{key}`") })?;
    v.parse().map_err(|e| Error::Parse { line, msg: format!("bad value for `{key}`: {e}") })
}
