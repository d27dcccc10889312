//! Static top-down trajectory plots as SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::episodes::EpisodeSpec;
use crate::error::{Error, Result};
use crate::render::wall_color;
use crate::worldgen::{Cell, FloorPlan, Pose};

/// Pixels per meter.
pub const PLOT_SCALE: f64 = 32.0;
pub const SUCCESS_COLOR: &str = "#1a9641";
pub const FAILURE_COLOR: &str = "#d7191c";

/// What to draw on top of the plan.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryOverlay<'a> {
    pub episode: Option<&'a EpisodeSpec>,
    /// Agent poses from start to end; may be empty.
    pub trajectory: &'a [Pose],
    pub success: bool,
    /// Radius of the success circle around the goal, meters.
    pub success_radius: f64,
}

fn hex(c: [f32; 3]) -> String {
    let b = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", b(c[0]), b(c[1]), b(c[2]))
}

fn lighten(c: [f32; 3], t: f32) -> [f32; 3] {
    c.map(|v| v + (1.0 - v) * t)
}

/// SVG document for `plan` with an optional episode overlay. The world y axis
/// points up in the picture.
pub fn trajectory_svg(plan: &FloorPlan, overlay: &TrajectoryOverlay) -> Result<String> {
    for p in overlay.trajectory {
        plan.pose_cell(p)?;
    }
    let (w, h) = plan.extent();
    let (pw, ph) = (w * PLOT_SCALE, h * PLOT_SCALE);
    let px = |x: f64| x * PLOT_SCALE;
    let py = |y: f64| (h - y) * PLOT_SCALE;
    let cs = plan.cell_size();
    let cell_px = cs * PLOT_SCALE;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{pw:.0}" height="{ph:.0}" viewBox="0 0 {pw:.2} {ph:.2}">"#).ok();
    writeln!(s, r##"<rect x="0" y="0" width="{pw:.2}" height="{ph:.2}" fill="#ffffff"/>"##).ok();

    // Rooms and walls as horizontal runs of equal cells.
    let room_of: Vec<Option<usize>> = {
        let mut v = vec![None; plan.width() * plan.height()];
        for (i, r) in plan.rooms().iter().enumerate() {
            for &c in &r.cells {
                v[plan.index(c)] = Some(i);
            }
        }
        v
    };
    for row in 0..plan.height() {
        let mut col = 0;
        while col < plan.width() {
            let i = row * plan.width() + col;
            let key = (plan.grid()[i], room_of[i]);
            let start = col;
            while col < plan.width() && (plan.grid()[row * plan.width() + col], room_of[row * plan.width() + col]) == key {
                col += 1;
            }
            let fill = match key {
                (Cell::Wall, _) => "#303030".to_string(),
                (Cell::Free, Some(r)) => hex(lighten(wall_color(Some(plan.rooms()[r].category)), 0.55)),
                (Cell::Free, None) => "#f0f0f0".to_string(),
            };
            let y_top = py((row + 1) as f64 * cs);
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                start as f64 * cell_px,
                y_top,
                (col - start) as f64 * cell_px,
                cell_px
            )
            .ok();
        }
    }
    for o in plan.objects() {
        let (cx, cy) = o.center(cs);
        let r = ((o.footprint.len() as f64).sqrt() * cs * 0.5).max(cs * 0.5) * PLOT_SCALE;
        writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{}" stroke="#000000" stroke-width="0.5"/>"##, px(cx), py(cy), hex(o.render_color)).ok();
    }

    if let Some(ep) = overlay.episode {
        let (gx, gy) = (px(ep.goal_pos.x), py(ep.goal_pos.y));
        let rad = overlay.success_radius * PLOT_SCALE;
        writeln!(s, r##"<circle cx="{gx:.2}" cy="{gy:.2}" r="{rad:.2}" fill="none" stroke="#2b83ba" stroke-width="1.5" stroke-dasharray="4 3"/>"##).ok();
        writeln!(s, r##"<circle cx="{gx:.2}" cy="{gy:.2}" r="5" fill="#2b83ba"/>"##).ok();
        if ep.task.has_goal_view() {
            let len = 0.6 * PLOT_SCALE;
            let (dx, dy) = (ep.goal_view_heading.cos(), -ep.goal_view_heading.sin());
            let (tx, ty) = (gx + dx * len, gy + dy * len);
            let (lx, ly) = (tx - dx * 8.0 - dy * 5.0, ty - dy * 8.0 + dx * 5.0);
            let (rx, ry) = (tx - dx * 8.0 + dy * 5.0, ty - dy * 8.0 - dx * 5.0);
            writeln!(s, r##"<path d="M {gx:.2} {gy:.2} L {tx:.2} {ty:.2} M {lx:.2} {ly:.2} L {tx:.2} {ty:.2} L {rx:.2} {ry:.2}" stroke="#2b83ba" stroke-width="2" fill="none"/>"##).ok();
        }
        let (sx, sy) = (px(ep.start.x), py(ep.start.y));
        writeln!(s, r##"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="#fdae61" stroke="#000000" stroke-width="0.5"/>"##, sx - 4.0, sy - 4.0).ok();
    }

    if !overlay.trajectory.is_empty() {
        let pts: Vec<String> = overlay.trajectory.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect();
        writeln!(s, r##"<polyline points="{}" fill="none" stroke="#404040" stroke-width="1.5"/>"##, pts.join(" ")).ok();
        let last = overlay.trajectory.last().expect("non-empty");
        let color = if overlay.success { SUCCESS_COLOR } else { FAILURE_COLOR };
        writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, px(last.x), py(last.y)).ok();
        let (hx, hy) = (px(last.x) + last.heading.cos() * 10.0, py(last.y) - last.heading.sin() * 10.0);
        writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{hx:.2}" y2="{hy:.2}" stroke="{color}" stroke-width="2"/>"#, px(last.x), py(last.y)).ok();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Write [`trajectory_svg`] to `path`.
pub fn render_trajectory_plot(plan: &FloorPlan, overlay: &TrajectoryOverlay, path: impl AsRef<Path>) -> Result<()> {
    let svg = trajectory_svg(plan, overlay)?;
    std::fs::write(path.as_ref(), svg).map_err(Error::Io)
}
