//! Shortest-path teacher used to generate expert demonstrations.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::env::{env_step, free_distance, NavEnv, FORWARD_STEP, TURN_ANGLE};
use super::reward::{angle_to_goal_view, RewardConfig};
use crate::agents::Action;
use crate::episodes::EpisodeSpec;
use crate::error::{Error, Result};
use crate::worldgen::{normalize_angle, DistanceField, FloorPlan, GridPos, Pose};

/// Radius, in cells, of the neighborhood used by the distance estimate.
pub const ESTIMATE_RADIUS: isize = 8;

/// Signed angle from `from` to `to` in `(-pi, pi]`.
pub fn signed_angle(from: f64, to: f64) -> f64 {
    let d = normalize_angle(to - from);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

/// Turn that reduces a signed heading error in `(-pi, pi]`; an error of
/// exactly pi turns left.
pub fn turn_towards(err: f64) -> Action {
    if err > 0.0 {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

/// Whether the straight segment from `pose` to `(x, y)` stays in free space.
pub fn line_of_sight(plan: &FloorPlan, pose: &Pose, x: f64, y: f64) -> bool {
    let len = (x - pose.x).hypot(y - pose.y);
    if len < 1e-12 {
        return true;
    }
    let angle = (y - pose.y).atan2(x - pose.x);
    free_distance(plan, pose.x, pose.y, angle, len + 1e-9) >= len
}

/// Continuous distance-to-goal estimate at a point: the smallest
/// `|p - c| + D(c)` over cells `c` within [`ESTIMATE_RADIUS`] that are in
/// line of sight of `p`, where `D` is the grid geodesic distance.
pub fn distance_estimate(plan: &FloorPlan, field: &DistanceField, x: f64, y: f64) -> Option<f64> {
    let here = plan.cell_of_point(x, y)?;
    let cs = plan.cell_size();
    let probe = Pose::new(x, y, 0.0);
    let mut best: Option<f64> = None;
    for dr in -ESTIMATE_RADIUS..=ESTIMATE_RADIUS {
        for dc in -ESTIMATE_RADIUS..=ESTIMATE_RADIUS {
            let (r, c) = (here.row as isize + dr, here.col as isize + dc);
            if !plan.is_free_signed(r, c) {
                continue;
            }
            let cell = GridPos::new(r as usize, c as usize);
            let Some(dc_m) = field.meters(cell) else { continue };
            let (cx, cy) = ((cell.col as f64 + 0.5) * cs, (cell.row as f64 + 0.5) * cs);
            let total = (cx - x).hypot(cy - y) + dc_m;
            if best.map_or(false, |b| total >= b) {
                continue;
            }
            if (dr == 0 && dc == 0) || line_of_sight(plan, &probe, cx, cy) {
                best = Some(total);
            }
        }
    }
    best
}

/// Greedy fallback: among headings reachable by turning whose forward step
/// is not blocked, pick the one whose step lands at the smallest
/// [`distance_estimate`]; ties prefer fewer turns, then turning left.
fn greedy_action(plan: &FloorPlan, field: &DistanceField, pose: &Pose) -> Result<Action> {
    let turns = (std::f64::consts::TAU / TURN_ANGLE).round() as i32;
    let half = turns / 2;
    let order = (0..=half).flat_map(|k| if k == 0 || k == half { vec![k] } else { vec![k, -k] });
    let mut best: Option<(f64, i32)> = None;
    for k in order {
        let h = pose.heading + k as f64 * TURN_ANGLE;
        if free_distance(plan, pose.x, pose.y, h, FORWARD_STEP + 1e-6) < FORWARD_STEP + 1e-6 {
            continue;
        }
        let (x, y) = (pose.x + FORWARD_STEP * h.cos(), pose.y + FORWARD_STEP * h.sin());
        let Some(est) = distance_estimate(plan, field, x, y) else { continue };
        if best.map_or(true, |(b, _)| est < b - 1e-9) {
            best = Some((est, k));
        }
    }
    match best {
        None => Err(Error::Unreachable),
        Some((_, 0)) => Ok(Action::MoveForward),
        Some((_, k)) if k > 0 => Ok(Action::TurnLeft),
        Some(_) => Ok(Action::TurnRight),
    }
}

/// Node budget of the action-sequence search before the greedy fallback.
pub const SEARCH_BUDGET: usize = 200_000;

fn is_terminal(plan: &FloorPlan, field: &DistanceField, pose: &Pose, episode: &EpisodeSpec, reward: &RewardConfig) -> Result<bool> {
    let d = field.at_pose(plan, pose)?.ok_or(Error::Unreachable)?;
    Ok(d <= reward.success_distance
        && (!episode.task.has_goal_view() || angle_to_goal_view(pose.heading, episode.goal_view_heading) <= reward.success_angle))
}

/// Fewest-action sequence (noise-free dynamics) from `pose` to a pose where
/// stopping succeeds, ending with [`Action::Stop`]. Best-first search over
/// the poses reachable by the motion actions, with the remaining geodesic
/// distance in forward steps as heuristic. Returns `None` when the search
/// budget runs out.
pub fn plan_actions(plan: &FloorPlan, field: &DistanceField, pose: &Pose, episode: &EpisodeSpec, reward: &RewardConfig) -> Result<Option<Vec<(Pose, Action)>>> {
    struct Node {
        pose: Pose,
        turn: i32,
        parent: usize,
        action: Action,
    }
    let turns = (std::f64::consts::TAU / TURN_ANGLE).round() as i32;
    let key = |p: &Pose, turn: i32| ((p.x * 1e7).round() as i64, (p.y * 1e7).round() as i64, turn.rem_euclid(turns));
    let h = |p: &Pose| -> Result<u64> {
        let d = field.at_pose(plan, p)?.ok_or(Error::Unreachable)?;
        // Scaled to integers so ties order deterministically.
        Ok((((d - reward.success_distance - plan.cell_size()).max(0.0) / FORWARD_STEP) * 1e6) as u64)
    };
    let mut nodes = vec![Node { pose: *pose, turn: 0, parent: usize::MAX, action: Action::Stop }];
    let mut seen: HashMap<(i64, i64, i32), u32> = HashMap::new();
    seen.insert(key(pose, 0), 0);
    let mut open = BinaryHeap::new();
    let mut counter = 0u64;
    open.push(Reverse((h(pose)?, 0u32, counter, 0usize)));
    let mut g_of = vec![0u32];
    while let Some(Reverse((_, g, _, idx))) = open.pop() {
        if g > g_of[idx] {
            continue;
        }
        let cur = nodes[idx].pose;
        if is_terminal(plan, field, &cur, episode, reward)? {
            let mut seq = vec![(cur, Action::Stop)];
            let mut i = idx;
            while nodes[i].parent != usize::MAX {
                let parent = nodes[i].parent;
                seq.push((nodes[parent].pose, nodes[i].action));
                i = parent;
            }
            seq.reverse();
            return Ok(Some(seq));
        }
        if nodes.len() > SEARCH_BUDGET {
            return Ok(None);
        }
        for action in [Action::MoveForward, Action::TurnLeft, Action::TurnRight] {
            let next = env_step(plan, &cur, action, None)?.pose;
            let turn = nodes[idx].turn
                + match action {
                    Action::TurnLeft => 1,
                    Action::TurnRight => -1,
                    _ => 0,
                };
            if action == Action::MoveForward && next.euclidean(&cur) < 1e-4 {
                continue;
            }
            let k = key(&next, turn);
            let ng = g + 1;
            if let Some(&j) = seen.get(&k) {
                if g_of[j as usize] <= ng {
                    continue;
                }
            }
            nodes.push(Node { pose: next, turn, parent: idx, action });
            g_of.push(ng);
            let j = nodes.len() - 1;
            seen.insert(k, j as u32);
            counter += 1;
            let f = h(&next)? + u64::from(ng) * 1_000_000;
            open.push(Reverse((f, ng, counter, j)));
        }
    }
    Ok(None)
}

/// Expert that follows a precomputed fewest-action plan and replans when
/// the agent is not where the plan expects it (for example under actuation
/// noise). Falls back to a greedy step when the search budget is exceeded.
#[derive(Debug, Clone, Default)]
pub struct Teacher {
    plan: Vec<(Pose, Action)>,
    next: usize,
}

impl Teacher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Next expert action at `pose`.
    pub fn act(&mut self, plan: &FloorPlan, field: &DistanceField, pose: &Pose, episode: &EpisodeSpec, reward: &RewardConfig) -> Result<Action> {
        let cell = plan.pose_cell(pose)?;
        field.meters(cell).ok_or(Error::Unreachable)?;
        if let Some(&(p, a)) = self.plan.get(self.next) {
            if p == *pose {
                self.next += 1;
                return Ok(a);
            }
        }
        match plan_actions(plan, field, pose, episode, reward)? {
            Some(seq) => {
                self.plan = seq;
                self.next = 1;
                Ok(self.plan[0].1)
            }
            None => {
                self.plan.clear();
                if is_terminal(plan, field, pose, episode, reward)? {
                    return Ok(Action::Stop);
                }
                let d = field.meters(cell).ok_or(Error::Unreachable)?;
                if d <= reward.success_distance {
                    return Ok(turn_towards(signed_angle(pose.heading, episode.goal_view_heading)));
                }
                greedy_action(plan, field, pose)
            }
        }
    }

    /// Next expert action for a running environment.
    pub fn act_env(&mut self, env: &NavEnv) -> Result<Action> {
        self.act(env.plan(), env.field(), &env.pose(), env.episode(), &env.reward_config())
    }
}

/// Expert action for an agent at `pose` in `episode`: the first action of
/// a fewest-action sequence that ends with a successful stop (inside the
/// success distance and, for tasks with a goal view, within the success
/// angle of it), under noise-free dynamics.
pub fn imitation_teacher(plan: &FloorPlan, field: &DistanceField, pose: &Pose, episode: &EpisodeSpec, reward: &RewardConfig) -> Result<Action> {
    Teacher::new().act(plan, field, pose, episode, reward)
}
