//! Exact 8-connected grid geodesics.
//!
//! Path costs are kept as `(straight, diagonal)` step counts so that
//! comparisons and equality tests are exact; the length in meters is
//! `(straight + diagonal * sqrt(2)) * cell_size`. A diagonal step is allowed
//! only when both orthogonally adjacent cells are free, so paths never cut
//! through wall corners.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{FloorPlan, GridPos, Pose};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub const ZERO: PathCost = PathCost { straight: 0, diagonal: 0 };
    pub const STRAIGHT: PathCost = PathCost { straight: 1, diagonal: 0 };
    pub const DIAGONAL: PathCost = PathCost { straight: 0, diagonal: 1 };

    /// Length in cell units.
    pub fn cells(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    pub fn meters(self, cell_size: f64) -> f64 {
        self.cells() * cell_size
    }

    pub fn plus(self, other: PathCost) -> PathCost {
        PathCost { straight: self.straight + other.straight, diagonal: self.diagonal + other.diagonal }
    }
}

impl Ord for PathCost {
    /// Compares `s1 + d1 * sqrt(2)` against `s2 + d2 * sqrt(2)` in integers:
    /// the sign of `ds + dd * sqrt(2)` with `ds = s1 - s2`, `dd = d1 - d2`.
    fn cmp(&self, other: &Self) -> Ordering {
        let ds = self.straight as i64 - other.straight as i64;
        let dd = self.diagonal as i64 - other.diagonal as i64;
        match (ds.signum(), dd.signum()) {
            (0, 0) => Ordering::Equal,
            (a, b) if a >= 0 && b >= 0 => Ordering::Greater,
            (a, b) if a <= 0 && b <= 0 => Ordering::Less,
            // Opposite signs: compare ds^2 with 2 dd^2; never equal because
            // sqrt(2) is irrational.
            (a, _) => {
                let lhs = (ds * ds) as i128;
                let rhs = 2 * (dd * dd) as i128;
                let straight_dominates = lhs > rhs;
                if (a > 0) == straight_dominates {
                    Ordering::Greater
                } else {
                    Ordering::Less
                }
            }
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Neighbor offsets in lexicographic `(row, col)` order.
const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Valid moves from `p` in lexicographic neighbor order, with their step cost.
pub(crate) fn moves(plan: &FloorPlan, p: GridPos) -> impl Iterator<Item = (GridPos, PathCost)> + '_ {
    let (r, c) = (p.row as isize, p.col as isize);
    NEIGHBORS.into_iter().filter_map(move |(dr, dc)| {
        let (nr, nc) = (r + dr, c + dc);
        if !plan.is_free_signed(nr, nc) {
            return None;
        }
        let cost = if dr != 0 && dc != 0 {
            if !(plan.is_free_signed(r + dr, c) && plan.is_free_signed(r, c + dc)) {
                return None;
            }
            PathCost::DIAGONAL
        } else {
            PathCost::STRAIGHT
        };
        Some((GridPos::new(nr as usize, nc as usize), cost))
    })
}

/// Exact distance from every cell to the nearest of a set of source cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    cell_size: f64,
    cost: Vec<Option<PathCost>>,
}

impl DistanceField {
    /// Multi-source Dijkstra. Sources must be free cells.
    pub fn from_sources(plan: &FloorPlan, sources: &[GridPos]) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Empty("distance field sources"));
        }
        let mut cost = vec![None; plan.width() * plan.height()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            if !plan.is_free(s) {
                return Err(Error::InvalidPose(format!("source cell {s:?} is not free")));
            }
            let i = plan.index(s);
            if cost[i].is_none() {
                cost[i] = Some(PathCost::ZERO);
                heap.push(Reverse((PathCost::ZERO, i)));
            }
        }
        while let Some(Reverse((d, i))) = heap.pop() {
            if cost[i] != Some(d) {
                continue;
            }
            for (n, step) in moves(plan, plan.pos_of(i)) {
                let j = plan.index(n);
                let nd = d.plus(step);
                if cost[j].map_or(true, |old| nd < old) {
                    cost[j] = Some(nd);
                    heap.push(Reverse((nd, j)));
                }
            }
        }
        Ok(Self { width: plan.width(), cell_size: plan.cell_size(), cost })
    }

    pub fn to_pose(plan: &FloorPlan, target: &Pose) -> Result<Self> {
        Self::from_sources(plan, &[plan.pose_cell(target)?])
    }

    pub fn cost(&self, p: GridPos) -> Option<PathCost> {
        self.cost.get(p.row * self.width + p.col).copied().flatten()
    }

    /// Distance in meters, `None` when unreachable.
    pub fn meters(&self, p: GridPos) -> Option<f64> {
        self.cost(p).map(|c| c.meters(self.cell_size))
    }

    /// Distance from the cell containing a pose.
    pub fn at_pose(&self, plan: &FloorPlan, pose: &Pose) -> Result<Option<f64>> {
        Ok(self.meters(plan.pose_cell(pose)?))
    }

    /// Greedy descent from `from` to the nearest source: at every cell, the
    /// first neighbor in lexicographic order that lies on a shortest path.
    /// The result is the lexicographically smallest shortest cell sequence.
    pub fn descend(&self, plan: &FloorPlan, from: GridPos) -> Result<Vec<GridPos>> {
        let mut cur_cost = self.cost(from).ok_or(Error::Unreachable)?;
        let mut path = vec![from];
        let mut cur = from;
        while cur_cost != PathCost::ZERO {
            let (next, next_cost) = moves(plan, cur)
                .find_map(|(n, step)| self.cost(n).filter(|c| c.plus(step) == cur_cost).map(|c| (n, c)))
                .expect("a finite non-zero cost always has a predecessor");
            path.push(next);
            cur = next;
            cur_cost = next_cost;
        }
        Ok(path)
    }
}

/// Shortest 8-connected path length in meters between the cells of two
/// poses, `None` when the cells are disconnected.
pub fn geodesic_distance(plan: &FloorPlan, a: &Pose, b: &Pose) -> Result<Option<f64>> {
    let ca = plan.pose_cell(a)?;
    let field = DistanceField::to_pose(plan, b)?;
    Ok(field.meters(ca))
}

/// Cell sequence from the cell of `a` to the cell of `b`, both included.
pub fn shortest_path(plan: &FloorPlan, a: &Pose, b: &Pose) -> Result<Vec<GridPos>> {
    let ca = plan.pose_cell(a)?;
    let field = DistanceField::to_pose(plan, b)?;
    field.descend(plan, ca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::fixtures::ascii_plan;
    use proptest::prelude::*;

    fn cost_value(c: PathCost) -> f64 {
        c.straight as f64 + c.diagonal as f64 * 2f64.sqrt()
    }

    proptest! {
        #[test]
        fn ordering_matches_float_value(s1 in 0u32..5000, d1 in 0u32..5000, s2 in 0u32..5000, d2 in 0u32..5000) {
            let (a, b) = (PathCost { straight: s1, diagonal: d1 }, PathCost { straight: s2, diagonal: d2 });
            let (va, vb) = (cost_value(a), cost_value(b));
            if (va - vb).abs() > 1e-9 {
                prop_assert_eq!(a.cmp(&b), va.partial_cmp(&vb).unwrap());
            }
            prop_assert_eq!(a.cmp(&b) == Ordering::Equal, a == b);
        }
    }

    #[test]
    fn corridor_distance() {
        let plan = ascii_plan(&["#############", "#...........#", "#############"], 0.25);
        let a = Pose::at_cell(GridPos::new(1, 1), 0.25, 0.0);
        let b = Pose::at_cell(GridPos::new(1, 11), 0.25, 0.0);
        assert!((geodesic_distance(&plan, &a, &b).unwrap().unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_blocked_by_corner() {
        let plan = ascii_plan(&["#####", "#.#.#", "#...#", "#####"], 1.0);
        let a = Pose::at_cell(GridPos::new(1, 1), 1.0, 0.0);
        let b = Pose::at_cell(GridPos::new(2, 2), 1.0, 0.0);
        // the wall at (1,2) blocks the diagonal, so two straight steps are needed
        assert_eq!(geodesic_distance(&plan, &a, &b).unwrap(), Some(2.0));
    }
}
