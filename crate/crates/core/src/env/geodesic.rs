use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use super::{Occupancy, Pose, SceneGrid};
use crate::error::{Error, Result};

/// Path cost as (orthogonal steps, diagonal steps). Keeping integer counts
/// makes equal paths produce bit-identical lengths regardless of search order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Steps(u32, u32);

impl Steps {
    fn key(self) -> f64 {
        self.0 as f64 + self.1 as f64 * SQRT_2
    }
}

#[derive(PartialEq)]
struct Entry(f64, Steps, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.2.cmp(&self.2))
    }
}

/// 8-neighbour moves `(dc, dr, diagonal)`.
pub(crate) const MOVES: [(i64, i64, bool); 8] = [
    (1, 0, false),
    (-1, 0, false),
    (0, 1, false),
    (0, -1, false),
    (1, 1, true),
    (1, -1, true),
    (-1, 1, true),
    (-1, -1, true),
];

/// Whether a step from `(c,r)` by `(dc,dr)` is legal: the target is free
/// and a diagonal does not squeeze past a blocked orthogonal neighbour.
pub(crate) fn can_step(scene: &SceneGrid, c: i64, r: i64, dc: i64, dr: i64) -> bool {
    let free = |c: i64, r: i64| scene.occ_at(c, r) == Occupancy::Free;
    free(c + dc, r + dr) && (dc == 0 || dr == 0 || (free(c + dc, r) && free(c, r + dr)))
}

/// Shortest-path lengths from one source cell to every cell, in world units.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub source: usize,
    dist: Vec<f64>,
    cell_size: f64,
    width: usize,
}

impl DistanceField {
    pub fn new(scene: &SceneGrid, source: usize) -> Result<Self> {
        if !scene.is_free(source) {
            return Err(Error::Parameter(format!("geodesic source {source} is not a free cell")));
        }
        let n = scene.len();
        let mut best: Vec<Option<Steps>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        best[source] = Some(Steps(0, 0));
        heap.push(Entry(0.0, Steps(0, 0), source));
        while let Some(Entry(_, steps, i)) = heap.pop() {
            if done[i] {
                continue;
            }
            done[i] = true;
            let (c, r) = scene.coords(i);
            let (c, r) = (c as i64, r as i64);
            for &(dc, dr, diag) in &MOVES {
                if !can_step(scene, c, r, dc, dr) {
                    continue;
                }
                let j = scene.index((c + dc) as usize, (r + dr) as usize);
                let cand = if diag { Steps(steps.0, steps.1 + 1) } else { Steps(steps.0 + 1, steps.1) };
                if best[j].is_none_or(|b| cand.key() < b.key()) {
                    best[j] = Some(cand);
                    heap.push(Entry(cand.key(), cand, j));
                }
            }
        }
        let dist = best
            .iter()
            .map(|b| b.map_or(f64::INFINITY, |s| s.key() * scene.cell_size))
            .collect();
        Ok(DistanceField { source, dist, cell_size: scene.cell_size, width: scene.width })
    }

    /// Distance from a cell to the source; `+∞` if unreachable or not free.
    pub fn cell(&self, idx: usize) -> f64 {
        self.dist[idx]
    }

    /// Distance from a continuous point: the best over the containing cell and
    /// its legal neighbours of straight-line offset to the cell centre plus
    /// that cell's distance. Equals [`cell`](Self::cell) at cell centres.
    pub fn pose(&self, scene: &SceneGrid, x: f64, y: f64) -> f64 {
        let (c, r) = scene.cell_of(x, y);
        if scene.occ_at(c, r) != Occupancy::Free {
            return f64::INFINITY;
        }
        let own = self.dist[scene.index(c as usize, r as usize)];
        let (cx, cy) = ((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size);
        if x == cx && y == cy {
            return own;
        }
        let mut best = own + ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        for &(dc, dr, _) in &MOVES {
            if !can_step(scene, c, r, dc, dr) {
                continue;
            }
            let j = (r + dr) as usize * self.width + (c + dc) as usize;
            let (nx, ny) = ((c + dc) as f64 + 0.5, (r + dr) as f64 + 0.5);
            let off = ((x - nx * self.cell_size).powi(2) + (y - ny * self.cell_size).powi(2)).sqrt();
            best = best.min(self.dist[j] + off);
        }
        best
    }
}

/// Either end of a geodesic query.
#[derive(Clone, Copy, Debug)]
pub enum Endpoint {
    Cell(usize),
    Pose(Pose),
}

/// Shortest 8-connected path length over free cells from `from` to the cell `to`.
pub fn geodesic_distance(scene: &SceneGrid, from: Endpoint, to: usize) -> Result<f64> {
    let field = DistanceField::new(scene, to)?;
    match from {
        Endpoint::Cell(c) => {
            if !scene.is_free(c) {
                return Err(Error::Parameter(format!("geodesic endpoint {c} is not a free cell")));
            }
            Ok(field.cell(c))
        }
        Endpoint::Pose(p) => {
            if scene.free_cell_of(p.x, p.y).is_none() {
                return Err(Error::Parameter(format!("pose ({}, {}) is not on a free cell", p.x, p.y)));
            }
            Ok(field.pose(scene, p.x, p.y))
        }
    }
}
