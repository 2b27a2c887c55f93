use super::{Occupancy, Pose, SceneGrid};
use crate::error::{Error, Result};

/// Egocentric grid of codes, row 0 farthest ahead. Occupancy codes follow
/// [`Occupancy::code`]; object code 0 means none and `c+1` category `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EgoGrid {
    pub rows: usize,
    pub cols: usize,
    pub occupancy: Vec<u8>,
    pub objects: Vec<u8>,
}

impl EgoGrid {
    fn masked(rows: usize, cols: usize) -> Self {
        EgoGrid {
            rows,
            cols,
            occupancy: vec![Occupancy::OutOfBounds.code(); rows * cols],
            objects: vec![0; rows * cols],
        }
    }

    /// Channel-major one-hot planes: 3 occupancy planes, then `categories + 1`
    /// object planes (plane 3 is "no object").
    pub fn one_hot(&self, categories: usize) -> Vec<f64> {
        let hw = self.rows * self.cols;
        let mut out = vec![0.0; (4 + categories) * hw];
        for i in 0..hw {
            out[self.occupancy[i] as usize * hw + i] = 1.0;
            out[(3 + self.objects[i] as usize) * hw + i] = 1.0;
        }
        out
    }

    /// Interleaved `(occupancy, object)` codes per cell, row-major.
    pub fn codes(&self) -> Vec<usize> {
        self.occupancy.iter().zip(&self.objects).flat_map(|(&o, &b)| [o as usize, b as usize]).collect()
    }

    pub fn has_object(&self, code: u8) -> bool {
        self.objects.contains(&code)
    }
}

/// World cell sampled for the egocentric offset `(u right, v forward)`,
/// measured in cells from the centre of the navigator's cell.
fn sample_cell(scene: &SceneGrid, pose: &Pose, u: f64, v: f64) -> (i64, i64) {
    let (c, r) = scene.cell_of(pose.x, pose.y);
    let (rx, ry) = pose.right();
    let (fx, fy) = pose.forward();
    let px = c as f64 + 0.5 + u * rx + v * fx;
    let py = r as f64 + 0.5 + u * ry + v * fy;
    (px.floor() as i64, py.floor() as i64)
}

fn fill(grid: &mut EgoGrid, i: usize, scene: &SceneGrid, cell: (i64, i64)) {
    grid.occupancy[i] = scene.occ_at(cell.0, cell.1).code();
    grid.objects[i] = scene.object_at(cell.0, cell.1).map_or(0, |c| c + 1);
}

/// The oracle's `g×g` map crop around the navigator, rotated so the
/// navigator faces up, by nearest-cell sampling.
pub fn oracle_view(scene: &SceneGrid, pose: &Pose, g: usize) -> Result<EgoGrid> {
    if g % 2 == 0 {
        return Err(Error::Parameter(format!("crop size must be odd, got {g}")));
    }
    let half = (g / 2) as i64;
    let mut out = EgoGrid::masked(g, g);
    for i in 0..g {
        for j in 0..g {
            let u = j as i64 - half;
            let v = half - i as i64;
            let cell = sample_cell(scene, pose, u as f64, v as f64);
            fill(&mut out, i * g + j, scene, cell);
        }
    }
    Ok(out)
}

/// Cells visited by the segment between two cell centres, both ends
/// included. A segment through a grid vertex steps diagonally.
pub fn ray_cells(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let (sx, sy) = (dx.signum(), dy.signum());
    let (ax, ay) = (dx.abs(), dy.abs());
    let mut cur = from;
    let mut out = vec![cur];
    let (mut kx, mut ky) = (0i64, 0i64);
    while cur != to {
        // next vertical boundary at t=(2kx+1)/(2ax), horizontal at (2ky+1)/(2ay)
        let step_x;
        let step_y;
        if ax == 0 {
            (step_x, step_y) = (false, true);
        } else if ay == 0 {
            (step_x, step_y) = (true, false);
        } else {
            let lhs = (2 * kx + 1) * ay;
            let rhs = (2 * ky + 1) * ax;
            (step_x, step_y) = (lhs <= rhs, rhs <= lhs);
        }
        if step_x {
            cur.0 += sx;
            kx += 1;
        }
        if step_y {
            cur.1 += sy;
            ky += 1;
        }
        out.push(cur);
    }
    out
}

/// The navigator's symbolic egocentric view: a `v×v` window with the agent at
/// the bottom-centre, masked outside the field of view, beyond `range` world
/// units and behind non-free cells.
pub fn nav_view(scene: &SceneGrid, pose: &Pose, v: usize, fov_deg: f64, range: f64) -> Result<EgoGrid> {
    if v % 2 == 0 {
        return Err(Error::Parameter(format!("view size must be odd, got {v}")));
    }
    if !(fov_deg > 0.0 && fov_deg <= 360.0) {
        return Err(Error::Parameter(format!("field of view must lie in (0, 360], got {fov_deg}")));
    }
    let half = (v / 2) as i64;
    let origin = scene.cell_of(pose.x, pose.y);
    let mut out = EgoGrid::masked(v, v);
    for i in 0..v {
        for j in 0..v {
            let u = j as i64 - half;
            let w = (v - 1 - i) as i64;
            if (u, w) != (0, 0) {
                let bearing = (u.abs() as f64).atan2(w as f64).to_degrees();
                if bearing > fov_deg / 2.0 + 1e-9 {
                    continue;
                }
            }
            if (((u * u + w * w) as f64).sqrt() * scene.cell_size) > range {
                continue;
            }
            let cell = sample_cell(scene, pose, u as f64, w as f64);
            let path = ray_cells(origin, cell);
            let blocked = path.len() > 2
                && path[1..path.len() - 1].iter().any(|&(c, r)| scene.occ_at(c, r) != Occupancy::Free);
            if !blocked {
                fill(&mut out, i * v + j, scene, cell);
            }
        }
    }
    Ok(out)
}
