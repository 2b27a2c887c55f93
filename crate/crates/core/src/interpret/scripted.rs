use std::collections::HashMap;

use crate::env::{can_step, Action, DistanceField, EnvConfig, NavSim, HEADINGS, MOVES, TURN_DEG};
use crate::error::{Error, Result};

/// Hand-written navigator. It walks to the goal object when one of the
/// right category is in view, and otherwise follows the shortest path to the
/// true goal, as an oracle describing the map would direct it.
#[derive(Clone, Debug, Default)]
pub struct ScriptedPolicy {
    fields: HashMap<usize, DistanceField>,
}

impl ScriptedPolicy {
    /// `shown` lists the objects the navigator can see in the scene.
    pub fn act(&mut self, sim: &NavSim, shown: &[(usize, u8)], env: &EnvConfig) -> Result<Action> {
        let goal = sim.current_goal().ok_or_else(|| Error::Contract("episode has no goal left".into()))?;
        let scene = sim.scene();
        let pose = sim.pose();
        let target = if sim.observe()?.goal_visible() {
            shown
                .iter()
                .filter(|(_, c)| *c == goal.category)
                .map(|&(cell, _)| {
                    let (cx, cy) = scene.center(cell);
                    ((cx - pose.x).hypot(cy - pose.y), cell)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map_or(goal.cell, |(_, cell)| cell)
        } else {
            goal.cell
        };
        if !self.fields.contains_key(&target) {
            self.fields.insert(target, DistanceField::new(scene, target)?);
        }
        let field = &self.fields[&target];
        if field.pose(scene, pose.x, pose.y) <= env.found_threshold {
            return Ok(Action::Found);
        }

        let (c, r) = scene.cell_of(pose.x, pose.y);
        let here = scene.index(c as usize, r as usize);
        let waypoint = if here == target {
            target
        } else {
            let mut best = (f64::INFINITY, here);
            for &(dc, dr, diag) in &MOVES {
                if can_step(scene, c, r, dc, dr) {
                    let n = scene.index((c + dc) as usize, (r + dr) as usize);
                    let hop = if diag { std::f64::consts::SQRT_2 } else { 1.0 } * scene.cell_size;
                    if field.cell(n) + hop < best.0 {
                        best = (field.cell(n) + hop, n);
                    }
                }
            }
            best.1
        };
        let (wx, wy) = scene.center(waypoint);
        // heading angle convention: counter-clockwise from +y
        let desired = (-(wx - pose.x)).atan2(wy - pose.y).to_degrees().rem_euclid(360.0);
        let current = (pose.theta / TURN_DEG) as usize;
        let gap = |k: usize| {
            let d = (k as f64 * TURN_DEG as f64 - desired).rem_euclid(360.0);
            d.min(360.0 - d)
        };
        let turns = |k: usize| {
            let d = (k + HEADINGS - current) % HEADINGS;
            d.min(HEADINGS - d)
        };
        let mut order: Vec<usize> = (0..HEADINGS).collect();
        order.sort_by(|&a, &b| gap(a).total_cmp(&gap(b)).then(turns(a).cmp(&turns(b))).then(a.cmp(&b)));
        let free_ahead = |k: usize| {
            let p = pose.turned((k as i32 - current as i32) * TURN_DEG as i32);
            let (fx, fy) = p.forward();
            scene.free_cell_of(pose.x + env.forward_step * fx, pose.y + env.forward_step * fy).is_some()
        };
        let heading = order.into_iter().find(|&k| free_ahead(k)).unwrap_or(current);
        Ok(if heading == current {
            Action::Forward
        } else if (heading + HEADINGS - current) % HEADINGS <= HEADINGS / 2 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        })
    }
}
