use serde::{Deserialize, Serialize};

use super::{DistanceField, EpisodeSpec, SceneGrid};
use crate::error::{Error, Result};

/// Positions visited (start included) and how many goals were found in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<(f64, f64)>,
    pub found: usize,
}

impl Trajectory {
    pub fn path_length(&self) -> f64 {
        self.positions.windows(2).map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt()).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub success: f64,
    pub progress: f64,
    pub spl: f64,
    pub ppl: f64,
    pub path_length: f64,
    pub oracle_length: f64,
}

impl MetricsRecord {
    /// Field-wise mean.
    pub fn mean(records: &[MetricsRecord]) -> MetricsRecord {
        let n = records.len().max(1) as f64;
        let mut m = MetricsRecord::default();
        for r in records {
            m.success += r.success / n;
            m.progress += r.progress / n;
            m.spl += r.spl / n;
            m.ppl += r.ppl / n;
            m.path_length += r.path_length / n;
            m.oracle_length += r.oracle_length / n;
        }
        m
    }
}

fn weighted(score: f64, optimal: f64, travelled: f64) -> f64 {
    let denom = optimal.max(travelled);
    if denom > 0.0 {
        score * optimal / denom
    } else {
        score
    }
}

/// Success, progress and their path-length weighted versions. The oracle
/// length chains geodesics start→g1→…→gm; the progress variant stops at the
/// last goal found.
pub fn compute_metrics(scene: &SceneGrid, spec: &EpisodeSpec, traj: &Trajectory) -> Result<MetricsRecord> {
    if traj.positions.len() < 2 {
        return Err(Error::Contract("metrics need a trajectory with at least one step".into()));
    }
    let m = spec.goals.len();
    if m == 0 || traj.found > m {
        return Err(Error::Contract(format!("found {} of {m} goals", traj.found)));
    }
    let mut legs = Vec::with_capacity(m);
    let first = DistanceField::new(scene, spec.goals[0].cell)?;
    legs.push(first.pose(scene, spec.start.x, spec.start.y));
    for w in spec.goals.windows(2) {
        legs.push(DistanceField::new(scene, w[1].cell)?.cell(w[0].cell));
    }
    let d = traj.path_length();
    let d_star: f64 = legs.iter().sum();
    let d_star_p: f64 = legs[..traj.found].iter().sum();
    let success = if traj.found == m { 1.0 } else { 0.0 };
    let progress = traj.found as f64 / m as f64;
    let ppl = if traj.found == 0 { 0.0 } else { weighted(progress, d_star_p, d) };
    Ok(MetricsRecord {
        success,
        progress,
        spl: weighted(success, d_star, d),
        ppl,
        path_length: d,
        oracle_length: d_star,
    })
}
