use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::env::{DistanceField, EnvConfig, EpisodeSpec, LoadedDataset, MetricsRecord, SceneGrid};
use crate::error::{Error, Result};
use crate::train::{run_episodes, Controller, EvalOptions};

/// Evaluation-time manipulation of the channel or the navigator's view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Intervention {
    #[default]
    None,
    /// Oracle→navigator payloads are random while the goal is visible.
    RandomWhenVisible,
    /// Oracle→navigator payloads are always random.
    RandomAlways,
    /// The navigator sees the goal object at a decoy cell; the oracle keeps the truth.
    WrongGoal,
}

impl Intervention {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => Ok(Intervention::None),
            "random-when-visible" => Ok(Intervention::RandomWhenVisible),
            "random-always" => Ok(Intervention::RandomAlways),
            "wrong-goal" => Ok(Intervention::WrongGoal),
            other => Err(Error::Config(format!("unknown intervention `{other}`"))),
        }
    }
}

/// One decoy per goal, same category, on a free cell without objects.
/// The decoy sits on a shortest route from the previous goal (or the start)
/// to the goal, near its middle, and far enough from the goal that calling
/// FOUND next to it fails. Off-route cells are used only when no route cell
/// qualifies.
pub fn decoy_objects(scene: &SceneGrid, spec: &EpisodeSpec, env: &EnvConfig) -> Result<Vec<(usize, u8)>> {
    let mut taken: BTreeSet<usize> = spec.goals.iter().map(|g| g.cell).collect();
    let mut from = scene
        .free_cell_of(spec.start.x, spec.start.y)
        .ok_or_else(|| Error::Parameter("episode start is not on a free cell".into()))?;
    let min_gap = 2.0 * env.found_threshold + scene.cell_size;
    let mut out = Vec::with_capacity(spec.goals.len());
    for goal in &spec.goals {
        let to_goal = DistanceField::new(scene, goal.cell)?;
        let to_from = DistanceField::new(scene, from)?;
        let route = to_goal.cell(from);
        let cands: Vec<usize> = scene
            .free_cells()
            .into_iter()
            .filter(|&c| c != from && !taken.contains(&c) && scene.objects[c].is_none())
            .filter(|&c| to_goal.cell(c).is_finite() && to_goal.cell(c) > min_gap)
            .collect();
        let detour = |c: usize| to_from.cell(c) + to_goal.cell(c) - route;
        let pick = cands
            .iter()
            .copied()
            .filter(|&c| detour(c) <= 1e-9)
            .min_by(|&a, &b| {
                let mid = |c: usize| (to_from.cell(c) - route / 2.0).abs();
                mid(a).total_cmp(&mid(b)).then(a.cmp(&b))
            })
            .or_else(|| cands.iter().copied().min_by(|&a, &b| detour(a).total_cmp(&detour(b)).then(a.cmp(&b))))
            .ok_or_else(|| Error::Infeasible(format!("no decoy cell for goal at cell {}", goal.cell)))?;
        taken.insert(pick);
        out.push((pick, goal.category));
        from = goal.cell;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedEpisode {
    pub episode: usize,
    pub baseline: MetricsRecord,
    pub intervened: MetricsRecord,
}

/// Both arms over one episode set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub mode: Intervention,
    pub seed: u64,
    pub episodes: Vec<usize>,
    pub baseline: MetricsRecord,
    pub intervened: MetricsRecord,
    pub pairs: Vec<PairedEpisode>,
}

pub fn intervene(
    ctrl: Controller,
    env: &EnvConfig,
    data: &LoadedDataset,
    indices: &[usize],
    mode: Intervention,
    opts: &EvalOptions,
) -> Result<InterventionReport> {
    if let Controller::Model { model, .. } = ctrl {
        if model.variant().message_kind().is_none() {
            return Err(Error::Contract(format!("interventions need a communicating variant, got {}", model.variant().name())));
        }
    }
    let base_opts = EvalOptions { intervention: Intervention::None, trace: false, ..opts.clone() };
    let test_opts = EvalOptions { intervention: mode, trace: false, ..opts.clone() };
    let base = run_episodes(ctrl, env, data, indices, &base_opts)?;
    let test = run_episodes(ctrl, env, data, indices, &test_opts)?;
    let pairs = base
        .episodes
        .iter()
        .zip(&test.episodes)
        .map(|(b, t)| PairedEpisode { episode: b.episode, baseline: b.metrics, intervened: t.metrics })
        .collect();
    Ok(InterventionReport {
        mode,
        seed: opts.seed,
        episodes: indices.to_vec(),
        baseline: base.aggregate,
        intervened: test.aggregate,
        pairs,
    })
}
