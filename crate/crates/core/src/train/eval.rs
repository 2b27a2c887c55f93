use rand_chacha::ChaCha8Rng;

use super::stream;
use crate::agent::{act, rand_message, ActMode, AgentModel, Injection, MessageKind, MessageStats, Observations};
use crate::env::{Action, EgoGrid, EnvConfig, LoadedDataset, MetricsRecord, NavObservation, NavSim};
use crate::error::{Error, Result};
use crate::interpret::{bin_symbols, decoy_objects, relative_goal_frame, Intervention, ScriptedPolicy, TraceRow};
use crate::tensor::{Graph, ParamStore, Tensor};

/// Who picks the navigator's actions.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    Model { model: &'a AgentModel, store: &'a ParamStore },
    /// Walks to the visible goal, otherwise along the oracle's shortest path.
    Scripted,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub mode: ActMode,
    /// Per-episode RNG streams derive from this seed and the episode index.
    pub seed: u64,
    /// Keep only the first `m` goals of every episode.
    pub goals: Option<usize>,
    pub intervention: Intervention,
    /// Statistics for random U-Comm payloads (standard normal when absent).
    pub message_stats: Option<MessageStats>,
    pub trace: bool,
    /// Episodes advanced in lockstep.
    pub batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: ActMode::Argmax,
            seed: 0,
            goals: None,
            intervention: Intervention::None,
            message_stats: None,
            trace: false,
            batch: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub steps: usize,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub aggregate: MetricsRecord,
    pub episodes: Vec<EpisodeResult>,
    pub trace: Vec<TraceRow>,
}

/// ARGMAX evaluation of a model on `indices` of `data`.
pub fn evaluate(
    model: &AgentModel,
    store: &ParamStore,
    env: &EnvConfig,
    data: &LoadedDataset,
    indices: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    let opts = EvalOptions { seed, ..EvalOptions::default() };
    run_episodes(Controller::Model { model, store }, env, data, indices, &opts)
}

const MESSAGE_STREAMS: u64 = 1 << 63;

struct Slot {
    episode: usize,
    sim: NavSim,
    rng: ChaCha8Rng,
    /// Separate stream for random payloads, so replacing messages on an
    /// inert channel leaves action sampling untouched.
    msg_rng: ChaCha8Rng,
    hidden: Vec<f64>,
    obs: NavObservation,
    oracle: Option<EgoGrid>,
    scripted: Option<ScriptedPolicy>,
    visible_objects: Vec<(usize, u8)>,
    done: bool,
}

/// Random counterpart of a channel, used for oracle→navigator replacement.
fn random_kind(kind: MessageKind) -> MessageKind {
    match kind {
        MessageKind::UComm | MessageKind::RandUComm => MessageKind::RandUComm,
        MessageKind::SComm | MessageKind::RandSComm => MessageKind::RandSComm,
    }
}

/// Runs every episode to termination. Episodes are independent of each other
/// and of the batch size.
pub fn run_episodes(
    ctrl: Controller,
    env: &EnvConfig,
    data: &LoadedDataset,
    indices: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if let (Controller::Model { model, .. }, Intervention::RandomWhenVisible | Intervention::RandomAlways) =
        (ctrl, opts.intervention)
    {
        if model.variant().message_kind().is_none() {
            return Err(Error::Contract(format!("{} has no messages to replace", model.variant().name())));
        }
    }
    let mut results = Vec::with_capacity(indices.len());
    let mut trace = Vec::new();
    for chunk in indices.chunks(opts.batch.max(1)) {
        let mut slots = chunk.iter().map(|&i| new_slot(ctrl, env, data, i, opts)).collect::<Result<Vec<_>>>()?;
        let mut finished: Vec<Option<EpisodeResult>> = vec![None; slots.len()];
        loop {
            let active: Vec<usize> = (0..slots.len()).filter(|&s| !slots[s].done).collect();
            if active.is_empty() {
                break;
            }
            let (actions, messages) = choose_actions(ctrl, env, &mut slots, &active, opts)?;
            for (k, &s) in active.iter().enumerate() {
                let slot = &mut slots[s];
                let pre_pose = slot.sim.pose();
                let goal = slot.sim.current_goal();
                let t = slot.sim.t();
                let visible = slot.obs.goal_visible();
                let res = slot.sim.step(actions[k].0)?;
                if opts.trace {
                    let variant = match ctrl {
                        Controller::Model { model, .. } => model.variant().name(),
                        Controller::Scripted => "SCRIPTED",
                    };
                    let goal = goal.expect("running episodes have a current goal");
                    let (gx, gy) = slot.sim.scene().center(goal.cell);
                    let (rel_x, rel_y) = relative_goal_frame(&pre_pose, (gx, gy));
                    let bearing = rel_x.atan2(rel_y).to_degrees().abs();
                    let msgs = &messages[k];
                    let vocab = match ctrl {
                        Controller::Model { model, .. } if model.variant().structured() => Some(model.cfg.vocab),
                        _ => None,
                    };
                    let sym = |m: &Vec<f64>| -> Result<Option<u8>> {
                        match vocab {
                            Some(k @ (2 | 3)) if !m.is_empty() => Ok(Some(bin_symbols(m, k)?.symbol)),
                            _ => Ok(None),
                        }
                    };
                    let get = |slot: usize| msgs.get(slot).cloned().unwrap_or_default();
                    // slot order is m1_O→N, m1_N→O, m2_O→N, m2_N→O
                    let (m1_on, m1_no, m2_on, m2_no) = (get(0), get(1), get(2), get(3));
                    trace.push(TraceRow {
                        episode_id: slot.episode,
                        step: t,
                        variant: variant.to_string(),
                        goal_cat: goal.category,
                        rel_x,
                        rel_y,
                        in_fov: rel_x == 0.0 && rel_y == 0.0 || bearing <= env.fov_deg / 2.0 + 1e-9,
                        visible,
                        sym1_no: sym(&m1_no)?,
                        sym1_on: sym(&m1_on)?,
                        sym2_no: sym(&m2_no)?,
                        sym2_on: sym(&m2_on)?,
                        m1_no,
                        m1_on,
                        m2_no,
                        m2_on,
                        action: actions[k].0,
                        reward: res.reward,
                    });
                }
                if res.done {
                    slot.done = true;
                    finished[s] =
                        Some(EpisodeResult { episode: slot.episode, steps: slot.sim.t(), metrics: slot.sim.metrics()? });
                } else {
                    if let Some(h) = &actions[k].1 {
                        slot.hidden.clone_from(h);
                    }
                    slot.oracle = if slot.oracle.is_some() { Some(slot.sim.oracle_view()?) } else { None };
                    slot.obs = res.obs;
                }
            }
        }
        results.extend(finished.into_iter().map(|r| r.expect("every episode terminates")));
    }
    let records: Vec<MetricsRecord> = results.iter().map(|r| r.metrics).collect();
    Ok(EvalReport { aggregate: MetricsRecord::mean(&records), episodes: results, trace })
}

fn new_slot(ctrl: Controller, env: &EnvConfig, data: &LoadedDataset, idx: usize, opts: &EvalOptions) -> Result<Slot> {
    let (scene, spec) = data.episodes.get(idx).ok_or_else(|| Error::Data(format!("no episode {idx} in the dataset")))?;
    let mut spec = spec.clone();
    if let Some(m) = opts.goals {
        if m == 0 || m > spec.goals.len() {
            return Err(Error::Data(format!("episode {idx} has {} goals, {m} requested", spec.goals.len())));
        }
        spec.goals.truncate(m);
    }
    let scene = data.scenes.get(*scene).ok_or_else(|| Error::Data(format!("episode {idx} names a missing scene")))?;
    if scene.id != spec.scene {
        return Err(Error::Data(format!("episode {idx} belongs to scene `{}`, not `{}`", spec.scene, scene.id)));
    }
    let mut sim = NavSim::new(scene, spec, env)?;
    let visible_objects = if opts.intervention == Intervention::WrongGoal {
        let decoys = decoy_objects(sim.scene(), sim.spec(), env)?;
        sim.render_objects(&decoys)?;
        decoys
    } else {
        sim.spec().objects()
    };
    let (hidden, oracle, scripted) = match ctrl {
        Controller::Model { model, .. } => {
            let oracle = if model.needs_oracle_view() { Some(sim.oracle_view()?) } else { None };
            (vec![0.0; model.hidden()], oracle, None)
        }
        Controller::Scripted => (Vec::new(), None, Some(ScriptedPolicy::default())),
    };
    Ok(Slot {
        episode: idx,
        obs: sim.observe()?,
        sim,
        rng: stream(opts.seed, idx as u64),
        msg_rng: stream(opts.seed, MESSAGE_STREAMS | idx as u64),
        hidden,
        oracle,
        scripted,
        visible_objects,
        done: false,
    })
}

type Choice = (Action, Option<Vec<f64>>);

/// Actions (with next hidden rows) and the four message payloads per active slot.
fn choose_actions(
    ctrl: Controller,
    env: &EnvConfig,
    slots: &mut [Slot],
    active: &[usize],
    opts: &EvalOptions,
) -> Result<(Vec<Choice>, Vec<Vec<Vec<f64>>>)> {
    let (model, store) = match ctrl {
        Controller::Scripted => {
            let mut out = Vec::with_capacity(active.len());
            for &s in active {
                let slot = &mut slots[s];
                let policy = slot.scripted.as_mut().expect("scripted slots carry a policy");
                out.push((policy.act(&slot.sim, &slot.visible_objects, env)?, None));
            }
            return Ok((out, vec![Vec::new(); active.len()]));
        }
        Controller::Model { model, store } => (model, store),
    };
    let n = active.len();
    let hd = model.hidden();
    let mut obs = Observations::default();
    let mut hidden = Vec::with_capacity(n * hd);
    for &s in active {
        obs.push(&slots[s].obs, slots[s].oracle.as_ref());
        hidden.extend_from_slice(&slots[s].hidden);
    }
    let injections = injections(model, slots, active, opts)?;
    let mut g = Graph::no_grad();
    let enc = model.encode(&mut g, store, &obs, &injections)?;
    let h = g.input(&Tensor::new(&[n, hd], hidden)?);
    let out = model.policy_forward(&mut g, store, enc.gru_input, h)?;
    let logits = g.value(out.logits).to_vec();
    let next = g.value(out.hidden).to_vec();
    let msg_vals: Vec<Vec<f64>> = enc.messages.iter().map(|&m| g.value(m).to_vec()).collect();
    let mut choices = Vec::with_capacity(n);
    let mut messages = Vec::with_capacity(n);
    for (k, &s) in active.iter().enumerate() {
        let (a, _) = act(&logits[k * 4..(k + 1) * 4], opts.mode, &mut slots[s].rng)?;
        choices.push((Action::from_index(a)?, Some(next[k * hd..(k + 1) * hd].to_vec())));
        messages.push(
            msg_vals
                .iter()
                .map(|v| {
                    let w = v.len() / n;
                    v[k * w..(k + 1) * w].to_vec()
                })
                .collect(),
        );
    }
    Ok((choices, messages))
}

fn injections(model: &AgentModel, slots: &mut [Slot], active: &[usize], opts: &EvalOptions) -> Result<Vec<Injection>> {
    let Some(kind) = model.variant().message_kind() else { return Ok(Vec::new()) };
    let width = model.message_width();
    let standard;
    let stats = match &opts.message_stats {
        Some(s) => Some(s),
        None => {
            standard = MessageStats::standard(width);
            Some(&standard)
        }
    };
    let (replaced, rkind): (&[usize], MessageKind) = if model.variant().is_random() {
        (&[0, 1, 2, 3], kind)
    } else {
        match opts.intervention {
            Intervention::RandomWhenVisible | Intervention::RandomAlways => (&[0, 2], random_kind(kind)),
            _ => return Ok(Vec::new()),
        }
    };
    let mut payloads = vec![Vec::with_capacity(active.len() * width); replaced.len()];
    for &s in active {
        for (j, &slot) in replaced.iter().enumerate() {
            payloads[j].extend(rand_message(rkind, &mut slots[s].msg_rng, stats, slot, width, 1)?);
        }
    }
    let mask: Vec<bool> = active
        .iter()
        .map(|&s| model.variant().is_random() || opts.intervention != Intervention::RandomWhenVisible || slots[s].obs.goal_visible())
        .collect();
    Ok(replaced
        .iter()
        .zip(payloads)
        .map(|(&slot, payload)| Injection { slot, payload, mask: mask.clone() })
        .collect())
}

