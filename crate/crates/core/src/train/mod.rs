//! PPO with recurrent minibatches, rollout workers that share one reward
//! and one critic, checkpoints and evaluation.

mod buffer;
mod checkpoint;
mod config;
mod eval;
mod update;

pub use buffer::{compute_gae, normalize_advantages, RolloutBuffer};
pub use checkpoint::{config_digest, quantize_store, Checkpoint, CheckpointHeader, ManifestEntry, FORMAT_VERSION, MAGIC};
pub use config::PpoConfig;
pub use eval::{evaluate, run_episodes, Controller, EpisodeResult, EvalOptions, EvalReport};
pub use update::{minibatch_loss, minibatches, ppo_update, sequence_outputs, LossReport, Minibatch};

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{act, rand_message, ActMode, AgentModel, Injection, MessageStats, ModelConfig, Observations};
use crate::env::{Action, EgoGrid, EnvConfig, LoadedDataset, MetricsRecord, NavObservation, NavSim};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor};

/// Header of the training log.
pub const METRICS_HEADER: &str =
    "update,env_steps,mean_reward,success,progress,spl,ppl,policy_loss,value_loss,entropy,clip_frac";

/// Episodes kept for the running training metrics.
const METRIC_WINDOW: usize = 100;

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub success: f64,
    pub progress: f64,
    pub spl: f64,
    pub ppl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.env_steps,
            self.mean_reward,
            self.success,
            self.progress,
            self.spl,
            self.ppl,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_frac
        )
    }
}

/// Resumable per-worker state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub rng: ChaCha8Rng,
    pub episode: usize,
    /// Actions taken so far in the running episode, replayed on restore.
    pub actions: Vec<usize>,
    pub hidden: Vec<f64>,
}

/// Everything besides parameters that a resumed run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSnapshot {
    pub update_rng: ChaCha8Rng,
    pub workers: Vec<WorkerState>,
    pub recent: Vec<MetricsRecord>,
}

struct Worker {
    rng: ChaCha8Rng,
    episode: usize,
    actions: Vec<usize>,
    hidden: Vec<f64>,
    sim: NavSim,
    obs: NavObservation,
    oracle: Option<EgoGrid>,
}

/// RNG stream assignment under one master seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
const INIT_STREAM: u64 = 0;
const UPDATE_STREAM: u64 = 1;
const WORKER_STREAM0: u64 = 2;

/// Training state: parameters, counters, RNG streams and the running episodes.
pub struct Trainer {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub model: AgentModel,
    pub store: ParamStore,
    pub env_steps: u64,
    pub updates: u64,
    /// Statistics for random U-Comm payloads.
    pub message_stats: Option<MessageStats>,
    data: Arc<LoadedDataset>,
    workers: Vec<Worker>,
    update_rng: ChaCha8Rng,
    recent: VecDeque<MetricsRecord>,
}

impl Trainer {
    pub fn new(env: &EnvConfig, model_cfg: &ModelConfig, ppo: &PpoConfig, data: Arc<LoadedDataset>) -> Result<Self> {
        ppo.validate()?;
        if data.episodes.is_empty() {
            return Err(Error::Data("training dataset has no episodes".into()));
        }
        let mut store = ParamStore::new();
        let model = AgentModel::build(model_cfg, env, &mut store, &mut stream(ppo.seed, INIT_STREAM))?;
        let message_stats = match model_cfg.variant {
            crate::agent::Variant::RandUComm => Some(MessageStats::standard(model_cfg.message_len)),
            _ => None,
        };
        let mut t = Trainer {
            env: env.clone(),
            ppo: ppo.clone(),
            model,
            store,
            env_steps: 0,
            updates: 0,
            message_stats,
            data,
            workers: Vec::new(),
            update_rng: stream(ppo.seed, UPDATE_STREAM),
            recent: VecDeque::new(),
        };
        for w in 0..ppo.num_workers {
            let mut rng = stream(ppo.seed, WORKER_STREAM0 + w as u64);
            let episode = rng.random_range(0..t.data.episodes.len());
            let state = WorkerState { rng, episode, actions: Vec::new(), hidden: vec![0.0; t.model.hidden()] };
            let worker = t.restore_worker(state)?;
            t.workers.push(worker);
        }
        Ok(t)
    }

    /// Rebuilds a trainer from a checkpoint that carries training state.
    pub fn from_checkpoint(ckpt: &Checkpoint, data: Arc<LoadedDataset>) -> Result<Self> {
        let h = &ckpt.header;
        let snap = h.state.as_ref().ok_or_else(|| Error::Data("checkpoint has no training state".into()))?;
        let mut t = Trainer::new(&h.env, &h.model, &h.ppo, data)?;
        ckpt.restore_into(&mut t.store)?;
        t.env_steps = h.env_steps;
        t.updates = h.updates;
        t.message_stats = h.message_stats.clone();
        t.update_rng = snap.update_rng.clone();
        t.recent = snap.recent.iter().copied().collect();
        if snap.workers.len() != t.ppo.num_workers {
            return Err(Error::Data("checkpoint worker count differs from its config".into()));
        }
        t.workers = snap.workers.iter().map(|s| t.restore_worker(s.clone())).collect::<Result<_>>()?;
        Ok(t)
    }

    fn restore_worker(&self, s: WorkerState) -> Result<Worker> {
        let (scene, spec) = self
            .data
            .episodes
            .get(s.episode)
            .ok_or_else(|| Error::Data(format!("episode {} is not in the dataset", s.episode)))?;
        let mut sim = NavSim::new(&self.data.scenes[*scene], spec.clone(), &self.env)?;
        let mut obs = sim.observe()?;
        for &a in &s.actions {
            obs = sim.step(Action::from_index(a)?)?.obs;
        }
        let oracle = if self.model.needs_oracle_view() { Some(sim.oracle_view()?) } else { None };
        Ok(Worker { rng: s.rng, episode: s.episode, actions: s.actions, hidden: s.hidden, sim, obs, oracle })
    }

    pub fn snapshot(&self) -> TrainSnapshot {
        TrainSnapshot {
            update_rng: self.update_rng.clone(),
            workers: self
                .workers
                .iter()
                .map(|w| WorkerState {
                    rng: w.rng.clone(),
                    episode: w.episode,
                    actions: w.actions.clone(),
                    hidden: w.hidden.clone(),
                })
                .collect(),
            recent: self.recent.iter().copied().collect(),
        }
    }

    /// Quantizes the live state to checkpoint precision and captures it.
    pub fn checkpoint(&mut self) -> Result<Checkpoint> {
        quantize_store(&mut self.store);
        for w in &mut self.workers {
            w.hidden.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Checkpoint::from_store(
            &self.store,
            &self.env,
            &self.model.cfg,
            &self.ppo,
            self.message_stats.clone(),
            self.env_steps,
            self.updates,
            Some(self.snapshot()),
        )
    }

    pub fn recent_metrics(&self) -> MetricsRecord {
        let v: Vec<MetricsRecord> = self.recent.iter().copied().collect();
        MetricsRecord::mean(&v)
    }

    fn random_payloads(&mut self) -> Result<Vec<Vec<f64>>> {
        let Some(kind) = self.model.variant().message_kind().filter(|_| self.model.variant().is_random()) else {
            return Ok(Vec::new());
        };
        let width = self.model.message_width();
        let mut slots = vec![Vec::with_capacity(self.workers.len() * width); 4];
        for w in &mut self.workers {
            for (slot, out) in slots.iter_mut().enumerate() {
                out.extend(rand_message(kind, &mut w.rng, self.message_stats.as_ref(), slot, width, 1)?);
            }
        }
        Ok(slots)
    }

    /// Logits, values and next hidden rows for the workers' current observations.
    fn forward(&self, obs: &Observations, hidden: &[f64], payloads: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = obs.batch;
        let injections: Vec<Injection> = payloads
            .iter()
            .enumerate()
            .map(|(slot, p)| Injection { slot, payload: p.clone(), mask: vec![true; n] })
            .collect();
        let mut g = Graph::no_grad();
        let enc = self.model.encode(&mut g, &self.store, obs, &injections)?;
        let h = g.input(&Tensor::new(&[n, self.model.hidden()], hidden.to_vec())?);
        let out = self.model.policy_forward(&mut g, &self.store, enc.gru_input, h)?;
        Ok((g.value(out.logits).to_vec(), g.value(out.value).to_vec(), g.value(out.hidden).to_vec()))
    }

    fn batch_inputs(&self) -> (Observations, Vec<f64>) {
        let mut obs = Observations::default();
        let mut hidden = Vec::with_capacity(self.workers.len() * self.model.hidden());
        for w in &self.workers {
            obs.push(&w.obs, w.oracle.as_ref());
            hidden.extend_from_slice(&w.hidden);
        }
        (obs, hidden)
    }

    fn reset_worker(&mut self, i: usize) -> Result<()> {
        let n = self.data.episodes.len();
        let w = &mut self.workers[i];
        let state = WorkerState {
            episode: w.rng.random_range(0..n),
            rng: w.rng.clone(),
            actions: Vec::new(),
            hidden: vec![0.0; self.model.hidden()],
        };
        self.workers[i] = self.restore_worker(state)?;
        Ok(())
    }

    /// Advances every worker `rollout_length` steps with the current parameters.
    pub fn collect(&mut self) -> Result<RolloutBuffer> {
        let (nw, len, hd) = (self.workers.len(), self.ppo.rollout_length, self.model.hidden());
        let mut buf = RolloutBuffer::new(nw, len);
        for _ in 0..len {
            let (obs, hidden) = self.batch_inputs();
            let payloads = self.random_payloads()?;
            let (logits, values, next) = self.forward(&obs, &hidden, &payloads)?;
            for i in 0..nw {
                let (a, logp) = act(&logits[i * 4..(i + 1) * 4], ActMode::Sample, &mut self.workers[i].rng)?;
                let w = &mut self.workers[i];
                let res = w.sim.step(Action::from_index(a)?)?;
                buf.actions.push(a);
                buf.log_probs.push(logp);
                buf.values.push(values[i]);
                buf.rewards.push(res.reward);
                buf.dones.push(res.done);
                if res.done {
                    let m = w.sim.metrics()?;
                    if self.recent.len() == METRIC_WINDOW {
                        self.recent.pop_front();
                    }
                    self.recent.push_back(m);
                    self.reset_worker(i)?;
                } else {
                    w.actions.push(a);
                    w.hidden.copy_from_slice(&next[i * hd..(i + 1) * hd]);
                    w.oracle = if self.model.needs_oracle_view() { Some(w.sim.oracle_view()?) } else { None };
                    w.obs = res.obs;
                }
            }
            buf.obs.push(obs);
            buf.hidden.push(hidden);
            if !payloads.is_empty() {
                buf.payloads.push(payloads);
            }
        }
        self.env_steps += (nw * len) as u64;
        Ok(buf)
    }

    /// Critic values of the states following the rollout.
    pub fn bootstrap_values(&mut self) -> Result<Vec<f64>> {
        let (obs, hidden) = self.batch_inputs();
        let payloads = self.random_payloads()?;
        Ok(self.forward(&obs, &hidden, &payloads)?.1)
    }

    /// One collect → GAE → PPO cycle.
    pub fn train_update(&mut self) -> Result<MetricsRow> {
        let mut buf = self.collect()?;
        let boot = self.bootstrap_values()?;
        buf.finalize(self.ppo.gamma, self.ppo.gae_lambda, &boot)?;
        let report = ppo_update(&mut self.store, &self.model, &buf, &self.ppo, &mut self.update_rng)?;
        self.updates += 1;
        let m = self.recent_metrics();
        Ok(MetricsRow {
            update: self.updates,
            env_steps: self.env_steps,
            mean_reward: buf.rewards.iter().sum::<f64>() / buf.rewards.len() as f64,
            success: m.success,
            progress: m.progress,
            spl: m.spl,
            ppl: m.ppl,
            policy_loss: report.policy,
            value_loss: report.value,
            entropy: report.entropy,
            clip_frac: report.clip_frac,
        })
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.ppo.total_steps
    }

    /// Trains until `total_steps`, writing `metrics.csv`, `eval.csv` and
    /// `ckpt_<update>.cmon` files into `out` when given. `max_updates` stops
    /// early; the last update is always checkpointed.
    pub fn run(
        &mut self,
        out: Option<&Path>,
        eval_data: Option<&LoadedDataset>,
        max_updates: Option<u64>,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Some(MetricsLog::open(dir, self.updates > 0)?)
            }
            None => None,
        };
        let start = self.updates;
        let mut saved = None;
        while !self.finished() && max_updates.is_none_or(|m| self.updates - start < m) {
            let row = self.train_update()?;
            log::info!(
                "update {} steps {} reward {:.4} success {:.3} progress {:.3}",
                row.update,
                row.env_steps,
                row.mean_reward,
                row.success,
                row.progress
            );
            if let Some(log) = &mut log {
                log.metrics(&row)?;
            }
            let u = self.updates;
            if let (Some(data), true) = (eval_data, self.ppo.eval_every > 0 && u % self.ppo.eval_every == 0) {
                let n = self.ppo.eval_episodes.min(data.episodes.len());
                let idx: Vec<usize> = (0..n).collect();
                let report = evaluate(&self.model, &self.store, &self.env, data, &idx, self.ppo.seed)?;
                if let Some(log) = &mut log {
                    log.eval(u, self.env_steps, &report.aggregate)?;
                }
            }
            let every = self.ppo.checkpoint_every;
            if let Some(dir) = out {
                if (every > 0 && u % every == 0) || self.finished() {
                    self.checkpoint()?.save(&dir.join(format!("ckpt_{u}.cmon")))?;
                    saved = Some(u);
                }
            }
            rows.push(row);
        }
        // an early stop still leaves a checkpoint to resume from
        if let (Some(dir), Some(last)) = (out, rows.last()) {
            if saved != Some(last.update) {
                self.checkpoint()?.save(&dir.join(format!("ckpt_{}.cmon", last.update)))?;
            }
        }
        Ok(rows)
    }
}

struct MetricsLog {
    metrics: std::fs::File,
    eval: std::fs::File,
    dir: std::path::PathBuf,
}

impl MetricsLog {
    fn open(dir: &Path, append: bool) -> Result<Self> {
        let open = |name: &str, header: &str| -> Result<std::fs::File> {
            let path = dir.join(name);
            let exists = path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if !append || !exists {
                writeln!(f, "{header}").map_err(|e| Error::io(&path, e))?;
            }
            Ok(f)
        };
        Ok(MetricsLog {
            metrics: open("metrics.csv", METRICS_HEADER)?,
            eval: open("eval.csv", "update,env_steps,success,progress,spl,ppl")?,
            dir: dir.to_path_buf(),
        })
    }

    fn metrics(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.csv_line()).map_err(|e| Error::io(self.dir.join("metrics.csv"), e))
    }

    fn eval(&mut self, update: u64, steps: u64, m: &MetricsRecord) -> Result<()> {
        writeln!(self.eval, "{update},{steps},{},{},{},{}", m.success, m.progress, m.spl, m.ppl)
            .map_err(|e| Error::io(self.dir.join("eval.csv"), e))
    }
}

#[cfg(test)]
mod tests;
