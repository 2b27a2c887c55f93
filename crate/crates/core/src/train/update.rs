use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PpoConfig, RolloutBuffer};
use crate::agent::{AgentModel, Injection};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, clip_grad_norm, AdamConfig, Graph, ParamStore, Tensor, Var};

/// Averages over the minibatches of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

/// Whole worker sequences over `t0..t1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Minibatch {
    pub workers: Vec<usize>,
    pub t0: usize,
    pub t1: usize,
}

impl Minibatch {
    /// Buffer rows in the order the loss sees them (time-major).
    pub fn rows(&self, workers: usize) -> Vec<usize> {
        (self.t0..self.t1).flat_map(|t| self.workers.iter().map(move |&w| t * workers + w)).collect()
    }
}

/// Splits the buffer into `cfg.minibatches` recurrent minibatches, shuffled.
/// Worker groups are used when the worker count allows it, time chunks otherwise.
pub fn minibatches<R: Rng + ?Sized>(buf: &RolloutBuffer, cfg: &PpoConfig, rng: &mut R) -> Vec<Minibatch> {
    let m = cfg.minibatches.max(1);
    let (w, t) = (buf.workers, buf.length);
    if w % m == 0 {
        let mut order: Vec<usize> = (0..w).collect();
        order.shuffle(rng);
        order.chunks(w / m).map(|c| Minibatch { workers: c.to_vec(), t0: 0, t1: t }).collect()
    } else {
        let len = t / m;
        let mut out: Vec<Minibatch> =
            (0..m).map(|i| Minibatch { workers: (0..w).collect(), t0: i * len, t1: (i + 1) * len }).collect();
        out.shuffle(rng);
        out
    }
}

/// Replays the minibatch's sequences from their stored initial states.
/// Returns logits `[N, 4]` and values `[N, 1]` in [`Minibatch::rows`] order.
pub fn sequence_outputs<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    model: &AgentModel,
    buf: &RolloutBuffer,
    mb: &Minibatch,
) -> Result<(Var, Var)> {
    let (w, hd) = (buf.workers, model.hidden());
    let n = mb.workers.len();
    let mut h0 = Vec::with_capacity(n * hd);
    for &wk in &mb.workers {
        h0.extend_from_slice(&buf.hidden[mb.t0][wk * hd..(wk + 1) * hd]);
    }
    let mut h = g.input(&Tensor::new(&[n, hd], h0)?);
    let (mut logits, mut values) = (Vec::new(), Vec::new());
    for t in mb.t0..mb.t1 {
        let obs = buf.obs[t].select(&mb.workers);
        let injections = step_injections(buf, t, &mb.workers);
        let enc = model.encode(g, store, &obs, &injections)?;
        let out = model.policy_forward(g, store, enc.gru_input, h)?;
        logits.push(out.logits);
        values.push(out.value);
        let keep: Vec<f64> = mb.workers.iter().map(|&wk| if buf.dones[t * w + wk] { 0.0 } else { 1.0 }).collect();
        h = g.scale_rows(out.hidden, keep)?;
    }
    Ok((g.concat(&logits, 0)?, g.concat(&values, 0)?))
}

fn step_injections(buf: &RolloutBuffer, t: usize, workers: &[usize]) -> Vec<Injection> {
    let Some(slots) = buf.payloads.get(t) else { return Vec::new() };
    slots
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(slot, p)| {
            let width = p.len() / buf.workers;
            let payload = workers.iter().flat_map(|&wk| p[wk * width..(wk + 1) * width].iter().copied()).collect();
            Injection { slot, payload, mask: vec![true; workers.len()] }
        })
        .collect()
}

/// Clipped surrogate + value_coef · value MSE − entropy_coef · entropy.
pub fn minibatch_loss<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    model: &AgentModel,
    buf: &RolloutBuffer,
    mb: &Minibatch,
    cfg: &PpoConfig,
) -> Result<(Var, LossReport)> {
    let rows = mb.rows(buf.workers);
    let n = rows.len();
    let (logits, values) = sequence_outputs(g, store, model, buf, mb)?;
    let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<f64>>();
    let actions: Vec<usize> = rows.iter().map(|&r| buf.actions[r]).collect();
    let (old_logp, adv, ret) = (pick(&buf.log_probs), pick(&buf.advantages), pick(&buf.returns));

    let logp_all = g.log_softmax(logits)?;
    let logp = g.pick(logp_all, &actions)?;
    let old = g.constant(&[n], old_logp)?;
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let clip_frac = g.value(ratio).iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count() as f64 / n as f64;
    let surr1 = g.mul_const(ratio, adv.clone())?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surr2 = g.mul_const(clipped, adv)?;
    let surr = g.minimum(surr1, surr2)?;
    let surr = g.mean(surr);
    let policy = g.scale(surr, -1.0);

    let v = g.reshape(values, &[n])?;
    let target = g.constant(&[n], ret)?;
    let err = g.sub(v, target)?;
    let sq = g.square(err);
    let value = g.mean(sq);

    let p = g.exp(logp_all);
    let plogp = g.mul(p, logp_all)?;
    let total_plogp = g.sum(plogp);
    let entropy = g.scale(total_plogp, -1.0 / n as f64);

    let vterm = g.scale(value, cfg.value_coef);
    let eterm = g.scale(entropy, -cfg.entropy_coef);
    let loss = g.add(policy, vterm)?;
    let loss = g.add(loss, eterm)?;
    let report = LossReport {
        total: g.scalar(loss),
        policy: g.scalar(policy),
        value: g.scalar(value),
        entropy: g.scalar(entropy),
        clip_frac,
    };
    Ok((loss, report))
}

/// `epochs_per_update × minibatches` Adam steps on a finalised buffer. A
/// non-finite loss or gradient restores the store (values and optimizer
/// state) and fails.
pub fn ppo_update<R: Rng + ?Sized>(
    store: &mut ParamStore,
    model: &AgentModel,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossReport> {
    if !buf.finalized {
        return Err(Error::Contract("advantages must be computed before an update".into()));
    }
    let backup = store.clone();
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut sum = LossReport::default();
    let mut count = 0.0;
    for epoch in 0..cfg.epochs_per_update {
        for (i, mb) in minibatches(buf, cfg, rng).iter().enumerate() {
            let (grads, rep) = {
                let mut g = Graph::new();
                let (loss, rep) = minibatch_loss(&mut g, store, model, buf, mb, cfg)?;
                if !rep.total.is_finite() {
                    *store = backup;
                    return Err(Error::Numeric {
                        op: "ppo_update",
                        detail: format!("loss is {} at epoch {epoch}, minibatch {i} ({rep:?})", rep.total),
                    });
                }
                (g.backward(loss)?, rep)
            };
            store.accumulate(&grads);
            let norm = clip_grad_norm(store, cfg.max_grad_norm);
            if !norm.is_finite() {
                *store = backup;
                return Err(Error::Numeric {
                    op: "ppo_update",
                    detail: format!("gradient norm is {norm} at epoch {epoch}, minibatch {i}"),
                });
            }
            adam_step(store, &adam);
            sum.total += rep.total;
            sum.policy += rep.policy;
            sum.value += rep.value;
            sum.entropy += rep.entropy;
            sum.clip_frac += rep.clip_frac;
            count += 1.0;
        }
    }
    Ok(LossReport {
        total: sum.total / count,
        policy: sum.policy / count,
        value: sum.value / count,
        entropy: sum.entropy / count,
        clip_frac: sum.clip_frac / count,
    })
}
