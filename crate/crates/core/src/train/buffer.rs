use crate::agent::Observations;
use crate::error::{Error, Result};

/// Fixed-size store for one rollout. Per-step entries are indexed `t * workers + w`.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub workers: usize,
    pub length: usize,
    /// One batch per step, row `w` belongs to worker `w`.
    pub obs: Vec<Observations>,
    /// Recurrent state fed into step `t`, `workers × hidden`.
    pub hidden: Vec<Vec<f64>>,
    /// Constant message payloads of random variants, per step and slot, `workers × width`.
    pub payloads: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// The episode ended with this step.
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub finalized: bool,
}

impl RolloutBuffer {
    pub fn new(workers: usize, length: usize) -> Self {
        RolloutBuffer { workers, length, ..Default::default() }
    }

    pub fn capacity(&self) -> usize {
        self.workers * self.length
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity() && self.obs.len() == self.length && self.hidden.len() == self.length
    }

    /// GAE per worker, then returns, then advantage normalisation.
    pub fn finalize(&mut self, gamma: f64, lambda: f64, bootstrap: &[f64]) -> Result<()> {
        if !self.is_full() {
            return Err(Error::Contract(format!("buffer holds {} of {} steps", self.len(), self.capacity())));
        }
        if bootstrap.len() != self.workers {
            return Err(Error::dim("finalize", format!("{} bootstrap values for {} workers", bootstrap.len(), self.workers)));
        }
        let (w, t) = (self.workers, self.length);
        self.advantages = vec![0.0; w * t];
        for worker in 0..w {
            let col = |v: &[f64]| (0..t).map(|s| v[s * w + worker]).collect::<Vec<_>>();
            let dones: Vec<bool> = (0..t).map(|s| self.dones[s * w + worker]).collect();
            let adv = compute_gae(&col(&self.rewards), &col(&self.values), &dones, bootstrap[worker], gamma, lambda)?;
            for (s, a) in adv.into_iter().enumerate() {
                self.advantages[s * w + worker] = a;
            }
        }
        self.returns = self.advantages.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        normalize_advantages(&mut self.advantages);
        self.finalized = true;
        Ok(())
    }
}

/// Generalised advantage estimates for one worker's sequence. A `done` at
/// step `t` cuts the recursion so nothing leaks across episodes; `bootstrap`
/// is the value of the state after the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::dim("compute_gae", "rewards, values and dones differ in length"));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// Shifts to mean 0 and scales by `1 / (std + 1e-8)`.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
}
