use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PPO hyper-parameters and run length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub num_workers: usize,
    pub minibatches: usize,
    pub epochs_per_update: usize,
    pub rollout_length: usize,
    pub total_steps: u64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Evaluate every this many updates (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many updates (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            num_workers: 16,
            minibatches: 4,
            epochs_per_update: 2,
            rollout_length: 128,
            total_steps: 2_000_000,
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 2.5e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            seed: 0,
            eval_every: 0,
            eval_episodes: 100,
            checkpoint_every: 10,
        }
    }
}

impl PpoConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("num_workers", self.num_workers),
            ("minibatches", self.minibatches),
            ("epochs_per_update", self.epochs_per_update),
            ("rollout_length", self.rollout_length),
        ] {
            if v == 0 {
                out.push(format!("ppo.{name} must be positive"));
            }
        }
        if self.minibatches > 0
            && self.num_workers % self.minibatches != 0
            && self.rollout_length % self.minibatches != 0
        {
            out.push(format!(
                "ppo.minibatches ({}) must divide num_workers ({}) or rollout_length ({})",
                self.minibatches, self.num_workers, self.rollout_length
            ));
        }
        if self.total_steps == 0 {
            out.push("ppo.total_steps must be positive".into());
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            out.push("ppo.clip_eps must be positive".into());
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("ppo.{name} must lie in [0, 1]"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            out.push("ppo.lr must be positive".into());
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("ppo.{name} must be finite and non-negative"));
            }
        }
        if !(self.max_grad_norm > 0.0) {
            out.push("ppo.max_grad_norm must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.num_workers * self.rollout_length) as u64
    }

    /// Updates needed to reach `total_steps`.
    pub fn num_updates(&self) -> u64 {
        self.total_steps.div_ceil(self.steps_per_update())
    }
}
