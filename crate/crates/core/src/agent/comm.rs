use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, Linear, ParamId, ParamStore, Tensor, Var};

/// Kind of payload carried by a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    UComm,
    SComm,
    RandUComm,
    RandSComm,
}

/// Message slots in emission order.
pub const SLOTS: [&str; 4] = ["m1_o2n", "m1_n2o", "m2_o2n", "m2_n2o"];

/// Receive-side refinement: `b + FC2(relu(FC1([b, msg])))`.
#[derive(Clone, Copy, Debug)]
pub struct Receiver {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Receiver {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        belief: usize,
        message: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fc1 = Linear::register(store, &format!("{name}.fc1"), belief + message, belief, Init::Orthogonal(2f64.sqrt()), rng)?;
        let fc2 = Linear::register(store, &format!("{name}.fc2"), belief, belief, Init::Orthogonal(1.0), rng)?;
        Ok(Receiver { fc1, fc2 })
    }
}

/// Real-valued message: a linear map of the belief.
pub fn ucomm_send<'p>(g: &mut Graph<'p>, store: &'p ParamStore, layer: &Linear, belief: Var) -> Result<Var> {
    layer.forward(g, store, belief)
}

/// Probability vector over the vocabulary: softmax of a linear map of the belief.
pub fn scomm_send<'p>(g: &mut Graph<'p>, store: &'p ParamStore, layer: &Linear, belief: Var) -> Result<Var> {
    let logits = layer.forward(g, store, belief)?;
    g.softmax(logits)
}

/// `Σ p_l w_l` with the words stored as rows of `bank` (`[K×belief]`).
pub fn scomm_decode<'p>(g: &mut Graph<'p>, store: &'p ParamStore, p: Var, bank: Option<ParamId>) -> Result<Var> {
    let bank = bank.ok_or_else(|| Error::Config("no word bank for this receiver".into()))?;
    let k = store.get(bank).shape()[0];
    if g.shape(p)[1] != k {
        return Err(Error::dim("scomm_decode", format!("message has {} words, bank has {k}", g.shape(p)[1])));
    }
    let w = g.param(store, bank);
    g.matmul(p, w)
}

pub fn comm_receive<'p>(g: &mut Graph<'p>, store: &'p ParamStore, rx: &Receiver, belief: Var, msg: Var) -> Result<Var> {
    let expected = rx.fc1.inputs(store);
    let got = g.shape(belief)[1] + g.shape(msg)[1];
    if got != expected {
        return Err(Error::dim("comm_receive", format!("belief+message width {got}, receiver expects {expected}")));
    }
    let joint = g.concat(&[belief, msg], 1)?;
    let h = rx.fc1.forward(g, store, joint)?;
    let h = g.relu(h);
    let delta = rx.fc2.forward(g, store, h)?;
    g.add(belief, delta)
}

/// Per-coordinate Gaussian statistics for the four random U-Comm channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl MessageStats {
    pub fn standard(len: usize) -> Self {
        MessageStats { mean: vec![vec![0.0; len]; 4], var: vec![vec![1.0; len]; 4] }
    }

    /// Mean and (population) variance per slot and coordinate of logged messages.
    /// `rows[slot]` holds one message per entry.
    pub fn from_messages(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        if rows.len() != 4 || rows.iter().any(|r| r.is_empty()) {
            return Err(Error::Data("message statistics need samples for all four slots".into()));
        }
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for slot in rows {
            let len = slot[0].len();
            let n = slot.len() as f64;
            let mu: Vec<f64> = (0..len).map(|j| slot.iter().map(|m| m[j]).sum::<f64>() / n).collect();
            let v: Vec<f64> = (0..len).map(|j| slot.iter().map(|m| (m[j] - mu[j]).powi(2)).sum::<f64>() / n).collect();
            mean.push(mu);
            var.push(v);
        }
        Ok(MessageStats { mean, var })
    }
}

/// Random payload for `batch` rows of a channel of width `len`.
/// U-Comm draws independent Gaussians from `stats` for `slot`; S-Comm draws
/// uniformly from the simplex via normalised exponentials.
pub fn rand_message<R: Rng + ?Sized>(
    kind: MessageKind,
    rng: &mut R,
    stats: Option<&MessageStats>,
    slot: usize,
    len: usize,
    batch: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch * len);
    match kind {
        MessageKind::RandUComm => {
            let s = stats.ok_or_else(|| Error::Config("random U-Comm needs message statistics".into()))?;
            let (mu, var) = (&s.mean[slot], &s.var[slot]);
            if mu.len() != len || var.len() != len {
                return Err(Error::Config(format!("message statistics have width {}, channel has {len}", mu.len())));
            }
            for _ in 0..batch {
                for j in 0..len {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(mu[j] + var[j].max(0.0).sqrt() * z);
                }
            }
        }
        MessageKind::RandSComm => {
            for _ in 0..batch {
                let e: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = e.iter().sum();
                out.extend(e.iter().map(|v| v / total));
            }
        }
        other => return Err(Error::Contract(format!("{other:?} messages are not random"))),
    }
    Ok(out)
}

/// Overwrites rows of one message slot.
#[derive(Clone, Debug)]
pub struct Injection {
    pub slot: usize,
    /// `batch × width` replacement values.
    pub payload: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Builds a constant payload tensor from an injection (random variants).
pub(crate) fn payload_tensor(inj: &Injection, batch: usize) -> Result<Tensor> {
    let width = inj.payload.len() / batch.max(1);
    Tensor::new(&[batch, width], inj.payload.clone())
}
