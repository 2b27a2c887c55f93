//! Oracle and navigator networks, the two communication channels, the
//! recurrent actor-critic and the six model variants.

mod comm;

pub use comm::{
    comm_receive, rand_message, scomm_decode, scomm_send, ucomm_send, Injection, MessageKind, MessageStats, Receiver,
    SLOTS,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EgoGrid, EnvConfig, NavObservation};
use crate::error::{Error, Result};
use crate::tensor::{gru_cell, Conv2d, Embedding, Graph, GruParams, Init, Linear, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NOCOM")]
    NoCom,
    #[serde(rename = "RAND_UCOMM")]
    RandUComm,
    #[serde(rename = "RAND_SCOMM")]
    RandSComm,
    #[serde(rename = "UCOMM")]
    UComm,
    #[serde(rename = "SCOMM")]
    SComm,
    #[serde(rename = "ORACLEMAP")]
    OracleMap,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::NoCom, Variant::RandUComm, Variant::RandSComm, Variant::UComm, Variant::SComm, Variant::OracleMap];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoCom => "NOCOM",
            Variant::RandUComm => "RAND_UCOMM",
            Variant::RandSComm => "RAND_SCOMM",
            Variant::UComm => "UCOMM",
            Variant::SComm => "SCOMM",
            Variant::OracleMap => "ORACLEMAP",
        }
    }

    /// Accepts `scomm`, `SCOMM`, `rand-ucomm`, `RAND_UCOMM` and so on.
    pub fn parse(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(&key))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    pub fn message_kind(self) -> Option<MessageKind> {
        match self {
            Variant::UComm => Some(MessageKind::UComm),
            Variant::SComm => Some(MessageKind::SComm),
            Variant::RandUComm => Some(MessageKind::RandUComm),
            Variant::RandSComm => Some(MessageKind::RandSComm),
            Variant::NoCom | Variant::OracleMap => None,
        }
    }

    pub fn has_oracle(self) -> bool {
        self != Variant::NoCom
    }

    pub fn is_random(self) -> bool {
        matches!(self, Variant::RandUComm | Variant::RandSComm)
    }

    pub fn structured(self) -> bool {
        matches!(self, Variant::SComm | Variant::RandSComm)
    }
}

/// Network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Width of the occupancy/object/goal/action embeddings.
    pub embed_dim: usize,
    pub oracle_channels: [usize; 2],
    pub nav_channels: [usize; 2],
    /// `|v_o|`; the navigator belief is `|v_o| + embed_dim`.
    pub nav_features: usize,
    pub oracle_belief: usize,
    pub hidden: usize,
    /// U-Comm message length L.
    pub message_len: usize,
    /// S-Comm vocabulary size K.
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(Variant::SComm)
    }
}

impl ModelConfig {
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            embed_dim: 16,
            oracle_channels: [16, 16],
            nav_channels: [16, 16],
            nav_features: 112,
            oracle_belief: 64,
            hidden: 128,
            message_len: 2,
            vocab: 3,
        }
    }

    pub fn paper(variant: Variant) -> Self {
        ModelConfig {
            nav_features: 496,
            oracle_belief: 256,
            hidden: 512,
            oracle_channels: [32, 32],
            nav_channels: [32, 32],
            ..Self::desk(variant)
        }
    }

    /// Small enough to train in minutes on one core.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            variant,
            embed_dim: 8,
            oracle_channels: [8, 8],
            nav_channels: [8, 8],
            nav_features: 24,
            oracle_belief: 32,
            hidden: 32,
            message_len: 2,
            vocab: 3,
        }
    }

    pub fn preset(name: &str, variant: Variant) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(variant)),
            "paper" => Ok(Self::paper(variant)),
            "tiny" => Ok(Self::tiny(variant)),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }

    pub fn nav_belief(&self) -> usize {
        self.nav_features + self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.embed_dim, self.nav_features, self.oracle_belief, self.hidden, self.message_len];
        if dims.contains(&0) || self.oracle_channels.contains(&0) || self.nav_channels.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.variant.structured() && self.vocab < 2 {
            return Err(Error::Config(format!("vocabulary must have at least 2 words, got {}", self.vocab)));
        }
        Ok(())
    }
}

fn conv_out(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

/// Batched per-step inputs for both agents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Observations {
    pub batch: usize,
    /// Oracle crop codes, `batch × G × G` each (empty when the variant has no oracle).
    pub oracle_occ: Vec<usize>,
    pub oracle_obj: Vec<usize>,
    /// Navigator view codes, `batch × V × V` each.
    pub nav_occ: Vec<u8>,
    pub nav_obj: Vec<u8>,
    pub goals: Vec<usize>,
    /// Previous action index, 4 for none.
    pub prev_actions: Vec<usize>,
}

impl Observations {
    pub fn push(&mut self, obs: &NavObservation, oracle: Option<&EgoGrid>) {
        self.batch += 1;
        if let Some(o) = oracle {
            self.oracle_occ.extend(o.occupancy.iter().map(|&c| c as usize));
            self.oracle_obj.extend(o.objects.iter().map(|&c| c as usize));
        }
        self.nav_occ.extend_from_slice(&obs.view.occupancy);
        self.nav_obj.extend_from_slice(&obs.view.objects);
        self.goals.push(obs.goal as usize);
        self.prev_actions.push(obs.prev_action.map_or(4, |a| a.index()));
    }

    pub fn extend(&mut self, other: &Observations) {
        self.batch += other.batch;
        self.oracle_occ.extend_from_slice(&other.oracle_occ);
        self.oracle_obj.extend_from_slice(&other.oracle_obj);
        self.nav_occ.extend_from_slice(&other.nav_occ);
        self.nav_obj.extend_from_slice(&other.nav_obj);
        self.goals.extend_from_slice(&other.goals);
        self.prev_actions.extend_from_slice(&other.prev_actions);
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Observations {
        let per = |v: usize| if self.batch == 0 { 0 } else { v / self.batch };
        let (go, gn) = (per(self.oracle_occ.len()), per(self.nav_occ.len()));
        let mut out = Observations { batch: idx.len(), ..Default::default() };
        for &i in idx {
            out.oracle_occ.extend_from_slice(&self.oracle_occ[i * go..(i + 1) * go]);
            out.oracle_obj.extend_from_slice(&self.oracle_obj[i * go..(i + 1) * go]);
            out.nav_occ.extend_from_slice(&self.nav_occ[i * gn..(i + 1) * gn]);
            out.nav_obj.extend_from_slice(&self.nav_obj[i * gn..(i + 1) * gn]);
            out.goals.push(self.goals[i]);
            out.prev_actions.push(self.prev_actions[i]);
        }
        out
    }

    /// Channel-major one-hot navigator views, `batch × (4+k) × V × V`.
    pub fn nav_one_hot(&self, categories: usize, view: usize) -> Result<Vec<f64>> {
        let hw = view * view;
        if self.nav_occ.len() != self.batch * hw {
            return Err(Error::Data(format!("expected {} view cells, got {}", self.batch * hw, self.nav_occ.len())));
        }
        let ch = 4 + categories;
        let mut out = vec![0.0; self.batch * ch * hw];
        for b in 0..self.batch {
            for i in 0..hw {
                let (o, j) = (self.nav_occ[b * hw + i] as usize, self.nav_obj[b * hw + i] as usize);
                if o > 2 || j > categories {
                    return Err(Error::Data(format!("view code ({o},{j}) out of range")));
                }
                out[(b * ch + o) * hw + i] = 1.0;
                out[(b * ch + 3 + j) * hw + i] = 1.0;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
struct Round {
    send_o: Option<Linear>,
    send_n: Option<Linear>,
    recv_n: Receiver,
    recv_o: Receiver,
    bank_n: Option<ParamId>,
    bank_o: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
struct OracleNet {
    occ: Embedding,
    obj: Embedding,
    conv1: Conv2d,
    conv2: Conv2d,
    fc: Linear,
}

/// Everything the agents compute before the recurrent policy.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// b̂_N.
    pub nav_initial: Var,
    /// b̂_O.
    pub oracle_initial: Option<Var>,
    /// b_N (equal to b̂_N without communication).
    pub nav_final: Var,
    /// b_O, computed and discarded.
    pub oracle_final: Option<Var>,
    pub action_embed: Var,
    /// Messages in slot order, empty without communication.
    pub messages: Vec<Var>,
    pub gru_input: Var,
}

/// Output of the recurrent actor-critic.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOut {
    pub logits: Var,
    pub value: Var,
    pub hidden: Var,
}

/// Parameter handles for one variant.
#[derive(Clone, Debug)]
pub struct AgentModel {
    pub cfg: ModelConfig,
    pub categories: usize,
    pub crop: usize,
    pub view: usize,
    nav_conv1: Conv2d,
    nav_conv2: Conv2d,
    nav_fc: Linear,
    goal_embed: Embedding,
    action_embed: Embedding,
    oracle: Option<OracleNet>,
    rounds: Vec<Round>,
    gru: GruParams,
    actor: Linear,
    critic: Linear,
}

const ROOT2: f64 = std::f64::consts::SQRT_2;

impl AgentModel {
    /// Registers every parameter of the variant in `store`. Navigator and
    /// policy parameters come first, so variants built from the same seed share them.
    pub fn build<R: Rng + ?Sized>(cfg: &ModelConfig, env: &EnvConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        env.validate()?;
        let (k, v, gsz) = (env.categories, env.view_size, env.crop);
        let e = cfg.embed_dim;
        let [nc1, nc2] = cfg.nav_channels;
        let nav_conv1 = Conv2d::register(store, "nav.conv1", 4 + k, nc1, 3, 1, 1, ROOT2, rng)?;
        let nav_conv2 = Conv2d::register(store, "nav.conv2", nc1, nc2, 3, 2, 1, ROOT2, rng)?;
        let nv = conv_out(conv_out(v, 1), 2);
        let nav_fc = Linear::register(store, "nav.fc", nc2 * nv * nv, cfg.nav_features, Init::Orthogonal(ROOT2), rng)?;
        let goal_embed = Embedding::register(store, "nav.goal_embed", k, e, rng)?;
        let action_embed = Embedding::register(store, "nav.action_embed", 5, e, rng)?;

        let nb = cfg.nav_belief();
        let ob = cfg.oracle_belief;
        let gru_in = nb + e + if cfg.variant == Variant::OracleMap { ob } else { 0 };
        let gru = GruParams::register(store, "gru", gru_in, cfg.hidden, 1.0, rng)?;
        let actor = Linear::register(store, "actor", cfg.hidden, 4, Init::Orthogonal(0.01), rng)?;
        let critic = Linear::register(store, "critic", cfg.hidden, 1, Init::Orthogonal(1.0), rng)?;

        let oracle = if cfg.variant.has_oracle() {
            let [oc1, oc2] = cfg.oracle_channels;
            let occ = Embedding::register(store, "oracle.occ_embed", 3, e, rng)?;
            let obj = Embedding::register(store, "oracle.obj_embed", k + 1, e, rng)?;
            let conv1 = Conv2d::register(store, "oracle.conv1", 2 * e, oc1, 3, 2, 1, ROOT2, rng)?;
            let conv2 = Conv2d::register(store, "oracle.conv2", oc1, oc2, 3, 1, 1, ROOT2, rng)?;
            let og = conv_out(conv_out(gsz, 2), 1);
            let fc = Linear::register(store, "oracle.fc", oc2 * og * og, ob, Init::Orthogonal(ROOT2), rng)?;
            Some(OracleNet { occ, obj, conv1, conv2, fc })
        } else {
            None
        };

        let mut rounds = Vec::new();
        if cfg.variant.message_kind().is_some() {
            let structured = cfg.variant.structured();
            let width = if structured { cfg.vocab } else { cfg.message_len };
            for r in 1..=2 {
                let p = format!("comm.r{r}");
                let (send_o, send_n) = if cfg.variant.is_random() {
                    (None, None)
                } else {
                    let so = Linear::register(store, &format!("{p}.send_o"), ob, width, Init::Orthogonal(1.0), rng)?;
                    let sn = Linear::register(store, &format!("{p}.send_n"), nb, width, Init::Orthogonal(1.0), rng)?;
                    (Some(so), Some(sn))
                };
                let (in_n, in_o) = if structured { (nb, ob) } else { (width, width) };
                let recv_n = Receiver::register(store, &format!("{p}.recv_n"), nb, in_n, rng)?;
                let recv_o = Receiver::register(store, &format!("{p}.recv_o"), ob, in_o, rng)?;
                let (bank_n, bank_o) = if structured {
                    let bn = Embedding::register(store, &format!("{p}.bank_n"), cfg.vocab, nb, rng)?;
                    let bo = Embedding::register(store, &format!("{p}.bank_o"), cfg.vocab, ob, rng)?;
                    (Some(bn.table), Some(bo.table))
                } else {
                    (None, None)
                };
                rounds.push(Round { send_o, send_n, recv_n, recv_o, bank_n, bank_o });
            }
        }

        Ok(AgentModel {
            cfg: cfg.clone(),
            categories: k,
            crop: gsz,
            view: v,
            nav_conv1,
            nav_conv2,
            nav_fc,
            goal_embed,
            action_embed,
            oracle,
            rounds,
            gru,
            actor,
            critic,
        })
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    /// Width of each message slot.
    pub fn message_width(&self) -> usize {
        if self.cfg.variant.structured() {
            self.cfg.vocab
        } else {
            self.cfg.message_len
        }
    }

    pub fn hidden(&self) -> usize {
        self.cfg.hidden
    }

    pub fn needs_oracle_view(&self) -> bool {
        self.oracle.is_some()
    }

    /// b̂_O from the oracle's egocentric map codes (`batch × G × G` each).
    pub fn oracle_encode<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        occ: &[usize],
        obj: &[usize],
        batch: usize,
    ) -> Result<Var> {
        let net = self.oracle.as_ref().ok_or_else(|| Error::Contract("variant has no oracle".into()))?;
        let gs = self.crop;
        if occ.len() != batch * gs * gs || obj.len() != occ.len() {
            return Err(Error::Data(format!("expected {} map cells per plane, got {}", batch * gs * gs, occ.len())));
        }
        if let Some(bad) = occ.iter().find(|&&c| c > 2).or_else(|| obj.iter().find(|&&c| c > self.categories)) {
            return Err(Error::Data(format!("unknown map cell code {bad}")));
        }
        let to = g.param(store, net.occ.table);
        let tb = g.param(store, net.obj.table);
        let eo = g.embed_grid(to, occ, batch, gs, gs)?;
        let eb = g.embed_grid(tb, obj, batch, gs, gs)?;
        let x = g.concat(&[eo, eb], 1)?;
        let x = net.conv1.forward(g, store, x)?;
        let x = g.relu(x);
        let x = net.conv2.forward(g, store, x)?;
        let x = g.relu(x);
        let flat: usize = g.shape(x)[1..].iter().product();
        let x = g.reshape(x, &[batch, flat])?;
        let x = net.fc.forward(g, store, x)?;
        Ok(g.relu(x))
    }

    /// b̂_N = [v_o, v_g] and v_a from one-hot views, goal categories and previous actions.
    pub fn navigator_encode<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        views: &[f64],
        goals: &[usize],
        prev_actions: &[usize],
    ) -> Result<(Var, Var)> {
        let batch = goals.len();
        let (ch, v) = (4 + self.categories, self.view);
        let hw = v * v;
        if views.len() != batch * ch * hw || prev_actions.len() != batch {
            return Err(Error::Data("navigator inputs disagree on batch size".into()));
        }
        for b in 0..batch {
            for i in 0..hw {
                let plane = |lo: usize, hi: usize| -> Result<()> {
                    let mut ones = 0;
                    for c in lo..hi {
                        match views[(b * ch + c) * hw + i] {
                            0.0 => {}
                            1.0 => ones += 1,
                            x => return Err(Error::Data(format!("one-hot entry {x} is neither 0 nor 1"))),
                        }
                    }
                    if ones == 1 {
                        Ok(())
                    } else {
                        Err(Error::Data(format!("cell {i} of view {b} has {ones} hot entries")))
                    }
                };
                plane(0, 3)?;
                plane(3, ch)?;
            }
        }
        if goals.iter().any(|&c| c >= self.categories) || prev_actions.iter().any(|&a| a > 4) {
            return Err(Error::Data("goal or previous action index out of range".into()));
        }
        let x = g.constant(&[batch, ch, v, v], views.to_vec())?;
        let x = self.nav_conv1.forward(g, store, x)?;
        let x = g.relu(x);
        let x = self.nav_conv2.forward(g, store, x)?;
        let x = g.relu(x);
        let flat: usize = g.shape(x)[1..].iter().product();
        let x = g.reshape(x, &[batch, flat])?;
        let x = self.nav_fc.forward(g, store, x)?;
        let v_o = g.relu(x);
        let tg = g.param(store, self.goal_embed.table);
        let v_g = g.embedding(tg, goals)?;
        let ta = g.param(store, self.action_embed.table);
        let v_a = g.embedding(ta, prev_actions)?;
        let belief = g.concat(&[v_o, v_g], 1)?;
        Ok((belief, v_a))
    }

    /// Two synchronous rounds. Returns (b_N, b_O, messages in slot order).
    /// Random variants take their payloads from `injections`; other variants
    /// blend injected rows over the sent messages.
    pub fn comm_rounds<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        oracle_belief: Var,
        nav_belief: Var,
        injections: &[Injection],
    ) -> Result<(Var, Var, Vec<Var>)> {
        if self.rounds.is_empty() {
            return Err(Error::Contract(format!("{} does not communicate", self.cfg.variant.name())));
        }
        let batch = g.shape(nav_belief)[0];
        let structured = self.cfg.variant.structured();
        let (mut bo, mut bn) = (oracle_belief, nav_belief);
        let mut messages = Vec::with_capacity(4);
        for (r, round) in self.rounds.iter().enumerate() {
            let mut sent = [None, None];
            for (d, (layer, from)) in [(round.send_o, bo), (round.send_n, bn)].into_iter().enumerate() {
                let slot = 2 * r + d;
                let inj = injections.iter().find(|i| i.slot == slot);
                let msg = match (layer, inj) {
                    (None, Some(inj)) => {
                        let t = comm::payload_tensor(inj, batch)?;
                        g.input(&t)
                    }
                    (None, None) => {
                        return Err(Error::Contract(format!("random variant needs a payload for {}", SLOTS[slot])));
                    }
                    (Some(layer), inj) => {
                        let m = if structured {
                            scomm_send(g, store, &layer, from)?
                        } else {
                            ucomm_send(g, store, &layer, from)?
                        };
                        match inj {
                            Some(inj) => g.blend_rows(m, &inj.payload, inj.mask.clone())?,
                            None => m,
                        }
                    }
                };
                sent[d] = Some(msg);
                messages.push(msg);
            }
            let (to_n, to_o) = (sent[0].unwrap(), sent[1].unwrap());
            let (in_n, in_o) = if structured {
                (scomm_decode(g, store, to_n, round.bank_n)?, scomm_decode(g, store, to_o, round.bank_o)?)
            } else {
                (to_n, to_o)
            };
            let new_n = comm_receive(g, store, &round.recv_n, bn, in_n)?;
            let new_o = comm_receive(g, store, &round.recv_o, bo, in_o)?;
            bn = new_n;
            bo = new_o;
        }
        Ok((bn, bo, messages))
    }

    /// Both encoders and the channel, producing the GRU input.
    pub fn encode<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        obs: &Observations,
        injections: &[Injection],
    ) -> Result<Encoded> {
        let views = obs.nav_one_hot(self.categories, self.view)?;
        let (nav_initial, action_embed) = self.navigator_encode(g, store, &views, &obs.goals, &obs.prev_actions)?;
        let oracle_initial = if self.oracle.is_some() {
            Some(self.oracle_encode(g, store, &obs.oracle_occ, &obs.oracle_obj, obs.batch)?)
        } else {
            None
        };
        let (nav_final, oracle_final, messages) = match (self.cfg.variant, oracle_initial) {
            (Variant::NoCom, _) | (Variant::OracleMap, _) => (nav_initial, oracle_initial, Vec::new()),
            (_, Some(bo)) => {
                let (bn, bo, msgs) = self.comm_rounds(g, store, bo, nav_initial, injections)?;
                (bn, Some(bo), msgs)
            }
            (_, None) => unreachable!("communicating variants always have an oracle"),
        };
        let gru_input = match (self.cfg.variant, oracle_initial) {
            (Variant::OracleMap, Some(bo)) => g.concat(&[nav_final, bo, action_embed], 1)?,
            _ => g.concat(&[nav_final, action_embed], 1)?,
        };
        Ok(Encoded { nav_initial, oracle_initial, nav_final, oracle_final, action_embed, messages, gru_input })
    }

    /// `s = GRU(x, h)`, then actor logits and critic value.
    pub fn policy_forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var, h: Var) -> Result<PolicyOut> {
        let s = gru_cell(g, store, x, h, &self.gru)?;
        let logits = self.actor.forward(g, store, s)?;
        let value = self.critic.forward(g, store, s)?;
        Ok(PolicyOut { logits, value, hidden: s })
    }

    /// Names of parameters that belong to the channel (send, receive, banks).
    pub fn comm_param_names(store: &ParamStore) -> Vec<String> {
        store.names().filter(|n| n.starts_with("comm.")).map(str::to_string).collect()
    }

    /// Zeros every channel parameter, turning the receive blocks into identities.
    pub fn zero_comm(store: &mut ParamStore) -> Result<()> {
        for name in Self::comm_param_names(store) {
            let id = store.id(&name)?;
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(())
    }

    pub fn zero_hidden(&self, batch: usize) -> Result<Tensor> {
        Tensor::zeros(&[batch, self.cfg.hidden])
    }
}

/// How actions are chosen from logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Sample,
    Argmax,
}

/// Picks an action from one row of logits. Returns the action and its log-probability.
pub fn act<R: Rng + ?Sized>(logits: &[f64], mode: ActMode, rng: &mut R) -> Result<(usize, f64)> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { op: "act", detail: "logits must be finite and non-empty".into() });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let a = match mode {
        ActMode::Argmax => {
            // first index holding the maximum
            logits.iter().position(|&v| v == max).unwrap()
        }
        ActMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = logits.len() - 1;
            for (i, v) in logits.iter().enumerate() {
                acc += (v - lse).exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    Ok((a, logits[a] - lse))
}
