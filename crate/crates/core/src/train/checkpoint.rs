use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PpoConfig, TrainSnapshot};
use crate::agent::{AgentModel, MessageStats, ModelConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const MAGIC: &[u8; 4] = b"CMON";
pub const FORMAT_VERSION: u32 = 1;

/// Where a parameter lives in the payload, in 32-bit words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// SHA-256 over the environment and model sections.
    pub config_digest: String,
    pub env_steps: u64,
    pub updates: u64,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub message_stats: Option<MessageStats>,
    /// Optimizer step count; the moments follow the values in the payload.
    pub adam_step: u64,
    /// RNG streams, worker episodes and metric window, for exact resumption.
    pub state: Option<TrainSnapshot>,
    pub manifest: Vec<ManifestEntry>,
}

/// `CMON`, version (u32 LE), header length (u32 LE), JSON header, then
/// little-endian f32 payload: all values, all first moments, all second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<f32>,
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
}

/// Digest of the sections that fix the network architecture.
pub fn config_digest(env: &EnvConfig, model: &ModelConfig) -> Result<String> {
    let text = serde_json::to_string(&(env, model))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Rounds values and Adam moments to f32 so that training resumed from a
/// checkpoint continues exactly as the uninterrupted run does.
pub fn quantize_store(store: &mut ParamStore) {
    let q = |v: &mut f64| *v = *v as f32 as f64;
    for i in 0..store.len() {
        let id = crate::tensor::ParamId(i);
        store.get_mut(id).data_mut().iter_mut().for_each(q);
        let (m, v) = store.moments_mut(id);
        m.iter_mut().for_each(q);
        v.iter_mut().for_each(q);
    }
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn from_store(
        store: &ParamStore,
        env: &EnvConfig,
        model: &ModelConfig,
        ppo: &PpoConfig,
        message_stats: Option<MessageStats>,
        env_steps: u64,
        updates: u64,
        state: Option<TrainSnapshot>,
    ) -> Result<Self> {
        let mut manifest = Vec::new();
        let (mut values, mut first, mut second) = (Vec::new(), Vec::new(), Vec::new());
        for (id, name, t) in store.iter() {
            manifest.push(ManifestEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: values.len() });
            values.extend(t.data().iter().map(|&v| v as f32));
            let (m, v) = store.moments(id);
            first.extend(m.iter().map(|&x| x as f32));
            second.extend(v.iter().map(|&x| x as f32));
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                config_digest: config_digest(env, model)?,
                env_steps,
                updates,
                env: env.clone(),
                model: model.clone(),
                ppo: ppo.clone(),
                message_stats,
                adam_step: store.step_count(),
                state,
                manifest,
            },
            values,
            first_moment: first,
            second_moment: second,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let words = self.values.len() * 3;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * words);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.values.iter().chain(&self.first_moment).chain(&self.second_moment) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Data("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("checkpoint format {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::Data("truncated checkpoint header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        let payload = &bytes[12 + hlen..];
        let n: usize = header.manifest.iter().map(|m| m.shape.iter().product::<usize>()).sum();
        if payload.len() != 12 * n {
            return Err(Error::Data(format!("checkpoint payload has {} bytes, manifest needs {}", payload.len(), 12 * n)));
        }
        let mut words = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let values: Vec<f32> = words.by_ref().take(n).collect();
        let first_moment: Vec<f32> = words.by_ref().take(n).collect();
        let second_moment: Vec<f32> = words.collect();
        Ok(Checkpoint { header, values, first_moment, second_moment })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses a checkpoint built for a different architecture unless `force`.
    pub fn check_config(&self, env: &EnvConfig, model: &ModelConfig, force: bool) -> Result<()> {
        let digest = config_digest(env, model)?;
        if digest != self.header.config_digest && !force {
            return Err(Error::Config(format!(
                "checkpoint was written for config {}, current config is {digest} (use --force to override)",
                &self.header.config_digest[..12]
            )));
        }
        Ok(())
    }

    /// Rebuilds the model the checkpoint was taken from, parameters restored.
    pub fn model(&self) -> Result<(AgentModel, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let model = AgentModel::build(&self.header.model, &self.header.env, &mut store, &mut rng)?;
        self.restore_into(&mut store)?;
        Ok((model, store))
    }

    /// Copies values and optimizer state into a store with a matching layout.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.header.manifest.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameters, model has {}",
                self.header.manifest.len(),
                store.len()
            )));
        }
        for (i, entry) in self.header.manifest.iter().enumerate() {
            let id = store.id(&entry.name).map_err(|_| Error::Data(format!("model has no parameter `{}`", entry.name)))?;
            if id != crate::tensor::ParamId(i) || store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Data(format!("parameter `{}` does not match the model layout", entry.name)));
            }
            let n = store.get(id).len();
            let range = entry.offset..entry.offset + n;
            let widen = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
            store.get_mut(id).data_mut().copy_from_slice(&widen(&self.values[range.clone()]));
            let (m, v) = store.moments_mut(id);
            *m = widen(&self.first_moment[range.clone()]);
            *v = widen(&self.second_moment[range]);
        }
        store.set_step_count(self.header.adam_step);
        Ok(())
    }
}
