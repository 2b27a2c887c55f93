use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_episode, generate_scene, EnvConfig, EpisodeSpec, Goal, Occupancy, Pose, SceneGrid};
use crate::error::{Error, Result};

/// Run-length encoding of occupancy codes as `<count><letter>` runs.
pub fn encode_rle(cells: &[Occupancy]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        while j < cells.len() && cells[j] == cells[i] {
            j += 1;
        }
        out.push_str(&(j - i).to_string());
        out.push(cells[i].letter());
        i = j;
    }
    out
}

pub fn decode_rle(s: &str, expected: usize) -> Result<Vec<Occupancy>> {
    let mut out = Vec::with_capacity(expected);
    let mut count = String::new();
    for ch in s.chars() {
        if ch.is_ascii_digit() {
            count.push(ch);
            continue;
        }
        let occ = Occupancy::from_letter(ch).ok_or_else(|| Error::Data(format!("bad occupancy code `{ch}`")))?;
        let n: usize = count.parse().map_err(|_| Error::Data(format!("run without a count before `{ch}`")))?;
        if n == 0 || out.len() + n > expected {
            return Err(Error::Data(format!("run of {n} `{ch}` overflows {expected} cells")));
        }
        out.extend(std::iter::repeat_n(occ, n));
        count.clear();
    }
    if !count.is_empty() || out.len() != expected {
        return Err(Error::Data(format!("occupancy decodes to {} cells, expected {expected}", out.len())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub occupancy: String,
    pub objects: Vec<(usize, u8)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub x: f64,
    pub y: f64,
    pub theta: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub scene: String,
    pub start: PoseRecord,
    pub goals: Vec<(usize, u8)>,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub split: String,
}

/// Serialized scenes and episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<DatasetMeta>,
    pub scenes: Vec<SceneRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn split_code(split: &str) -> u64 {
    match split {
        "train" => 0,
        "val" => 1,
        "test" => 2,
        other => other.bytes().fold(3u64, |h, b| splitmix64(h ^ b as u64)),
    }
}

impl SceneRecord {
    pub fn from_grid(g: &SceneGrid) -> Self {
        SceneRecord {
            id: g.id.clone(),
            width: g.width,
            height: g.height,
            cell_size: g.cell_size,
            occupancy: encode_rle(&g.occupancy),
            objects: g.objects.iter().enumerate().filter_map(|(i, o)| o.map(|c| (i, c))).collect(),
        }
    }

    pub fn to_grid(&self) -> Result<SceneGrid> {
        let n = self.width * self.height;
        if n == 0 || !(self.cell_size > 0.0) {
            return Err(Error::Data(format!("scene `{}` has empty extent or bad cell size", self.id)));
        }
        let mut g = SceneGrid::open(self.width, self.height, self.cell_size);
        g.id = self.id.clone();
        g.occupancy = decode_rle(&self.occupancy, n)?;
        g.with_objects(&self.objects).map_err(|_| Error::Data(format!("scene `{}` has an object off the free region", self.id)))
    }
}

impl EpisodeRecord {
    pub fn from_spec(s: &EpisodeSpec) -> Self {
        EpisodeRecord {
            scene: s.scene.clone(),
            start: PoseRecord { x: s.start.x, y: s.start.y, theta: s.start.theta },
            goals: s.objects(),
            budget: s.budget,
        }
    }

    pub fn to_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            scene: self.scene.clone(),
            start: Pose::new(self.start.x, self.start.y, self.start.theta),
            goals: self.goals.iter().map(|&(cell, category)| Goal { cell, category }).collect(),
            budget: self.budget,
        }
    }
}

/// Scenes and episodes decoded and cross-checked, ready for simulation.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub scenes: Vec<SceneGrid>,
    /// `(scene index, episode)`.
    pub episodes: Vec<(usize, EpisodeSpec)>,
}

impl Dataset {
    /// Scenes and episodes for one split; `scenes × per_scene` episodes in total.
    pub fn generate(cfg: &EnvConfig, seed: u64, split: &str, scenes: usize, per_scene: usize) -> Result<Self> {
        Self::generate_total(cfg, seed, split, scenes, scenes * per_scene)
    }

    /// Like [`Dataset::generate`] with `episodes` spread over the scenes as
    /// evenly as possible, earlier scenes taking the remainder.
    pub fn generate_total(cfg: &EnvConfig, seed: u64, split: &str, scenes: usize, episodes: usize) -> Result<Self> {
        cfg.validate()?;
        if scenes == 0 && episodes > 0 {
            return Err(Error::Parameter("episodes need at least one scene".into()));
        }
        let mut out = Dataset {
            meta: Some(DatasetMeta { seed, split: split.to_string() }),
            scenes: Vec::with_capacity(scenes),
            episodes: Vec::with_capacity(episodes),
        };
        let code = split_code(split);
        for i in 0..scenes {
            let scene_seed = splitmix64(seed ^ splitmix64((code << 32) | i as u64));
            let mut g = generate_scene(scene_seed, cfg.width, cfg.height, cfg.style, cfg.cell_size)?;
            g.id = format!("{split}_{i}");
            let count = episodes / scenes + usize::from(i < episodes % scenes);
            for j in 0..count {
                let ep_seed = splitmix64(scene_seed ^ splitmix64(j as u64 + 1));
                let ep = generate_episode(&g, ep_seed, cfg.goals, cfg.categories, cfg.min_sep, cfg.budget)
                    .map_err(|e| match e {
                        Error::Infeasible(msg) => {
                            Error::Infeasible(format!("episode {} (scene {i}, #{j}): {msg}", out.episodes.len()))
                        }
                        other => other,
                    })?;
                out.episodes.push(EpisodeRecord::from_spec(&ep));
            }
            out.scenes.push(SceneRecord::from_grid(&g));
        }
        Ok(out)
    }

    /// Wraps an already built scene and its episodes.
    pub fn from_parts(scenes: &[SceneGrid], episodes: &[EpisodeSpec]) -> Self {
        Dataset {
            meta: None,
            scenes: scenes.iter().map(SceneRecord::from_grid).collect(),
            episodes: episodes.iter().map(EpisodeRecord::from_spec).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed dataset: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn materialize(&self) -> Result<LoadedDataset> {
        let scenes = self.scenes.iter().map(SceneRecord::to_grid).collect::<Result<Vec<_>>>()?;
        let index: HashMap<&str, usize> = scenes.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        if index.len() != scenes.len() {
            return Err(Error::Data("duplicate scene ids".into()));
        }
        let mut episodes = Vec::with_capacity(self.episodes.len());
        for (k, rec) in self.episodes.iter().enumerate() {
            let &si = index
                .get(rec.scene.as_str())
                .ok_or_else(|| Error::Data(format!("episode {k} names unknown scene `{}`", rec.scene)))?;
            let spec = rec.to_spec();
            let g = &scenes[si];
            if g.free_cell_of(spec.start.x, spec.start.y).is_none() || spec.start.theta % super::TURN_DEG != 0 {
                return Err(Error::Data(format!("episode {k} has an invalid start pose")));
            }
            if spec.goals.is_empty() || spec.goals.iter().any(|goal| !g.is_free(goal.cell)) {
                return Err(Error::Data(format!("episode {k} has a goal off the free region")));
            }
            if spec.budget == 0 {
                return Err(Error::Data(format!("episode {k} has a zero budget")));
            }
            episodes.push((si, spec));
        }
        if episodes.is_empty() {
            return Err(Error::Data("dataset has no episodes".into()));
        }
        Ok(LoadedDataset { scenes, episodes })
    }
}
