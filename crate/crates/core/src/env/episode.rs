use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DistanceField, Pose, SceneGrid, HEADINGS, TURN_DEG};
use crate::error::{Error, Result};

/// A goal: free cell index and category.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Goal {
    pub cell: usize,
    pub category: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub scene: String,
    pub start: Pose,
    pub goals: Vec<Goal>,
    pub budget: usize,
}

impl EpisodeSpec {
    pub fn objects(&self) -> Vec<(usize, u8)> {
        self.goals.iter().map(|g| (g.cell, g.category)).collect()
    }
}

const CELL_TRIES: usize = 400;
const RESTARTS: usize = 50;

/// Rejection-samples a start cell and `m` goal cells whose pairwise geodesic
/// separations are all at least `min_sep`, with distinct categories from `0..categories`.
pub fn generate_episode(
    scene: &SceneGrid,
    seed: u64,
    m: usize,
    categories: usize,
    min_sep: f64,
    budget: usize,
) -> Result<EpisodeSpec> {
    if m == 0 || m > categories {
        return Err(Error::Parameter(format!("cannot draw {m} distinct categories from {categories}")));
    }
    let free = scene.free_cells();
    if free.len() < m + 1 {
        return Err(Error::Infeasible(format!("scene has {} free cells, need {}", free.len(), m + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESTARTS {
        let mut chosen: Vec<usize> = Vec::with_capacity(m + 1);
        let mut fields: Vec<DistanceField> = Vec::with_capacity(m + 1);
        'pick: while chosen.len() < m + 1 {
            for _ in 0..CELL_TRIES {
                let cell = free[rng.random_range(0..free.len())];
                if fields.iter().all(|f| f.cell(cell) >= min_sep) {
                    fields.push(DistanceField::new(scene, cell)?);
                    chosen.push(cell);
                    continue 'pick;
                }
            }
            break;
        }
        if chosen.len() == m + 1 {
            let cats = sample(&mut rng, categories, m);
            let heading = rng.random_range(0..HEADINGS as u32) * TURN_DEG;
            let (x, y) = scene.center(chosen[0]);
            let goals = chosen[1..]
                .iter()
                .zip(cats.iter())
                .map(|(&cell, c)| Goal { cell, category: c as u8 })
                .collect();
            return Ok(EpisodeSpec { scene: scene.id.clone(), start: Pose::new(x, y, heading), goals, budget });
        }
    }
    Err(Error::Infeasible(format!(
        "no placement of {} cells with separation {min_sep} in scene `{}`",
        m + 1,
        scene.id
    )))
}
