//! Gridworld scenes, multi-object navigation episodes, the two egocentric
//! views, the reward and the navigation metrics.

mod dataset;
mod episode;
mod geodesic;
mod metrics;
mod scene;
mod sim;
mod view;

pub use dataset::{decode_rle, encode_rle, Dataset, DatasetMeta, EpisodeRecord, LoadedDataset, PoseRecord, SceneRecord};
pub use episode::{generate_episode, EpisodeSpec, Goal};
pub use geodesic::{geodesic_distance, DistanceField, Endpoint};
pub(crate) use geodesic::{can_step, MOVES};
pub use metrics::{compute_metrics, MetricsRecord, Trajectory};
pub use scene::{generate_scene, Occupancy, SceneGrid, SceneStyle};
pub use sim::{Action, NavObservation, NavSim, StepInfo, StepResult};
pub use view::{nav_view, oracle_view, ray_cells, EgoGrid};

use serde::{Deserialize, Serialize};

/// Heading increment in degrees; all headings are multiples of it.
pub const TURN_DEG: u32 = 30;
/// Number of distinct headings.
pub const HEADINGS: usize = 12;

// sin and cos of k·30°, written out so that 0.5 and 0 are exact.
const S3: f64 = 0.866_025_403_784_438_6;
const SIN: [f64; HEADINGS] = [0.0, 0.5, S3, 1.0, S3, 0.5, 0.0, -0.5, -S3, -1.0, -S3, -0.5];
const COS: [f64; HEADINGS] = [1.0, S3, 0.5, 0.0, -0.5, -S3, -1.0, -S3, -0.5, 0.0, 0.5, S3];

/// Navigator pose. `theta` is in degrees, counter-clockwise from +y (north).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: u32,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: u32) -> Self {
        Pose { x, y, theta: theta % 360 }
    }

    fn heading_index(&self) -> usize {
        (self.theta / TURN_DEG) as usize % HEADINGS
    }

    /// Unit vector the navigator faces.
    pub fn forward(&self) -> (f64, f64) {
        let k = self.heading_index();
        (-SIN[k], COS[k])
    }

    /// Unit vector to the navigator's right.
    pub fn right(&self) -> (f64, f64) {
        let k = self.heading_index();
        (COS[k], SIN[k])
    }

    pub fn turned(&self, delta: i32) -> Pose {
        let t = (self.theta as i32 + delta).rem_euclid(360) as u32;
        Pose { theta: t, ..*self }
    }

    /// World vector expressed in the egocentric frame (right, forward).
    pub fn to_ego(&self, dx: f64, dy: f64) -> (f64, f64) {
        let (rx, ry) = self.right();
        let (fx, fy) = self.forward();
        (dx * rx + dy * ry, dx * fx + dy * fy)
    }
}

/// Scene layout used when generating datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub width: usize,
    pub height: usize,
    pub style: SceneStyle,
    pub cell_size: f64,
    /// Number of goal categories.
    pub categories: usize,
    /// Goals per episode.
    pub goals: usize,
    /// Minimum pairwise geodesic separation of start and goals, world units.
    pub min_sep: f64,
    pub budget: usize,
    pub found_threshold: f64,
    pub forward_step: f64,
    pub reward_goal: f64,
    pub time_penalty: f64,
    /// Navigator view size (odd).
    pub view_size: usize,
    pub fov_deg: f64,
    pub view_range: f64,
    /// Oracle crop size (odd).
    pub crop: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            width: 32,
            height: 32,
            style: SceneStyle::Rooms,
            cell_size: 0.8,
            categories: 8,
            goals: 1,
            min_sep: 3.2,
            budget: 500,
            found_threshold: 1.5,
            forward_step: 0.25,
            reward_goal: 3.0,
            time_penalty: -0.01,
            view_size: 9,
            fov_deg: 90.0,
            view_range: 4.0,
            crop: 15,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if self.view_size % 2 == 0 || self.crop % 2 == 0 {
            return Err(Error::Config("view_size and crop must be odd".into()));
        }
        if self.goals == 0 || self.goals > self.categories {
            return Err(Error::Config(format!(
                "goals ({}) must be in 1..=categories ({})",
                self.goals, self.categories
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err(Error::Config("fov_deg must lie in (0, 360]".into()));
        }
        if self.cell_size <= 0.0 || self.forward_step <= 0.0 || self.budget == 0 {
            return Err(Error::Config("cell_size, forward_step and budget must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the navigator's one-hot view.
    pub fn view_channels(&self) -> usize {
        3 + self.categories + 1
    }
}

#[cfg(test)]
mod tests;
