use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::view::{nav_view, oracle_view, EgoGrid};
use super::{
    compute_metrics, DistanceField, EnvConfig, EpisodeSpec, Goal, MetricsRecord, Pose, SceneGrid, Trajectory,
    TURN_DEG,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    Found = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Found];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Index { op: "action", detail: format!("action index {i} out of 0..4") })
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "FORWARD",
            Action::TurnLeft => "TURN_LEFT",
            Action::TurnRight => "TURN_RIGHT",
            Action::Found => "FOUND",
        }
    }
}

/// What the navigator perceives at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct NavObservation {
    pub view: EgoGrid,
    /// Category of the current goal.
    pub goal: u8,
    pub prev_action: Option<Action>,
}

impl NavObservation {
    /// Whether the current goal appears in the view.
    pub fn goal_visible(&self) -> bool {
        self.view.has_object(self.goal + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub subgoal_found: bool,
    pub collision: bool,
    pub goals_found: usize,
    /// Geodesic distance from the new pose to the current goal (0 once all are found).
    pub geodesic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: NavObservation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One running episode.
#[derive(Clone, Debug)]
pub struct NavSim {
    scene: Arc<SceneGrid>,
    /// Scene used for the navigator's view when it differs from the truth.
    rendered: Option<Arc<SceneGrid>>,
    spec: EpisodeSpec,
    fields: Vec<DistanceField>,
    cfg: EnvConfig,
    pose: Pose,
    t: usize,
    found: usize,
    done: bool,
    prev_action: Option<Action>,
    path: Vec<(f64, f64)>,
}

impl NavSim {
    /// `scene` is the bare layout; the episode's goals are stamped onto it.
    pub fn new(scene: &SceneGrid, spec: EpisodeSpec, cfg: &EnvConfig) -> Result<Self> {
        if scene.free_cell_of(spec.start.x, spec.start.y).is_none() {
            return Err(Error::Parameter("episode start is not on a free cell".into()));
        }
        if spec.goals.is_empty() {
            return Err(Error::Parameter("episode has no goals".into()));
        }
        let stamped = scene.with_objects(&spec.objects())?;
        let fields = spec
            .goals
            .iter()
            .map(|g| DistanceField::new(&stamped, g.cell))
            .collect::<Result<Vec<_>>>()?;
        Ok(NavSim {
            pose: spec.start,
            path: vec![(spec.start.x, spec.start.y)],
            scene: Arc::new(stamped),
            rendered: None,
            spec,
            fields,
            cfg: cfg.clone(),
            t: 0,
            found: 0,
            done: false,
            prev_action: None,
        })
    }

    /// Shows the navigator `objects` instead of the true goal placement.
    /// The oracle's map, the reward and FOUND keep using the truth.
    pub fn render_objects(&mut self, objects: &[(usize, u8)]) -> Result<()> {
        self.rendered = Some(Arc::new(self.scene.with_objects(objects)?));
        Ok(())
    }

    pub fn scene(&self) -> &SceneGrid {
        &self.scene
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn goals_found(&self) -> usize {
        self.found
    }

    pub fn current_goal(&self) -> Option<Goal> {
        self.spec.goals.get(self.found).copied()
    }

    /// Geodesic from the current pose to the current goal; 0 once all are found.
    pub fn geodesic_to_goal(&self) -> f64 {
        self.fields.get(self.found).map_or(0.0, |f| f.pose(&self.scene, self.pose.x, self.pose.y))
    }

    pub fn field(&self, goal: usize) -> Option<&DistanceField> {
        self.fields.get(goal)
    }

    pub fn observe(&self) -> Result<NavObservation> {
        let scene = self.rendered.as_deref().unwrap_or(&self.scene);
        let view = nav_view(scene, &self.pose, self.cfg.view_size, self.cfg.fov_deg, self.cfg.view_range)?;
        let goal = self.current_goal().or(self.spec.goals.last().copied()).map_or(0, |g| g.category);
        Ok(NavObservation { view, goal, prev_action: self.prev_action })
    }

    pub fn oracle_view(&self) -> Result<EgoGrid> {
        oracle_view(&self.scene, &self.pose, self.cfg.crop)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let field = &self.fields[self.found];
        let before = field.pose(&self.scene, self.pose.x, self.pose.y);
        let mut collision = false;
        let mut subgoal = false;
        let mut failed = false;
        match action {
            Action::Forward => {
                let (fx, fy) = self.pose.forward();
                let (nx, ny) = (self.pose.x + self.cfg.forward_step * fx, self.pose.y + self.cfg.forward_step * fy);
                if self.scene.free_cell_of(nx, ny).is_some() {
                    self.pose = Pose { x: nx, y: ny, ..self.pose };
                } else {
                    collision = true;
                }
            }
            Action::TurnLeft => self.pose = self.pose.turned(TURN_DEG as i32),
            Action::TurnRight => self.pose = self.pose.turned(-(TURN_DEG as i32)),
            Action::Found => {
                if before <= self.cfg.found_threshold {
                    subgoal = true;
                } else {
                    failed = true;
                }
            }
        }
        let after = field.pose(&self.scene, self.pose.x, self.pose.y);
        let r_closer = before - after;
        let reward = if subgoal { self.cfg.reward_goal } else { 0.0 } + r_closer + self.cfg.time_penalty;
        if subgoal {
            self.found += 1;
        }
        self.t += 1;
        self.prev_action = Some(action);
        self.path.push((self.pose.x, self.pose.y));
        self.done = failed || self.found == self.spec.goals.len() || self.t >= self.spec.budget;
        let info = StepInfo {
            subgoal_found: subgoal,
            collision,
            goals_found: self.found,
            geodesic: self.geodesic_to_goal(),
        };
        Ok(StepResult { obs: self.observe()?, reward, done: self.done, info })
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory { positions: self.path.clone(), found: self.found }
    }

    pub fn metrics(&self) -> Result<MetricsRecord> {
        compute_metrics(&self.scene, &self.spec, &self.trajectory())
    }
}
