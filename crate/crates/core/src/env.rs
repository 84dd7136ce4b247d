//! A single handle over both environments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{self, grid_reset, GridGenConfig, GridState};
use crate::pointmaze::{self, point_reset, PointConfig, PointState};
use crate::task::{EnvKind, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default)]
    pub grid: GridGenConfig,
    #[serde(default)]
    pub point: PointConfig,
}

impl EnvConfig {
    pub fn gridworld(grid: GridGenConfig) -> EnvConfig {
        EnvConfig {
            kind: EnvKind::Gridworld,
            grid,
            point: PointConfig::default(),
        }
    }

    pub fn pointmaze(point: PointConfig) -> EnvConfig {
        EnvConfig {
            kind: EnvKind::Pointmaze,
            grid: GridGenConfig::default(),
            point,
        }
    }

    pub fn reset(&self, seed: u64) -> Result<EnvState> {
        Ok(match self.kind {
            EnvKind::Gridworld => EnvState::Grid(grid_reset(seed, &self.grid)?.0),
            EnvKind::Pointmaze => EnvState::Point(point_reset(seed, &self.point)?.0),
        })
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            EnvKind::Gridworld => gridworld::N_ACTIONS,
            EnvKind::Pointmaze => pointmaze::N_ACTIONS,
        }
    }

    pub fn obs_len(&self) -> usize {
        match self.kind {
            EnvKind::Gridworld => gridworld::obs_len(self.grid.width, self.grid.height),
            EnvKind::Pointmaze => pointmaze::obs_len(self.point.width, self.point.height),
        }
    }

    /// Task reward paid on success.
    pub fn success_bonus(&self) -> f64 {
        match self.kind {
            EnvKind::Gridworld => 1.0,
            EnvKind::Pointmaze => pointmaze::SUCCESS_BONUS,
        }
    }

    /// Squared thrust magnitude of each action (0 for the gridworld).
    pub fn action_magnitudes(&self) -> Vec<f64> {
        match self.kind {
            EnvKind::Gridworld => vec![0.0; gridworld::N_ACTIONS],
            EnvKind::Pointmaze => pointmaze::HEADINGS.iter().map(|(x, y)| x * x + y * y).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum EnvState {
    Grid(GridState),
    Point(PointState),
}

/// What happened during one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Task reward (semi-sparse or dense for the maze; 0/1 for the grid).
    pub reward: f64,
    pub success: bool,
    pub truncated: bool,
    pub waypoints_entered: u32,
    pub displacement: (f64, f64),
    pub interacted: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.success || self.truncated
    }
}

impl EnvState {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvState::Grid(_) => EnvKind::Gridworld,
            EnvState::Point(_) => EnvKind::Pointmaze,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        match self {
            EnvState::Grid(s) => {
                let before = (s.agent.x, s.agent.y);
                let i = s.step(action)?;
                Ok(StepOutcome {
                    reward: if i.success { 1.0 } else { 0.0 },
                    success: i.success,
                    truncated: i.truncated,
                    waypoints_entered: 0,
                    displacement: ((s.agent.x - before.0) as f64, (s.agent.y - before.1) as f64),
                    interacted: i.interacted,
                })
            }
            EnvState::Point(s) => {
                let i = s.step(action)?;
                Ok(StepOutcome {
                    reward: i.reward,
                    success: i.success,
                    truncated: i.truncated,
                    waypoints_entered: i.waypoints_entered,
                    displacement: i.displacement,
                    interacted: false,
                })
            }
        }
    }

    pub fn obs(&self) -> Vec<f64> {
        match self {
            EnvState::Grid(s) => s.obs(),
            EnvState::Point(s) => s.obs(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            EnvState::Grid(s) => s.task.clone(),
            EnvState::Point(s) => s.task(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            EnvState::Grid(s) => s.done,
            EnvState::Point(s) => s.done,
        }
    }

    pub fn steps(&self) -> u32 {
        match self {
            EnvState::Grid(s) => s.steps,
            EnvState::Point(s) => s.steps,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EnvState::Grid(s) => s.seed,
            EnvState::Point(s) => s.seed,
        }
    }

    /// Integer cell the agent occupies.
    pub fn agent_cell(&self) -> (i32, i32) {
        match self {
            EnvState::Grid(s) => (s.agent.x, s.agent.y),
            EnvState::Point(s) => s.cell(),
        }
    }

    pub fn render(&self) -> serde_json::Value {
        match self {
            EnvState::Grid(s) => s.render(),
            EnvState::Point(s) => s.render(None),
        }
    }

    /// JSON record of the dynamic state, stored alongside trajectories.
    pub fn snapshot(&self) -> serde_json::Value {
        match self {
            EnvState::Grid(s) => s.render(),
            EnvState::Point(s) => serde_json::to_value(s.snapshot()).expect("snapshot serializes"),
        }
    }

    pub fn as_grid(&self) -> Result<&GridState> {
        match self {
            EnvState::Grid(s) => Ok(s),
            EnvState::Point(_) => Err(Error::Env("expected a gridworld state".into())),
        }
    }

    pub fn as_point(&self) -> Result<&PointState> {
        match self {
            EnvState::Point(s) => Ok(s),
            EnvState::Grid(_) => Err(Error::Env("expected a pointmaze state".into())),
        }
    }
}
