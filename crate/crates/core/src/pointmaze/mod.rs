//! Point-mass navigation in procedurally generated mazes.
//!
//! Positions are in cell units: cell `(i, j)` spans `[i, i+1) x [j, j+1)` and
//! its center is `(i + 0.5, j + 0.5)`. North is `-y`.

pub mod maze;

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{distance_map, NEIGHBORS};
use crate::task::Task;

pub use maze::{maze_generate, MazeGrid};

pub const N_ACTIONS: usize = 9;
pub const DT: f64 = 0.25;
pub const FRICTION: f64 = 0.5;
pub const A_MAX: f64 = 0.4;
pub const V_MAX: f64 = 1.0;
pub const FRAME_SKIP: usize = 2;
pub const SUCCESS_RADIUS: f64 = 0.3;
pub const SUCCESS_BONUS: f64 = 5.0;
pub const HORIZON: u32 = 200;

const D: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Acceleration directions: index 0 is no thrust, then clockwise from north.
pub const HEADINGS: [(f64, f64); N_ACTIONS] = [
    (0.0, 0.0),
    (0.0, -1.0),
    (D, -D),
    (1.0, 0.0),
    (D, D),
    (0.0, 1.0),
    (-D, D),
    (-1.0, 0.0),
    (-D, -D),
];

pub fn cell_center((x, y): (i32, i32)) -> (f64, f64) {
    (x as f64 + 0.5, y as f64 + 0.5)
}

pub fn cell_of((x, y): (f64, f64)) -> (i32, i32) {
    (x.floor() as i32, y.floor() as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Semisparse,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointConfig {
    pub width: i32,
    pub height: i32,
    pub reward: RewardMode,
    pub horizon: u32,
    /// When set, every episode uses the walls generated from this seed; start
    /// and goal cells still vary with the episode seed.
    pub layout_seed: Option<u64>,
}

impl Default for PointConfig {
    fn default() -> Self {
        PointConfig {
            width: 6,
            height: 6,
            reward: RewardMode::Semisparse,
            horizon: HORIZON,
            layout_seed: None,
        }
    }
}

/// Serializable dynamic part of a [`PointState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSnapshot {
    pub pos: (f64, f64),
    pub vel: (f64, f64),
    pub steps: u32,
    pub best_dist: u32,
    pub waypoints_achieved: u32,
}

#[derive(Debug, Clone)]
pub struct PointState {
    pub pos: (f64, f64),
    pub vel: (f64, f64),
    pub maze: Arc<MazeGrid>,
    pub target: (f64, f64),
    pub waypoints_achieved: u32,
    pub steps: u32,
    pub horizon: u32,
    pub reward_mode: RewardMode,
    pub done: bool,
    pub seed: u64,
    /// Lowest goal distance (in cells) reached so far this episode.
    pub best_dist: u32,
    goal_dist: Arc<Vec<Option<u32>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointStepInfo {
    pub reward: f64,
    pub success: bool,
    pub truncated: bool,
    /// Path cells newly reached this step (semi-sparse emissions).
    pub waypoints_entered: u32,
    pub displacement: (f64, f64),
}

pub fn point_reset(seed: u64, cfg: &PointConfig) -> Result<(PointState, Task, Vec<f64>)> {
    let maze = match cfg.layout_seed {
        // fixed walls; start and goal still drawn per episode
        Some(ls) => {
            let mut m = maze_generate(ls, cfg.width, cfg.height)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cells = m.open_cells();
            if cells.len() >= 2 {
                let picks: Vec<_> = cells.choose_multiple(&mut rng, 2).copied().collect();
                m.start_cell = picks[0];
                m.goal_cell = picks[1];
            }
            m
        }
        None => maze_generate(seed, cfg.width, cfg.height)?,
    };
    let s = PointState::new(maze, seed, cfg);
    let task = s.task();
    let obs = s.obs();
    Ok((s, task, obs))
}

impl PointState {
    pub fn new(maze: MazeGrid, seed: u64, cfg: &PointConfig) -> PointState {
        let goal_dist = distance_map(maze.width, maze.height, maze.goal_cell, |x, y| maze.is_open(x, y));
        let start = maze.start_cell;
        let mut s = PointState {
            pos: cell_center(start),
            vel: (0.0, 0.0),
            target: cell_center(maze.goal_cell),
            maze: Arc::new(maze),
            waypoints_achieved: 0,
            steps: 0,
            horizon: cfg.horizon,
            reward_mode: cfg.reward,
            done: false,
            seed,
            best_dist: 0,
            goal_dist: Arc::new(goal_dist),
        };
        s.best_dist = s.goal_distance(start).unwrap_or(0);
        s
    }

    pub fn task(&self) -> Task {
        Task::pointmaze(self.target)
    }

    pub fn cell(&self) -> (i32, i32) {
        cell_of(self.pos)
    }

    pub fn goal_cell(&self) -> (i32, i32) {
        self.maze.goal_cell
    }

    /// BFS distance in cells from `c` to the goal cell.
    pub fn goal_distance(&self, (x, y): (i32, i32)) -> Option<u32> {
        if !self.maze.is_open(x, y) {
            return None;
        }
        self.goal_dist[(y * self.maze.width + x) as usize]
    }

    /// Next cell on a shortest path from `c` (first N/E/S/W neighbor one step
    /// closer to the goal); `None` at the goal cell.
    pub fn next_path_cell(&self, c: (i32, i32)) -> Option<(i32, i32)> {
        let d = self.goal_distance(c)?;
        if d == 0 {
            return None;
        }
        NEIGHBORS
            .iter()
            .map(|(dx, dy)| (c.0 + dx, c.1 + dy))
            .find(|&n| self.goal_distance(n) == Some(d - 1))
    }

    pub fn snapshot(&self) -> PointSnapshot {
        PointSnapshot {
            pos: self.pos,
            vel: self.vel,
            steps: self.steps,
            best_dist: self.best_dist,
            waypoints_achieved: self.waypoints_achieved,
        }
    }

    pub fn restore(&mut self, snap: &PointSnapshot) {
        self.pos = snap.pos;
        self.vel = snap.vel;
        self.steps = snap.steps;
        self.best_dist = snap.best_dist;
        self.waypoints_achieved = snap.waypoints_achieved;
        self.done = false;
    }

    fn at_target(&self) -> bool {
        let (dx, dy) = (self.pos.0 - self.target.0, self.pos.1 - self.target.1);
        (dx * dx + dy * dy).sqrt() <= SUCCESS_RADIUS
    }

    /// Counts new closest-to-goal cells after a position change.
    fn note_cell(&mut self) -> u32 {
        match self.goal_distance(self.cell()) {
            Some(d) if d < self.best_dist => {
                let gained = self.best_dist - d;
                self.best_dist = d;
                self.waypoints_achieved += gained;
                gained
            }
            _ => 0,
        }
    }

    /// Unit vector from `pos` toward the next shortest-path cell center (or the
    /// target inside the goal cell). Zero at the target itself.
    pub fn planner_direction(&self) -> (f64, f64) {
        let aim = match self.next_path_cell(self.cell()) {
            Some(c) => cell_center(c),
            None => self.target,
        };
        normalize((aim.0 - self.pos.0, aim.1 - self.pos.1))
    }

    pub fn step(&mut self, action: usize) -> Result<PointStepInfo> {
        if action >= N_ACTIONS {
            return Err(Error::Env(format!("pointmaze action {action} out of range 0..{N_ACTIONS}")));
        }
        if self.done {
            return Err(Error::Env("step called after episode end".into()));
        }
        let start = self.pos;
        let planner = self.planner_direction();
        let (ax, ay) = HEADINGS[action];
        let (ax, ay) = (ax * A_MAX, ay * A_MAX);
        let mut entered = 0;
        let mut success = false;
        for _ in 0..FRAME_SKIP {
            let mut vx = self.vel.0 * (1.0 - FRICTION) + ax * DT;
            let mut vy = self.vel.1 * (1.0 - FRICTION) + ay * DT;
            let n = (vx * vx + vy * vy).sqrt();
            if n > V_MAX {
                vx *= V_MAX / n;
                vy *= V_MAX / n;
            }
            let nx = self.pos.0 + vx * DT;
            if self.maze.is_open(nx.floor() as i32, self.pos.1.floor() as i32) {
                self.pos.0 = nx;
                entered += self.note_cell();
            } else {
                vx = 0.0;
            }
            let ny = self.pos.1 + vy * DT;
            if self.maze.is_open(self.pos.0.floor() as i32, ny.floor() as i32) {
                self.pos.1 = ny;
                entered += self.note_cell();
            } else {
                vy = 0.0;
            }
            self.vel = (vx, vy);
            if self.at_target() {
                success = true;
                break;
            }
        }
        self.steps += 1;
        let displacement = (self.pos.0 - start.0, self.pos.1 - start.1);
        let mut reward = match self.reward_mode {
            RewardMode::Semisparse => entered as f64,
            RewardMode::Dense => displacement.0 * planner.0 + displacement.1 * planner.1,
        };
        if success {
            reward += SUCCESS_BONUS;
        }
        let truncated = !success && self.steps >= self.horizon;
        self.done = success || truncated;
        Ok(PointStepInfo {
            reward,
            success,
            truncated,
            waypoints_entered: entered,
            displacement,
        })
    }

    pub fn obs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(obs_len(self.maze.width, self.maze.height));
        v.extend_from_slice(&[self.pos.0, self.pos.1, self.vel.0, self.vel.1, self.target.0, self.target.1]);
        v.extend(self.maze.flat());
        v
    }

    /// JSON render payload; `path` lists cell centers of the remaining plan.
    pub fn render(&self, path: Option<&[(i32, i32)]>) -> serde_json::Value {
        let open: Vec<Vec<bool>> = (0..self.maze.height)
            .map(|y| (0..self.maze.width).map(|x| self.maze.is_open(x, y)).collect())
            .collect();
        let mut v = serde_json::json!({
            "open": open,
            "pos": [self.pos.0, self.pos.1],
            "vel": [self.vel.0, self.vel.1],
            "target": [self.target.0, self.target.1],
        });
        if let Some(p) = path {
            let cells: Vec<[f64; 2]> = p.iter().map(|&c| {
                let (x, y) = cell_center(c);
                [x, y]
            }).collect();
            v["path"] = serde_json::json!(cells);
        }
        v
    }
}

pub fn obs_len(width: i32, height: i32) -> usize {
    6 + (width * height) as usize
}

pub fn normalize((x, y): (f64, f64)) -> (f64, f64) {
    let n = (x * x + y * y).sqrt();
    if n < 1e-12 {
        (0.0, 0.0)
    } else {
        (x / n, y / n)
    }
}
