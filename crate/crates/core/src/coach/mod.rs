//! Scripted coaches: planning, advice for every form, grounding rewards,
//! expert policies and waypoint noise.

mod grid_expert;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advice::{Advice, AdviceForm, AdviceKind, Cardinal, AGE_SCALE};
use crate::env::{EnvState, StepOutcome};
use crate::error::{Error, Result};
use crate::gridworld::{Cell, GridAction, GridState};
use crate::pointmaze::{cell_center, normalize, MazeGrid, PointState, HEADINGS};
use crate::search::{bfs_path, NEIGHBORS};
use crate::task::{EnvKind, ObjectKind};

pub use grid_expert::{grid_expert, ExpertStep, Milestone};

/// Default velocity compensation for the maze waypoint controller.
pub const DEFAULT_BETA: f64 = 0.5;

/// Shortest route as a list of cells; `cells[cursor]` is the next one to reach.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub cells: Vec<(i32, i32)>,
    pub cursor: usize,
}

impl Plan {
    pub fn next(&self) -> Option<(i32, i32)> {
        self.cells.get(self.cursor).copied()
    }

    /// Moves the cursor past `cell` if it is on the remaining route.
    pub fn advance_to(&mut self, cell: (i32, i32)) {
        if let Some(i) = self.cells[self.cursor..].iter().position(|&c| c == cell) {
            self.cursor += i + 1;
        }
    }
}

/// BFS shortest path from `start` to `goal` through open cells. The start
/// cell is excluded, so the length equals the unit-weight distance.
pub fn plan_shortest(maze: &MazeGrid, start: (i32, i32), goal: (i32, i32)) -> Result<Plan> {
    let cells = bfs_path(maze.width, maze.height, start, |x, y| (x, y) == goal, |x, y| maze.is_open(x, y))
        .filter(|_| maze.is_open(goal.0, goal.1))
        .ok_or(Error::Planning { from: start, to: goal })?;
    Ok(Plan { cells, cursor: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reissue {
    EveryStep,
    /// New advice once the advised cell (or milestone) is reached, or when the
    /// current advice has gone stale.
    OnWaypointReached,
    /// New advice every k steps, k drawn uniformly from `[k_min, k_max]` at each
    /// issue, and also as soon as the advised target is reached.
    EveryK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoachConfig {
    pub form: AdviceForm,
    /// `None` picks the form's default law.
    pub reissue: Option<Reissue>,
    pub noise_p: f64,
    pub beta: f64,
    pub k_min: u32,
    pub k_max: u32,
}

impl Default for CoachConfig {
    fn default() -> Self {
        CoachConfig {
            form: AdviceForm::OffsetWaypoint,
            reissue: None,
            noise_p: 0.0,
            beta: DEFAULT_BETA,
            k_min: 2,
            k_max: 20,
        }
    }
}

impl CoachConfig {
    pub fn new(form: AdviceForm) -> CoachConfig {
        CoachConfig {
            form,
            ..Default::default()
        }
    }

    pub fn with_noise(mut self, p: f64) -> CoachConfig {
        self.noise_p = p;
        self
    }

    pub fn validate(&self, env: EnvKind) -> Result<()> {
        self.form.check_env(env)?;
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(Error::Config(format!("noise_p must lie in [0, 1], got {}", self.noise_p)));
        }
        if self.noise_p > 0.0 && !matches!(self.form, AdviceForm::Waypoint | AdviceForm::OffsetWaypoint) {
            return Err(Error::Config(format!("noise applies only to waypoint forms, not {}", self.form)));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::Config(format!("bad k range [{}, {}]", self.k_min, self.k_max)));
        }
        Ok(())
    }

    pub fn reissue_law(&self, env: EnvKind) -> Reissue {
        self.reissue.unwrap_or(match (self.form, env) {
            (AdviceForm::Action | AdviceForm::Direction | AdviceForm::Cardinal, _) => Reissue::EveryStep,
            (AdviceForm::OffsetWaypoint, EnvKind::Gridworld) => Reissue::EveryK,
            _ => Reissue::OnWaypointReached,
        })
    }
}

/// What the live advice points at, for reissue and grounding-reward checks.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    None,
    Action(usize),
    Heading((f64, f64)),
    Cell((i32, i32)),
    GridCell { cell: (i32, i32), interact: bool },
    Milestone(Milestone),
}

/// Result of asking the coach for this step's advice.
#[derive(Debug, Clone, PartialEq)]
pub struct Issued {
    pub advice: Advice,
    /// True when this is a new emission (charged one advice unit).
    pub fresh: bool,
}

/// A scripted coach for one advice form. Holds the advice currently in
/// force, so a single instance follows one episode at a time.
#[derive(Debug, Clone)]
pub struct Coach {
    cfg: CoachConfig,
    env: EnvKind,
    law: Reissue,
    rng: ChaCha8Rng,
    current: Option<Advice>,
    target: Target,
    achieved: bool,
    k_left: u32,
}

impl Coach {
    pub fn new(cfg: CoachConfig, env: EnvKind, seed: u64) -> Result<Coach> {
        cfg.validate(env)?;
        Ok(Coach {
            law: cfg.reissue_law(env),
            cfg,
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
            target: Target::None,
            achieved: false,
            k_left: 0,
        })
    }

    pub fn config(&self) -> &CoachConfig {
        &self.cfg
    }

    pub fn form(&self) -> AdviceForm {
        self.cfg.form
    }

    /// Forget the advice in force (call at episode start).
    pub fn reset(&mut self) {
        self.current = None;
        self.target = Target::None;
        self.achieved = false;
        self.k_left = 0;
    }

    pub fn current(&self) -> Option<&Advice> {
        self.current.as_ref()
    }

    fn needs_reissue(&self, env: &EnvState) -> Result<bool> {
        let Some(cur) = &self.current else { return Ok(true) };
        Ok(match self.law {
            Reissue::EveryStep => true,
            Reissue::OnWaypointReached => {
                self.achieved
                    || cur.age + 1 >= AGE_SCALE as u32
                    || match (self.target, env) {
                        (Target::Cell(c), _) => env.agent_cell() == c,
                        (Target::Milestone(m), EnvState::Grid(g)) => m.reached(g) || grid_expert(g)?.milestone != m,
                        _ => false,
                    }
            }
            Reissue::EveryK => self.achieved || self.k_left == 0,
        })
    }

    /// Advice in force for the coming step, reissuing per the configured law.
    pub fn advise(&mut self, env: &EnvState) -> Result<Issued> {
        if env.kind() != self.env {
            return Err(Error::Coach(format!("coach built for {}, got a {} state", self.env, env.kind())));
        }
        if self.needs_reissue(env)? {
            if self.law == Reissue::EveryK {
                self.k_left = self.rng.random_range(self.cfg.k_min..=self.cfg.k_max);
            }
            let (advice, target) = self.fresh_advice(env)?;
            self.current = Some(advice.clone());
            self.target = target;
            self.achieved = false;
            self.k_left = self.k_left.saturating_sub(1);
            return Ok(Issued { advice, fresh: true });
        }
        let cur = self.current.as_mut().expect("checked above");
        cur.age += 1;
        self.k_left = self.k_left.saturating_sub(1);
        Ok(Issued {
            advice: cur.clone(),
            fresh: false,
        })
    }

    fn fresh_advice(&mut self, env: &EnvState) -> Result<(Advice, Target)> {
        let (advice, target) = match env {
            EnvState::Point(s) => self.point_advice(s)?,
            EnvState::Grid(s) => self.grid_advice(s)?,
        };
        if self.cfg.noise_p > 0.0 {
            let (noisy, cell) = match env {
                EnvState::Point(s) => noisify(&advice, self.cfg.noise_p, &mut self.rng, s.pos, true, |x, y| s.maze.is_open(x, y))?,
                EnvState::Grid(s) => {
                    let origin = (s.agent.x as f64, s.agent.y as f64);
                    noisify(&advice, self.cfg.noise_p, &mut self.rng, origin, false, |x, y| s.get(x, y).walkable())?
                }
            };
            let target = match target {
                Target::GridCell { interact, .. } => Target::GridCell { cell, interact },
                _ => Target::Cell(cell),
            };
            return Ok((noisy, target));
        }
        Ok((advice, target))
    }

    fn point_advice(&self, s: &PointState) -> Result<(Advice, Target)> {
        let wp_cell = next_waypoint(s)?;
        let wp = if wp_cell == s.goal_cell() { s.target } else { cell_center(wp_cell) };
        let kind = match self.cfg.form {
            AdviceForm::Direction => {
                let (dx, dy) = point_direction(s, self.cfg.beta)?;
                AdviceKind::Direction { dx, dy }
            }
            AdviceForm::Cardinal => {
                let (dx, dy) = point_direction(s, self.cfg.beta)?;
                AdviceKind::Cardinal {
                    dir: Cardinal::from_vector(dx, dy),
                }
            }
            AdviceForm::Waypoint => AdviceKind::Waypoint { x: wp.0, y: wp.1 },
            AdviceForm::OffsetWaypoint => AdviceKind::OffsetWaypoint {
                dx: wp.0 - s.pos.0,
                dy: wp.1 - s.pos.1,
                interact: false,
            },
            other => return Err(Error::Coach(format!("{other} advice is undefined for the pointmaze"))),
        };
        let target = match &kind {
            AdviceKind::Direction { dx, dy } => Target::Heading((*dx, *dy)),
            AdviceKind::Cardinal { dir } => Target::Heading(dir.unit()),
            _ => Target::Cell(wp_cell),
        };
        Ok((Advice::new(kind), target))
    }

    fn grid_advice(&mut self, s: &GridState) -> Result<(Advice, Target)> {
        match self.cfg.form {
            AdviceForm::Action => {
                let a = grid_expert(s)?.action as usize;
                Ok((Advice::new(AdviceKind::Action { action_index: a }), Target::Action(a)))
            }
            AdviceForm::OffsetWaypoint => {
                let k = match self.law {
                    Reissue::EveryK => self.k_left,
                    _ => self.cfg.k_max,
                };
                let (cell, interact) = grid_lookahead(s, k)?;
                let kind = AdviceKind::OffsetWaypoint {
                    dx: (cell.0 - s.agent.x) as f64,
                    dy: (cell.1 - s.agent.y) as f64,
                    interact,
                };
                Ok((Advice::new(kind), Target::GridCell { cell, interact }))
            }
            AdviceForm::Subgoal => {
                let m = grid_expert(s)?.milestone;
                Ok((Advice::new(subgoal_advice(s, &m)), Target::Milestone(m)))
            }
            other => Err(Error::Coach(format!("{other} advice is undefined for the gridworld"))),
        }
    }

    /// Grounding reward for the step just taken under the advice in force.
    pub fn grounding_reward(&mut self, action: usize, next: &EnvState, out: &StepOutcome) -> f64 {
        let bonus = if out.success {
            match next.kind() {
                EnvKind::Gridworld => 1.0,
                EnvKind::Pointmaze => crate::pointmaze::SUCCESS_BONUS,
            }
        } else {
            0.0
        };
        let r = match self.target {
            Target::None => 0.0,
            Target::Action(a) => return if a == action { 1.0 } else { 0.0 },
            Target::Heading(h) => {
                let d = normalize(out.displacement);
                d.0 * h.0 + d.1 * h.1
            }
            Target::Cell(c) => self.first_hit(next.agent_cell() == c),
            Target::GridCell { cell, interact } => {
                let hit = next.agent_cell() == cell && (!interact || out.interacted);
                self.first_hit(hit)
            }
            Target::Milestone(m) => {
                let hit = match next {
                    EnvState::Grid(g) => m.reached(g),
                    EnvState::Point(_) => false,
                };
                self.first_hit(hit)
            }
        };
        r + bonus
    }

    fn first_hit(&mut self, hit: bool) -> f64 {
        if hit && !self.achieved {
            self.achieved = true;
            1.0
        } else {
            0.0
        }
    }
}

/// Next waypoint cell for the maze coach: first cell of a fresh plan from the
/// agent's cell, or the goal cell once inside it.
pub fn next_waypoint(s: &PointState) -> Result<(i32, i32)> {
    let plan = plan_shortest(&s.maze, s.cell(), s.goal_cell())?;
    Ok(plan.next().unwrap_or(s.goal_cell()))
}

/// Velocity-compensated heading toward the next waypoint:
/// `normalize(waypoint - pos - beta * vel)`.
pub fn point_direction(s: &PointState, beta: f64) -> Result<(f64, f64)> {
    let c = next_waypoint(s)?;
    let wp = if c == s.goal_cell() { s.target } else { cell_center(c) };
    Ok(normalize((wp.0 - s.pos.0 - beta * s.vel.0, wp.1 - s.pos.1 - beta * s.vel.1)))
}

/// Thrust action best aligned with `dir` (no thrust for a zero vector).
pub fn heading_action(dir: (f64, f64)) -> usize {
    if dir == (0.0, 0.0) {
        return 0;
    }
    let mut best = (1, f64::NEG_INFINITY);
    for (a, h) in HEADINGS.iter().enumerate().skip(1) {
        let d = h.0 * dir.0 + h.1 * dir.1;
        if d > best.1 {
            best = (a, d);
        }
    }
    best.0
}

/// Expert action for either environment.
pub fn expert_action(env: &EnvState, beta: f64) -> Result<usize> {
    match env {
        EnvState::Grid(s) => Ok(grid_expert(s)?.action as usize),
        EnvState::Point(s) => Ok(heading_action(point_direction(s, beta)?)),
    }
}

/// Simulates the expert for up to `k` steps, stopping early where it would
/// interact. Returns the cell reached and whether the expert interacts there.
pub fn grid_lookahead(s: &GridState, k: u32) -> Result<((i32, i32), bool)> {
    let mut sim = s.clone();
    for _ in 0..k {
        let e = grid_expert(&sim)?;
        if e.action.is_interaction() || e.action == GridAction::Done || sim.done {
            break;
        }
        sim.step(e.action as usize)?;
        if sim.done {
            break;
        }
    }
    let interact = !sim.done && grid_expert(&sim)?.action.is_interaction();
    Ok(((sim.agent.x, sim.agent.y), interact))
}

/// Renders a milestone as subgoal advice; coordinates only when the
/// referenced object is ambiguous.
pub fn subgoal_advice(s: &GridState, m: &Milestone) -> AdviceKind {
    let (verb, color, object, at) = match m {
        Milestone::DropCarried { obj } => (crate::task::Verb::Drop, obj.color, obj.kind, None),
        other => match other.template() {
            Some((v, c, o, at)) => (v, c, o, Some(at)),
            None => {
                let crate::task::TaskSpec::Gridworld { verb, color, object } = s.task.spec else {
                    unreachable!("gridworld state carries a gridworld task")
                };
                (verb, color, object, None)
            }
        },
    };
    let duplicates = match object {
        ObjectKind::Door => s.doors().filter(|(_, d)| matches!(d, Cell::Door { color: c, .. } if *c == color)).count(),
        _ => s.objects().filter(|(_, o)| o.kind == object && o.color == color).count(),
    };
    AdviceKind::Subgoal {
        verb,
        color,
        object,
        coord: at.filter(|_| duplicates > 1),
    }
}

/// With probability `p`, moves a waypoint to a uniformly drawn open
/// 4-neighbor of its true cell. `origin` is the agent position at issue time
/// (offsets are relative to it); `centered` maps cells to their centers
/// (maze) instead of integer coordinates (grid). Returns the advice and the
/// cell it now designates.
pub fn noisify(
    advice: &Advice,
    p: f64,
    rng: &mut impl Rng,
    origin: (f64, f64),
    centered: bool,
    is_open: impl Fn(i32, i32) -> bool,
) -> Result<(Advice, (i32, i32))> {
    let point = match advice.kind {
        AdviceKind::Waypoint { x, y } => (x, y),
        AdviceKind::OffsetWaypoint { dx, dy, .. } => (origin.0 + dx, origin.1 + dy),
        _ => return Err(Error::Advice(format!("noise applies only to waypoint forms, not {}", advice.form()))),
    };
    let cell = if centered {
        (point.0.floor() as i32, point.1.floor() as i32)
    } else {
        (point.0.round() as i32, point.1.round() as i32)
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Advice(format!("noise_p must lie in [0, 1], got {p}")));
    }
    if p == 0.0 || !rng.random_bool(p) {
        return Ok((advice.clone(), cell));
    }
    let options: Vec<(i32, i32)> = NEIGHBORS
        .iter()
        .map(|(dx, dy)| (cell.0 + dx, cell.1 + dy))
        .filter(|&(x, y)| is_open(x, y))
        .collect();
    let Some(&new_cell) = options.choose(rng) else {
        return Ok((advice.clone(), cell));
    };
    let new_point = if centered {
        cell_center(new_cell)
    } else {
        (new_cell.0 as f64, new_cell.1 as f64)
    };
    let kind = match advice.kind {
        AdviceKind::OffsetWaypoint { interact, .. } => AdviceKind::OffsetWaypoint {
            dx: new_point.0 - origin.0,
            dy: new_point.1 - origin.1,
            interact,
        },
        _ => AdviceKind::Waypoint {
            x: new_point.0,
            y: new_point.1,
        },
    };
    Ok((Advice { kind, age: advice.age }, new_cell))
}

#[cfg(test)]
mod tests;
