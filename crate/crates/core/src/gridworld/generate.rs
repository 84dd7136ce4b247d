use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, Cell, Dir, GridState, Object, HORIZON};
use crate::error::{Error, Result};
use crate::search::{bfs_path, NEIGHBORS};
use crate::task::{check_grid_combo, Color, ObjectKind, Task, Verb};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    #[default]
    OneRoom,
    TwoRoom,
}

/// Knobs for procedural level generation. Unset task fields are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridGenConfig {
    pub width: i32,
    pub height: i32,
    pub difficulty: Difficulty,
    pub verb: Option<Verb>,
    pub color: Option<Color>,
    pub object: Option<ObjectKind>,
    /// Colors never used for task targets (e.g. yellow for a held-out-color test).
    pub exclude_colors: Vec<Color>,
    pub n_distractors: usize,
    pub locked_door: bool,
    pub horizon: u32,
}

impl Default for GridGenConfig {
    fn default() -> Self {
        GridGenConfig {
            width: 8,
            height: 8,
            difficulty: Difficulty::OneRoom,
            verb: None,
            color: None,
            object: None,
            exclude_colors: Vec::new(),
            n_distractors: 3,
            locked_door: false,
            horizon: HORIZON,
        }
    }
}

/// Generates a level. Deterministic in `(seed, cfg)`.
pub fn grid_reset(seed: u64, cfg: &GridGenConfig) -> Result<(GridState, Task, Vec<f64>)> {
    if cfg.width < 5 || cfg.height < 5 {
        return Err(Error::Config(format!(
            "gridworld must be at least 5x5, got {}x{}",
            cfg.width, cfg.height
        )));
    }
    if let (Some(v), Some(o)) = (cfg.verb, cfg.object) {
        check_grid_combo(v, o)?;
    }
    let colors: Vec<Color> = Color::ALL
        .into_iter()
        .filter(|c| !cfg.exclude_colors.contains(c))
        .collect();
    if colors.is_empty() && cfg.color.is_none() {
        return Err(Error::Config("every target color is excluded".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        match attempt(&mut rng, seed, cfg, &colors) {
            Ok(s) => {
                let task = s.task.clone();
                let obs = s.obs();
                return Ok((s, task, obs));
            }
            Err(reason) => last = reason,
        }
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

fn attempt(
    rng: &mut ChaCha8Rng,
    seed: u64,
    cfg: &GridGenConfig,
    colors: &[Color],
) -> std::result::Result<GridState, String> {
    let (w, h) = (cfg.width, cfg.height);
    let verb = cfg.verb.unwrap_or_else(|| *Verb::TASK.choose(rng).unwrap());
    let object = match (verb, cfg.object) {
        (_, Some(o)) => o,
        (Verb::Open, None) => ObjectKind::Door,
        (_, None) => *ObjectKind::PORTABLE.choose(rng).unwrap(),
    };
    let color = cfg.color.unwrap_or_else(|| *colors.choose(rng).unwrap());
    let task = Task::gridworld(verb, color, object).map_err(|e| e.to_string())?;

    let mut s = GridState::empty(w, h, task);
    s.seed = seed;
    s.horizon = cfg.horizon;

    // Region the agent (and any key) spawns in.
    let mut agent_xmax = w - 2;
    let mut door: Option<(i32, i32)> = None;
    let door_color = if verb == Verb::Open {
        color
    } else {
        *Color::ALL.choose(rng).unwrap()
    };
    match cfg.difficulty {
        Difficulty::TwoRoom => {
            let wx = w / 2;
            for y in 1..h - 1 {
                s.set(wx, y, Cell::Wall);
            }
            let dy = rng.random_range(1..h - 1);
            door = Some((wx, dy));
            agent_xmax = wx - 1;
        }
        Difficulty::OneRoom if verb == Verb::Open => {
            let pos = match rng.random_range(0..4) {
                0 => (rng.random_range(1..w - 1), 0),
                1 => (w - 1, rng.random_range(1..h - 1)),
                2 => (rng.random_range(1..w - 1), h - 1),
                _ => (0, rng.random_range(1..h - 1)),
            };
            door = Some(pos);
        }
        Difficulty::OneRoom => {}
    }
    if let Some((dx, dy)) = door {
        s.set(dx, dy, Cell::Door {
            color: door_color,
            open: false,
            locked: cfg.locked_door,
        });
    }

    let free = |s: &GridState, xmax: i32| -> Vec<(i32, i32)> {
        let mut v = Vec::new();
        for y in 1..h - 1 {
            for x in 1..=xmax.min(w - 2) {
                if s.get(x, y) == Cell::Floor && !blocks_doorway(s, x, y) {
                    v.push((x, y));
                }
            }
        }
        v
    };

    if verb != Verb::Open {
        let cells = free(&s, w - 2);
        let &(x, y) = cells.choose(rng).ok_or("no room for target")?;
        s.set(x, y, Cell::Object(Object::new(object, color)));
    }
    if cfg.locked_door && door.is_some() {
        let cells = free(&s, agent_xmax);
        let &(x, y) = cells.choose(rng).ok_or("no room for key")?;
        s.set(x, y, Cell::Object(Object::new(ObjectKind::Key, door_color)));
    }
    for _ in 0..cfg.n_distractors {
        let cells = free(&s, w - 2);
        let Some(&(x, y)) = cells.choose(rng) else { break };
        let kind = *ObjectKind::PORTABLE.choose(rng).unwrap();
        let c = *Color::ALL.choose(rng).unwrap();
        s.set(x, y, Cell::Object(Object::new(kind, c)));
    }
    let cells = free(&s, agent_xmax);
    let &(ax, ay) = cells.choose(rng).ok_or("no room for agent")?;
    s.agent = Agent {
        x: ax,
        y: ay,
        dir: Dir::from_index(rng.random_range(0..4)),
        carrying: None,
    };

    if s.task_satisfied() {
        return Err("task satisfied at reset".into());
    }
    if !target_reachable(&s) {
        return Err("target unreachable".into());
    }
    Ok(s)
}

/// Keeps doorways clear so objects never seal a room off.
fn blocks_doorway(s: &GridState, x: i32, y: i32) -> bool {
    NEIGHBORS
        .iter()
        .any(|(dx, dy)| matches!(s.get(x + dx, y + dy), Cell::Door { .. }))
}

/// Reachability audit: doors count as passable (closed ones can be toggled;
/// a locked door's key is always placed on the agent's side).
pub(crate) fn target_reachable(s: &GridState) -> bool {
    let crate::task::TaskSpec::Gridworld { verb, color, object } = s.task.spec else {
        return false;
    };
    let passable = |x: i32, y: i32| matches!(s.get(x, y), Cell::Floor | Cell::Door { .. });
    let start = (s.agent.x, s.agent.y);
    let site = |x: i32, y: i32| -> bool {
        NEIGHBORS.iter().any(|(dx, dy)| {
            let c = s.get(x + dx, y + dy);
            match verb {
                Verb::Open => matches!(c, Cell::Door { color: dc, .. } if dc == color),
                _ => c == Cell::Object(Object::new(object, color)),
            }
        })
    };
    if bfs_path(s.width, s.height, start, site, passable).is_none() {
        return false;
    }
    // A locked door needs its key reachable without crossing any door.
    for (_, d) in s.doors() {
        if let Cell::Door {
            color: dc,
            locked: true,
            ..
        } = d
        {
            let key = Cell::Object(Object::new(ObjectKind::Key, dc));
            let near_key = |x: i32, y: i32| NEIGHBORS.iter().any(|(dx, dy)| s.get(x + dx, y + dy) == key);
            let floor = |x: i32, y: i32| s.get(x, y) == Cell::Floor;
            if bfs_path(s.width, s.height, start, near_key, floor).is_none() {
                return false;
            }
        }
    }
    true
}
