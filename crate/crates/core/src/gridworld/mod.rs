//! Fully observable, egocentric grid world with doors, keys, balls and boxes.
//!
//! Coordinates: `x` is the column, `y` the row, and north is `-y`.

mod generate;
mod obs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Color, ObjectKind, Task, TaskSpec, Verb};

pub use generate::{grid_reset, Difficulty, GridGenConfig};
pub use obs::{egocentric_obs, obs_len, N_CARRY, N_CHANNELS};

pub const N_ACTIONS: usize = 7;
pub const HORIZON: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum GridAction {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
    Done = 6,
}

impl GridAction {
    pub const ALL: [GridAction; N_ACTIONS] = [
        GridAction::TurnLeft,
        GridAction::TurnRight,
        GridAction::Forward,
        GridAction::Pickup,
        GridAction::Drop,
        GridAction::Toggle,
        GridAction::Done,
    ];

    pub fn from_index(i: usize) -> Result<GridAction> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Env(format!("gridworld action {i} out of range 0..{N_ACTIONS}")))
    }

    pub fn is_interaction(self) -> bool {
        matches!(self, GridAction::Pickup | GridAction::Drop | GridAction::Toggle)
    }
}

/// Facing direction, clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    pub fn right(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, -1),
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
        }
    }

    pub fn from_delta(dx: i32, dy: i32) -> Option<Dir> {
        Dir::ALL.into_iter().find(|d| d.delta() == (dx, dy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub kind: ObjectKind,
    pub color: Color,
}

impl Object {
    pub fn new(kind: ObjectKind, color: Color) -> Object {
        Object { kind, color }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Floor,
    Wall,
    Door { color: Color, open: bool, locked: bool },
    Object(Object),
}

impl Cell {
    pub fn walkable(self) -> bool {
        matches!(self, Cell::Floor | Cell::Door { open: true, .. })
    }

    /// Integer code used by the render payload. The table is part of the wire
    /// format: 0 floor, 1 wall, 10 + 3*color + state for doors
    /// (state 0 open, 1 closed, 2 locked), 30 + 6*kind + color for objects.
    pub fn code(self) -> u8 {
        match self {
            Cell::Floor => 0,
            Cell::Wall => 1,
            Cell::Door { color, open, locked } => {
                let state = if open {
                    0
                } else if locked {
                    2
                } else {
                    1
                };
                10 + 3 * color.index() as u8 + state
            }
            Cell::Object(o) => object_code(o),
        }
    }
}

pub fn object_code(o: Object) -> u8 {
    30 + 6 * o.kind.index() as u8 + o.color.index() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub x: i32,
    pub y: i32,
    pub dir: Dir,
    pub carrying: Option<Object>,
}

impl Agent {
    pub fn front(&self) -> (i32, i32) {
        let (dx, dy) = self.dir.delta();
        (self.x + dx, self.y + dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub width: i32,
    pub height: i32,
    pub cells: Vec<Cell>,
    pub agent: Agent,
    pub task: Task,
    pub seed: u64,
    pub steps: u32,
    pub horizon: u32,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridStepInfo {
    pub success: bool,
    pub truncated: bool,
    pub moved: bool,
    /// A pickup, drop or toggle changed the world.
    pub interacted: bool,
}

impl GridState {
    /// An empty walled room, mostly for tests and hand-built scenarios.
    pub fn empty(width: i32, height: i32, task: Task) -> GridState {
        let mut cells = vec![Cell::Floor; (width * height) as usize];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    cells[(y * width + x) as usize] = Cell::Wall;
                }
            }
        }
        GridState {
            width,
            height,
            cells,
            agent: Agent {
                x: 1,
                y: 1,
                dir: Dir::E,
                carrying: None,
            },
            task,
            seed: 0,
            steps: 0,
            horizon: HORIZON,
            done: false,
        }
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn get(&self, x: i32, y: i32) -> Cell {
        if self.in_bounds(x, y) {
            self.cells[(y * self.width + x) as usize]
        } else {
            Cell::Wall
        }
    }

    pub fn set(&mut self, x: i32, y: i32, c: Cell) {
        let w = self.width;
        self.cells[(y * w + x) as usize] = c;
    }

    pub fn objects(&self) -> impl Iterator<Item = ((i32, i32), Object)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, c)| match c {
            Cell::Object(o) => Some((((i as i32) % self.width, (i as i32) / self.width), *o)),
            _ => None,
        })
    }

    pub fn doors(&self) -> impl Iterator<Item = ((i32, i32), Cell)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, c)| match c {
            Cell::Door { .. } => Some((((i as i32) % self.width, (i as i32) / self.width), *c)),
            _ => None,
        })
    }

    /// Whether the task predicate holds in this state.
    pub fn task_satisfied(&self) -> bool {
        let TaskSpec::Gridworld { verb, color, object } = self.task.spec else {
            return false;
        };
        match verb {
            Verb::Goto => {
                let (fx, fy) = self.agent.front();
                self.get(fx, fy) == Cell::Object(Object::new(object, color))
            }
            Verb::Open => self
                .doors()
                .any(|(_, d)| matches!(d, Cell::Door { color: c, open: true, .. } if c == color)),
            Verb::Pickup => self.agent.carrying == Some(Object::new(object, color)),
            Verb::Drop => false,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<GridStepInfo> {
        let action = GridAction::from_index(action)?;
        if self.done {
            return Err(Error::Env("step called after episode end".into()));
        }
        let (fx, fy) = self.agent.front();
        let front = self.get(fx, fy);
        let mut moved = false;
        let mut interacted = false;
        match action {
            GridAction::TurnLeft => self.agent.dir = self.agent.dir.left(),
            GridAction::TurnRight => self.agent.dir = self.agent.dir.right(),
            GridAction::Forward => {
                if front.walkable() {
                    self.agent.x = fx;
                    self.agent.y = fy;
                    moved = true;
                }
            }
            GridAction::Pickup => {
                if let (None, Cell::Object(o)) = (self.agent.carrying, front) {
                    self.agent.carrying = Some(o);
                    self.set(fx, fy, Cell::Floor);
                    interacted = true;
                }
            }
            GridAction::Drop => {
                if let (Some(o), Cell::Floor) = (self.agent.carrying, front) {
                    self.set(fx, fy, Cell::Object(o));
                    self.agent.carrying = None;
                    interacted = true;
                }
            }
            GridAction::Toggle => {
                if let Cell::Door { color, open, locked } = front {
                    let next = if locked {
                        let has_key = self.agent.carrying == Some(Object::new(ObjectKind::Key, color));
                        Cell::Door {
                            color,
                            open: has_key,
                            locked: !has_key,
                        }
                    } else {
                        Cell::Door {
                            color,
                            open: !open,
                            locked: false,
                        }
                    };
                    interacted = next != front;
                    self.set(fx, fy, next);
                }
            }
            GridAction::Done => {}
        }
        self.steps += 1;
        let success = self.task_satisfied();
        let truncated = !success && self.steps >= self.horizon;
        self.done = success || truncated;
        Ok(GridStepInfo {
            success,
            truncated,
            moved,
            interacted,
        })
    }

    pub fn obs(&self) -> Vec<f64> {
        egocentric_obs(self)
    }

    /// JSON render payload for the coaching service.
    pub fn render(&self) -> serde_json::Value {
        let rows: Vec<Vec<u8>> = (0..self.height)
            .map(|y| (0..self.width).map(|x| self.get(x, y).code()).collect())
            .collect();
        serde_json::json!({
            "w": self.width,
            "h": self.height,
            "cells": rows,
            "agent": {
                "x": self.agent.x,
                "y": self.agent.y,
                "dir": format!("{:?}", self.agent.dir),
                "carrying": self.agent.carrying.map(object_code),
            }
        })
    }

    /// Rotates the world 90 degrees clockwise (square grids only), turning the
    /// agent with it. Used to check egocentric invariance.
    pub fn rotated_cw(&self) -> GridState {
        assert_eq!(self.width, self.height, "rotation needs a square grid");
        let n = self.width;
        let mut out = self.clone();
        for y in 0..n {
            for x in 0..n {
                // (x, y) -> (n-1-y, x)
                out.set(n - 1 - y, x, self.get(x, y));
            }
        }
        out.agent.x = n - 1 - self.agent.y;
        out.agent.y = self.agent.x;
        out.agent.dir = self.agent.dir.right();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> GridState {
        let task = Task::gridworld(Verb::Pickup, Color::Red, ObjectKind::Ball).unwrap();
        GridState::empty(5, 5, task)
    }

    #[test]
    fn forward_into_wall_is_noop() {
        let mut s = room();
        s.agent.dir = Dir::N;
        let before = s.agent;
        let info = s.step(GridAction::Forward as usize).unwrap();
        assert_eq!(s.agent, before);
        assert!(!info.moved && !info.success);
    }

    #[test]
    fn toggle_locked_door_with_matching_key() {
        let task = Task::gridworld(Verb::Open, Color::Blue, ObjectKind::Door).unwrap();
        let mut s = GridState::empty(5, 5, task);
        s.set(3, 1, Cell::Door {
            color: Color::Blue,
            open: false,
            locked: true,
        });
        s.agent.carrying = Some(Object::new(ObjectKind::Key, Color::Blue));
        s.step(GridAction::Toggle as usize).unwrap();
        // the agent at (1,1) faces (2,1), which is floor: nothing happens
        assert!(matches!(s.get(3, 1), Cell::Door { open: false, .. }));
        s.step(GridAction::Forward as usize).unwrap();
        let info = s.step(GridAction::Toggle as usize).unwrap();
        assert!(matches!(s.get(3, 1), Cell::Door { open: true, locked: false, .. }));
        assert!(info.success);
    }

    #[test]
    fn locked_door_stays_locked_without_key() {
        let task = Task::gridworld(Verb::Open, Color::Blue, ObjectKind::Door).unwrap();
        let mut s = GridState::empty(5, 5, task);
        s.set(2, 1, Cell::Door {
            color: Color::Blue,
            open: false,
            locked: true,
        });
        s.agent.carrying = Some(Object::new(ObjectKind::Key, Color::Red));
        s.step(GridAction::Toggle as usize).unwrap();
        assert!(matches!(s.get(2, 1), Cell::Door { open: false, locked: true, .. }));
    }

    #[test]
    fn pickup_and_drop_conserve_objects() {
        let mut s = room();
        s.set(2, 1, Cell::Object(Object::new(ObjectKind::Ball, Color::Red)));
        let info = s.step(GridAction::Pickup as usize).unwrap();
        assert!(info.success && s.done);
        assert_eq!(s.objects().count(), 0);
        s.done = false;
        s.step(GridAction::Drop as usize).unwrap();
        assert_eq!(s.objects().count(), 1);
        assert_eq!(s.agent.carrying, None);
    }

    #[test]
    fn bad_action_and_step_after_done_are_errors() {
        let mut s = room();
        assert!(s.step(7).is_err());
        s.done = true;
        assert!(s.step(0).is_err());
    }

    #[test]
    fn horizon_truncates() {
        let mut s = room();
        for _ in 0..HORIZON - 1 {
            let i = s.step(GridAction::TurnLeft as usize).unwrap();
            assert!(!i.truncated);
        }
        let i = s.step(GridAction::TurnLeft as usize).unwrap();
        assert!(i.truncated && !i.success && s.done);
    }

    #[test]
    fn turning_cycles() {
        for d in Dir::ALL {
            assert_eq!(d.left().right(), d);
            assert_eq!(d.right().right().right().right(), d);
        }
    }

    #[test]
    fn cell_codes_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        seen.insert(Cell::Floor.code());
        seen.insert(Cell::Wall.code());
        for c in Color::ALL {
            for (open, locked) in [(true, false), (false, false), (false, true)] {
                assert!(seen.insert(Cell::Door { color: c, open, locked }.code()));
            }
            for k in ObjectKind::PORTABLE {
                assert!(seen.insert(Cell::Object(Object::new(k, c)).code()));
            }
        }
        assert_eq!(Cell::Door { color: Color::Blue, open: false, locked: true }.code(), 10 + 6 + 2);
        assert_eq!(Cell::Object(Object::new(ObjectKind::Key, Color::Red)).code(), 42);
    }
}
