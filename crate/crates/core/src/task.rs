//! Task descriptions (the `τ` a multi-task policy is conditioned on).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Gridworld,
    Pointmaze,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::Pointmaze => "pointmaze",
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(EnvKind::Gridworld),
            "pointmaze" => Ok(EnvKind::Pointmaze),
            other => Err(Error::Config(format!(
                "unknown env `{other}` (expected gridworld or pointmaze)"
            ))),
        }
    }
}

/// Task verbs. `Drop` only ever appears inside subgoal advice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Goto,
    Open,
    Pickup,
    Drop,
}

impl Verb {
    pub const ALL: [Verb; 4] = [Verb::Goto, Verb::Open, Verb::Pickup, Verb::Drop];
    /// Verbs a gridworld task may use.
    pub const TASK: [Verb; 3] = [Verb::Goto, Verb::Open, Verb::Pickup];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Verb::Goto => "go to",
            Verb::Open => "open",
            Verb::Pickup => "pick up",
            Verb::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Purple,
        Color::Yellow,
        Color::Grey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Purple => "purple",
            Color::Yellow => "yellow",
            Color::Grey => "grey",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Ball,
    Box,
    Key,
    Door,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [ObjectKind::Ball, ObjectKind::Box, ObjectKind::Key, ObjectKind::Door];
    /// Kinds that can lie on the floor and be carried.
    pub const PORTABLE: [ObjectKind; 3] = [ObjectKind::Ball, ObjectKind::Box, ObjectKind::Key];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Ball => "ball",
            ObjectKind::Box => "box",
            ObjectKind::Key => "key",
            ObjectKind::Door => "door",
        }
    }
}

/// Env-specific part of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Gridworld {
        verb: Verb,
        color: Color,
        object: ObjectKind,
    },
    Pointmaze {
        target: (f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub env_kind: EnvKind,
    pub spec: TaskSpec,
    pub task_id: String,
}

impl Task {
    pub fn gridworld(verb: Verb, color: Color, object: ObjectKind) -> Result<Task> {
        check_grid_combo(verb, object)?;
        Ok(Task {
            env_kind: EnvKind::Gridworld,
            spec: TaskSpec::Gridworld { verb, color, object },
            task_id: format!("{:?}-{}-{}", verb, color.name(), object.name()).to_lowercase(),
        })
    }

    pub fn pointmaze(target: (f64, f64)) -> Task {
        Task {
            env_kind: EnvKind::Pointmaze,
            spec: TaskSpec::Pointmaze { target },
            task_id: format!("reach-{:.1}-{:.1}", target.0, target.1),
        }
    }

    /// Feature encoding of the task: verb(3) + color(6) + object(4) one-hots
    /// for gridworld. Pointmaze targets are part of the state vector instead.
    pub fn encode_into(&self, out: &mut Vec<f64>) {
        if let TaskSpec::Gridworld { verb, color, object } = self.spec {
            let mut v = [0.0; TASK_ENCODING_LEN];
            v[verb.index()] = 1.0;
            v[3 + color.index()] = 1.0;
            v[9 + object.index()] = 1.0;
            out.extend_from_slice(&v);
        }
    }
}

pub const TASK_ENCODING_LEN: usize = 13;

/// `open` applies only to doors; `goto`/`pickup` never do; `drop` is not a task verb.
pub fn check_grid_combo(verb: Verb, object: ObjectKind) -> Result<()> {
    let ok = match verb {
        Verb::Open => object == ObjectKind::Door,
        Verb::Goto | Verb::Pickup => object != ObjectKind::Door,
        Verb::Drop => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "illegal task: {} {}",
            verb.name(),
            object.name()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn illegal_combinations_rejected() {
        assert!(Task::gridworld(Verb::Open, Color::Red, ObjectKind::Ball).is_err());
        assert!(Task::gridworld(Verb::Pickup, Color::Red, ObjectKind::Door).is_err());
        assert!(Task::gridworld(Verb::Drop, Color::Red, ObjectKind::Key).is_err());
        assert!(Task::gridworld(Verb::Open, Color::Red, ObjectKind::Door).is_ok());
    }

    #[test]
    fn task_encoding_is_three_one_hots() {
        let t = Task::gridworld(Verb::Pickup, Color::Blue, ObjectKind::Key).unwrap();
        let mut v = Vec::new();
        t.encode_into(&mut v);
        assert_eq!(v.len(), TASK_ENCODING_LEN);
        assert_eq!(v.iter().sum::<f64>(), 3.0);
        assert_eq!(v[2], 1.0);
        assert_eq!(v[3 + 2], 1.0);
        assert_eq!(v[9 + 2], 1.0);
    }
}
