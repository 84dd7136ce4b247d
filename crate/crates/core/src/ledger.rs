//! Supervision accounting.
//!
//! Units charged:
//! - dense reward: 1 per timestep it is provided
//! - semi-sparse reward: 1 per nonzero emission
//! - advice: 1 per emission, scripted or human
//! - success signal: 1 per episode end
//! - demonstration action: 1 per timestep

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::advice::AdviceForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionKind {
    Action,
    Direction,
    Cardinal,
    Waypoint,
    OffsetWaypoint,
    Subgoal,
    DenseReward,
    SemisparseReward,
    SuccessSignal,
    DemoAction,
}

impl From<AdviceForm> for SupervisionKind {
    fn from(f: AdviceForm) -> Self {
        match f {
            AdviceForm::Action => SupervisionKind::Action,
            AdviceForm::Direction => SupervisionKind::Direction,
            AdviceForm::Cardinal => SupervisionKind::Cardinal,
            AdviceForm::Waypoint => SupervisionKind::Waypoint,
            AdviceForm::OffsetWaypoint => SupervisionKind::OffsetWaypoint,
            AdviceForm::Subgoal => SupervisionKind::Subgoal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Scripted,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionEvent {
    pub kind: SupervisionKind,
    pub count: u64,
    pub step: u64,
    pub source: Source,
}

impl SupervisionEvent {
    pub fn scripted(kind: impl Into<SupervisionKind>, step: u64) -> Self {
        SupervisionEvent {
            kind: kind.into(),
            count: 1,
            step,
            source: Source::Scripted,
        }
    }

    pub fn human(kind: impl Into<SupervisionKind>, step: u64) -> Self {
        SupervisionEvent {
            source: Source::Human,
            ..Self::scripted(kind, step)
        }
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.count = count;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdviceLedger {
    pub counts: BTreeMap<SupervisionKind, u64>,
    pub total_units: u64,
    pub env_steps: u64,
}

impl AdviceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, event: SupervisionEvent) {
        if event.count == 0 {
            return;
        }
        *self.counts.entry(event.kind).or_insert(0) += event.count;
        self.total_units += event.count;
    }

    /// Value-style variant of [`AdviceLedger::record`].
    pub fn recorded(mut self, event: SupervisionEvent) -> Self {
        self.record(event);
        self
    }

    pub fn charge(&mut self, kind: impl Into<SupervisionKind>, step: u64) {
        self.record(SupervisionEvent::scripted(kind, step));
    }

    pub fn add_env_steps(&mut self, n: u64) {
        self.env_steps += n;
    }

    pub fn count(&self, kind: SupervisionKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    /// Units charged to advice forms only (no rewards, success signals or demos).
    pub fn advice_units(&self) -> u64 {
        AdviceForm::ALL
            .iter()
            .map(|&f| self.count(SupervisionKind::from(f)))
            .sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.counts.values().sum::<u64>() == self.total_units
    }
}
