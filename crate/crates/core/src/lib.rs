//! Coaching-augmented reinforcement learning: environments, scripted coaches,
//! advice-conditioned actor-critic training and distillation.

pub mod advice;
pub mod coach;
pub mod distill;
pub mod env;
pub mod error;
pub mod eval;
pub mod gridworld;
pub mod ledger;
pub mod nnet;
pub mod pointmaze;
pub mod ppo;
pub mod search;
pub mod task;
pub mod trajectory;

pub use advice::{advice_width, encode_advice, Advice, AdviceForm, AdviceKind, Cardinal};
pub use error::{Error, Result};
pub use ledger::{AdviceLedger, Source, SupervisionEvent, SupervisionKind};
pub use task::{Color, EnvKind, ObjectKind, Task, TaskSpec, Verb};
