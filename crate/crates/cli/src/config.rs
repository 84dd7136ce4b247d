use std::path::{Path, PathBuf};

use advice_loop::advice::AdviceForm;
use advice_loop::coach::CoachConfig;
use advice_loop::distill::DistillConfig;
use advice_loop::env::EnvConfig;
use advice_loop::ppo::{Budget, PpoConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ground,
    Bootstrap,
    Improve,
    Relabel,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ground => "ground",
            Phase::Bootstrap => "bootstrap",
            Phase::Improve => "improve",
            Phase::Relabel => "relabel",
            Phase::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseBudget {
    pub env_steps: Option<u64>,
    pub advice_units: Option<u64>,
    pub stop_at_success: Option<f64>,
}

impl PhaseBudget {
    pub fn budget(&self) -> Budget {
        Budget {
            env_steps: self.env_steps,
            advice_units: self.advice_units,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub ground: PhaseBudget,
    pub bootstrap: PhaseBudget,
    pub improve: PhaseBudget,
    pub relabel: PhaseBudget,
}

impl Budgets {
    pub fn get(&self, phase: Phase) -> &PhaseBudget {
        match phase {
            Phase::Ground => &self.ground,
            Phase::Bootstrap => &self.bootstrap,
            Phase::Improve => &self.improve,
            Phase::Relabel | Phase::Eval => &self.relabel,
        }
    }
}

/// Coaches per phase. `ground` absent means advice-free RL.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Coaches {
    pub ground: Option<CoachConfig>,
    /// Bootstrap target form.
    pub high: Option<CoachConfig>,
    /// Improvement and hindsight-annotation coach.
    pub improve: Option<CoachConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
    /// Held-out environment for improvement, relabeling and evaluation.
    #[serde(default)]
    pub test_env: Option<EnvConfig>,
    #[serde(default)]
    pub coach: Coaches,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub phases: Vec<Phase>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

fn default_eval_episodes() -> usize {
    100
}

/// Problems with the configuration or the files it names (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn test_env(&self) -> &EnvConfig {
        self.test_env.as_ref().unwrap_or(&self.env)
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("experiment")
    }

    fn check_coach(&self, label: &str, coach: &CoachConfig, env: &EnvConfig) -> anyhow::Result<()> {
        coach.validate(env.kind).map_err(|e| config_err(format!("coach.{label}: {e}")))
    }

    fn need<'a>(&self, coach: &'a Option<CoachConfig>, label: &str, phase: Phase) -> anyhow::Result<&'a CoachConfig> {
        coach
            .as_ref()
            .ok_or_else(|| config_err(format!("phase `{}` needs a [coach.{label}] block", phase.as_str())))
    }

    /// Checks everything the listed phases will use.
    pub fn validate(&self, phases: &[Phase]) -> anyhow::Result<()> {
        self.ppo.validate().map_err(|e| config_err(e.to_string()))?;
        self.distill.validate().map_err(|e| config_err(e.to_string()))?;
        if self.eval_episodes == 0 {
            return Err(config_err("eval_episodes must be positive"));
        }
        if let Some(c) = &self.coach.ground {
            self.check_coach("ground", c, &self.env)?;
        }
        if let Some(c) = &self.coach.high {
            self.check_coach("high", c, &self.env)?;
        }
        if let Some(c) = &self.coach.improve {
            self.check_coach("improve", c, self.test_env())?;
        }
        if self.test_env().kind != self.env.kind {
            return Err(config_err("test_env must be the same kind of environment as env"));
        }
        for &phase in phases {
            let b = self.budgets.get(phase);
            if b.env_steps == Some(0) || b.advice_units == Some(0) {
                return Err(config_err(format!("budgets.{}: budgets must be positive", phase.as_str())));
            }
            if phase != Phase::Eval && !b.budget().is_bounded() && b.stop_at_success.is_none() {
                return Err(config_err(format!(
                    "budgets.{} needs env_steps, advice_units or stop_at_success",
                    phase.as_str()
                )));
            }
            match phase {
                Phase::Bootstrap => {
                    let low = self.need(&self.coach.ground, "ground", phase)?;
                    let high = self.need(&self.coach.high, "high", phase)?;
                    if low.form == high.form {
                        return Err(config_err(format!("bootstrap needs two different forms, got {} twice", low.form)));
                    }
                }
                Phase::Improve | Phase::Relabel => {
                    self.need(&self.coach.improve, "improve", phase)?;
                }
                Phase::Ground | Phase::Eval => {}
            }
        }
        Ok(())
    }

    /// Validates `phases` as a pipeline: improvement needs a surrogate
    /// grounded for its form by an earlier phase.
    pub fn validate_pipeline(&self) -> anyhow::Result<()> {
        if self.phases.is_empty() {
            return Err(config_err("`phases` is empty"));
        }
        self.validate(&self.phases)?;
        let mut grounded: Vec<Option<AdviceForm>> = Vec::new();
        for &phase in &self.phases {
            match phase {
                Phase::Ground => grounded.push(self.coach.ground.as_ref().map(|c| c.form)),
                Phase::Bootstrap => {
                    let low = self.coach.ground.as_ref().map(|c| c.form);
                    if !grounded.contains(&low) {
                        return Err(config_err("bootstrap needs an earlier ground phase"));
                    }
                    grounded.push(self.coach.high.as_ref().map(|c| c.form));
                }
                Phase::Improve | Phase::Relabel => {
                    let form = self.coach.improve.as_ref().map(|c| c.form);
                    if !grounded.contains(&form) {
                        return Err(config_err(format!(
                            "{} needs a surrogate grounded for {} advice earlier in `phases`",
                            phase.as_str(),
                            form.map_or("no".into(), |f| f.to_string())
                        )));
                    }
                }
                Phase::Eval => {}
            }
        }
        Ok(())
    }
}
