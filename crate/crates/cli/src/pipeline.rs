use std::fs;
use std::path::{Path, PathBuf};

use advice_loop::advice::AdviceForm;
use advice_loop::coach::CoachConfig;
use advice_loop::distill::{self, DistillOutcome, PhaseSpec};
use advice_loop::env::EnvConfig;
use advice_loop::eval::{evaluate, EvalResult, Policy};
use advice_loop::nnet::{load_checkpoint, save_checkpoint};
use advice_loop::nnet::PolicyNet;
use advice_loop::ppo::{self, units_to_threshold, write_ledger, write_metrics_csv, GroundSpec, MetricsRow, StopReason};
use advice_loop::task::EnvKind;
use advice_loop::trajectory::write_trajectories;
use advice_loop::AdviceLedger;
use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::{config_err, ExperimentConfig, Phase};

pub const THRESHOLDS: [f64; 3] = [0.5, 0.8, 0.9];

/// One line of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub env: EnvKind,
    /// Advice form the phase trained or evaluated against; `None` is advice-free.
    pub form: Option<AdviceForm>,
    pub seed: u64,
    pub best_success: Option<f64>,
    /// Success at the last eval of the phase.
    pub final_success: Option<f64>,
    pub stop: Option<StopReason>,
    /// Consumed by this phase alone.
    pub env_steps: u64,
    pub advice_units: u64,
    /// Phase-local advice units at the first eval reaching each threshold.
    pub units_to: Vec<(f64, Option<u64>)>,
}

pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub ledger: AdviceLedger,
    /// Grounded surrogates by the form they read.
    grounded: Vec<(Option<AdviceForm>, PolicyNet)>,
    /// Latest advice-free student.
    pi: Option<PolicyNet>,
    pub summaries: Vec<PhaseSummary>,
    pub verbose: bool,
}

fn phase_seed(seed: u64, phase: Phase) -> u64 {
    seed.wrapping_mul(16).wrapping_add(phase as u64)
}

pub fn load_net(path: &Path) -> anyhow::Result<PolicyNet> {
    if !path.exists() {
        return Err(config_err(format!("checkpoint {} does not exist", path.display())));
    }
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

pub fn load_ledger(path: &Path) -> anyhow::Result<AdviceLedger> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read ledger {}: {e}", path.display())))?;
    let ledger: AdviceLedger = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if !ledger.is_consistent() {
        return Err(config_err(format!("{}: ledger total does not match its counts", path.display())));
    }
    Ok(ledger)
}

fn check_net_shape(net: &PolicyNet, env: &EnvConfig, what: &str) -> anyhow::Result<()> {
    let c = net.config();
    if c.obs_dim != env.obs_len() || c.n_actions != env.n_actions() {
        return Err(config_err(format!(
            "{what} expects obs {} / actions {}, the {} env has {} / {}",
            c.obs_dim,
            c.n_actions,
            env.kind.as_str(),
            env.obs_len(),
            env.n_actions()
        )));
    }
    Ok(())
}

impl Run {
    pub fn create(cfg: ExperimentConfig, dir: PathBuf, ledger: AdviceLedger) -> anyhow::Result<Run> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let snapshot = toml::to_string_pretty(&cfg).context("serializing config snapshot")?;
        fs::write(dir.join("config.toml"), snapshot)?;
        Ok(Run {
            cfg,
            dir,
            ledger,
            grounded: Vec::new(),
            pi: None,
            summaries: Vec::new(),
            verbose: true,
        })
    }

    /// Registers a surrogate grounded for `form`.
    pub fn add_surrogate(&mut self, form: Option<AdviceForm>, net: PolicyNet) -> anyhow::Result<()> {
        check_net_shape(&net, &self.cfg.env, "surrogate")?;
        if net.config().advice_free && form.is_some() {
            return Err(config_err("surrogate checkpoint is advice-free"));
        }
        self.grounded.retain(|(f, _)| *f != form);
        self.grounded.push((form, net));
        Ok(())
    }

    pub fn set_policy(&mut self, pi: PolicyNet) -> anyhow::Result<()> {
        check_net_shape(&pi, self.cfg.test_env(), "policy")?;
        if !pi.config().advice_free {
            return Err(config_err("policy checkpoint must be advice-free"));
        }
        self.pi = Some(pi);
        Ok(())
    }

    fn surrogate(&self, form: Option<AdviceForm>, phase: Phase) -> anyhow::Result<&PolicyNet> {
        self.grounded.iter().find(|(f, _)| *f == form).map(|(_, n)| n).ok_or_else(|| {
            config_err(format!(
                "{} needs a surrogate grounded for {} advice",
                phase.as_str(),
                form.map_or("no".to_string(), |f| f.to_string())
            ))
        })
    }

    fn coach(&self, phase: Phase) -> anyhow::Result<&CoachConfig> {
        let c = match phase {
            Phase::Bootstrap => self.cfg.coach.high.as_ref(),
            Phase::Improve | Phase::Relabel => self.cfg.coach.improve.as_ref(),
            Phase::Ground | Phase::Eval => self.cfg.coach.ground.as_ref(),
        };
        c.ok_or_else(|| config_err(format!("{} needs a coach", phase.as_str())))
    }

    fn progress(&self, phase: Phase) -> impl FnMut(&MetricsRow) + 'static {
        let verbose = self.verbose;
        move |r: &MetricsRow| {
            if let (true, Some(s)) = (verbose, r.success_rate) {
                eprintln!(
                    "{:<9} update {:>5}  env_steps {:>9}  units {:>9}  success {:.3}",
                    phase.as_str(),
                    r.update,
                    r.env_steps,
                    r.advice_units,
                    s
                );
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn summarize(&mut self, phase: Phase, env: EnvKind, form: Option<AdviceForm>, start: &AdviceLedger, rows: &[MetricsRow], best: f64, stop: StopReason) {
        let units_to = THRESHOLDS
            .iter()
            .map(|&t| (t, units_to_threshold(rows, t).map(|(_, u)| u.saturating_sub(start.total_units))))
            .collect();
        self.summaries.push(PhaseSummary {
            phase,
            env,
            form,
            seed: self.cfg.seed,
            best_success: Some(best),
            final_success: rows.iter().rev().find_map(|r| r.success_rate),
            stop: Some(stop),
            env_steps: self.ledger.env_steps - start.env_steps,
            advice_units: self.ledger.total_units - start.total_units,
            units_to,
        });
    }

    fn write_common(&self, phase: Phase, net: &PolicyNet, rows: &[MetricsRow]) -> anyhow::Result<()> {
        let name = phase.as_str();
        save_checkpoint(net, &self.dir.join("checkpoints").join(format!("{name}.bin")))?;
        write_metrics_csv(&self.dir.join(format!("{name}_metrics.csv")), rows)?;
        write_ledger(&self.dir.join("ledger.json"), &self.ledger)?;
        fs::write(self.dir.join("summary.json"), serde_json::to_string_pretty(&self.summaries)? + "\n")?;
        Ok(())
    }

    fn write_distill(&self, phase: Phase, out: &DistillOutcome) -> anyhow::Result<()> {
        write_trajectories(&self.dir.join(format!("{}_trajectories.jsonl", phase.as_str())), &out.episodes)?;
        if !out.annotations.is_empty() {
            let dir = self.dir.join("annotations");
            fs::create_dir_all(&dir)?;
            for set in &out.annotations {
                set.write(&dir.join(format!("{}.json", set.episode_id)))?;
            }
        }
        self.write_common(phase, &out.net, &out.metrics)
    }

    pub fn run_phase(&mut self, phase: Phase) -> anyhow::Result<()> {
        let seed = phase_seed(self.cfg.seed, phase);
        let budget = self.cfg.budgets.get(phase).clone();
        let start = self.ledger.clone();
        let mut progress = self.progress(phase);
        match phase {
            Phase::Ground => {
                let cfg = self.cfg.clone();
                let mut spec = GroundSpec::new(&cfg.env, cfg.coach.ground.as_ref(), &cfg.ppo, seed, budget.budget());
                spec.stop_at_success = budget.stop_at_success;
                spec.abort_dir = Some(self.dir.join("checkpoints"));
                let out = ppo::ground_with_progress(spec, &mut self.ledger, &mut progress)?;
                let form = cfg.coach.ground.as_ref().map(|c| c.form);
                self.summarize(phase, cfg.env.kind, form, &start, &out.metrics, out.best_success, out.stop);
                self.write_common(phase, &out.net, &out.metrics)?;
                if form.is_none() {
                    self.pi = Some(out.net.clone());
                }
                self.grounded.retain(|(f, _)| *f != form);
                self.grounded.push((form, out.net));
            }
            Phase::Bootstrap => {
                let cfg = self.cfg.clone();
                let low = cfg.coach.ground.as_ref().ok_or_else(|| config_err("bootstrap needs [coach.ground]"))?;
                let high = self.coach(phase)?.clone();
                let q_low = self.surrogate(Some(low.form), phase)?.clone();
                let mut spec = PhaseSpec::new(&cfg.env, &cfg.distill, budget.budget(), seed);
                spec.stop_at_success = budget.stop_at_success;
                let out = distill::bootstrap_distill(&q_low, low, &high, &spec, &mut self.ledger, &mut progress)?;
                self.summarize(phase, cfg.env.kind, Some(high.form), &start, &out.metrics, out.best_success, out.stop);
                self.write_distill(phase, &out)?;
                self.grounded.retain(|(f, _)| *f != Some(high.form));
                self.grounded.push((Some(high.form), out.net));
            }
            Phase::Improve | Phase::Relabel => {
                let cfg = self.cfg.clone();
                let coach = self.coach(phase)?.clone();
                let q = self.surrogate(Some(coach.form), phase)?.clone();
                let mut spec = PhaseSpec::new(cfg.test_env(), &cfg.distill, budget.budget(), seed);
                spec.stop_at_success = budget.stop_at_success;
                let out = if phase == Phase::Improve {
                    distill::improve(&q, &coach, &spec, &mut self.ledger, &mut progress)?
                } else {
                    // Relabeling starts from an earlier student only when one was given explicitly.
                    let init = self.pi.take();
                    distill::relabel_offpolicy(init, &q, &coach, &spec, &mut self.ledger, &mut progress)?
                };
                self.summarize(phase, cfg.test_env().kind, Some(coach.form), &start, &out.metrics, out.best_success, out.stop);
                self.write_distill(phase, &out)?;
                self.pi = Some(out.net);
            }
            Phase::Eval => {
                let r = self.evaluate_latest()?;
                if self.verbose {
                    eprintln!("eval      success {:.3} over {} episodes", r.success_rate, r.episodes);
                }
            }
        }
        Ok(())
    }

    /// Evaluates the advice-free student if there is one, otherwise the
    /// latest grounded surrogate under its own coach.
    fn evaluate_latest(&mut self) -> anyhow::Result<EvalResult> {
        let env = self.cfg.test_env().clone();
        let (policy, form, label) = match (&self.pi, self.grounded.last()) {
            (Some(pi), _) => (
                Policy::Net {
                    net: pi,
                    coach: None,
                },
                None,
                "student",
            ),
            (None, Some((form, net))) => {
                let coach = form.and_then(|f| {
                    [&self.cfg.coach.ground, &self.cfg.coach.high, &self.cfg.coach.improve]
                        .into_iter()
                        .flatten()
                        .find(|c| c.form == f)
                        .cloned()
                });
                (Policy::Net { net, coach }, *form, "surrogate")
            }
            (None, None) => return Err(config_err("eval needs a trained network earlier in `phases`")),
        };
        let r = evaluate(&policy, &env, self.cfg.eval_episodes, self.cfg.seed)?;
        write_eval_csv(&self.dir.join("eval.csv"), label, &r)?;
        self.summaries.push(PhaseSummary {
            phase: Phase::Eval,
            env: env.kind,
            form,
            seed: self.cfg.seed,
            best_success: None,
            final_success: Some(r.success_rate),
            stop: None,
            env_steps: 0,
            advice_units: 0,
            units_to: Vec::new(),
        });
        fs::write(self.dir.join("summary.json"), serde_json::to_string_pretty(&self.summaries)? + "\n")?;
        Ok(r)
    }
}

#[derive(Serialize)]
struct EvalRow<'a> {
    policy: &'a str,
    episodes: usize,
    success_rate: f64,
    mean_steps: f64,
    mean_return: f64,
}

pub fn write_eval_csv(path: &Path, policy: &str, r: &EvalResult) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(EvalRow {
        policy,
        episodes: r.episodes,
        success_rate: r.success_rate,
        mean_steps: r.mean_steps,
        mean_return: r.mean_return,
    })?;
    w.flush()?;
    Ok(())
}
