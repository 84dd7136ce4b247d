//! Grounding-phase PPO over advice-conditioned rollouts.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advice::{advice_width, encode_advice, AdviceForm};
use crate::coach::{Coach, CoachConfig, Reissue};
use crate::env::{EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Policy};
use crate::ledger::{AdviceLedger, SupervisionKind};
use crate::nnet::{save_checkpoint, AdamState, LossSpec, NetConfig, PolicyNet, PpoTerms, Sample};
use crate::pointmaze::RewardMode;
use crate::task::EnvKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub steps_per_update: usize,
    pub batch: usize,
    pub update_epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Discount; `None` picks the per-form default (see [`default_gamma`]).
    pub gamma: Option<f64>,
    pub gae_lambda: f64,
    /// `None` means 0.01 on the pointmaze and 0 on the gridworld.
    pub control_penalty: Option<f64>,
    pub lr: f64,
    pub workers: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            steps_per_update: 800,
            batch: 512,
            update_epochs: 20,
            clip: 0.2,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            gamma: None,
            gae_lambda: 0.95,
            control_penalty: None,
            lr: 1e-3,
            workers: 4,
            eval_every: 10,
            eval_episodes: 100,
            hidden: 128,
            embed: 128,
        }
    }
}

/// 0 for action advice (pure imitation), 0.25 for per-step heading advice,
/// 0.99 otherwise (waypoints, subgoals and the advice-free task reward).
pub fn default_gamma(form: Option<AdviceForm>) -> f64 {
    match form {
        Some(AdviceForm::Action) => 0.0,
        Some(AdviceForm::Direction | AdviceForm::Cardinal) => 0.25,
        _ => 0.99,
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.clip <= 0.0 {
            return bad("ppo.clip must be positive");
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad("ppo.gamma must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("ppo.gae_lambda must lie in [0, 1]");
        }
        if self.workers == 0 || self.steps_per_update < self.workers || self.batch == 0 || self.update_epochs == 0 {
            return bad("ppo.workers, batch and update_epochs must be positive and steps_per_update >= workers");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("ppo.eval_every and ppo.eval_episodes must be positive");
        }
        Ok(())
    }

    pub fn gamma_for(&self, form: Option<AdviceForm>) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(form))
    }

    pub fn control_penalty_for(&self, env: EnvKind) -> f64 {
        self.control_penalty.unwrap_or(match env {
            EnvKind::Pointmaze => 0.01,
            EnvKind::Gridworld => 0.0,
        })
    }

    pub fn net_config(&self, env: &EnvConfig, seed: u64) -> NetConfig {
        NetConfig {
            obs_dim: env.obs_len(),
            advice_dim: advice_width(env.n_actions()),
            n_actions: env.n_actions(),
            embed: self.embed,
            hidden: self.hidden,
            seed,
            advice_free: false,
        }
    }
}

/// `delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, returns = A + V.
/// `values` carries one extra bootstrap entry.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae needs values of length rewards+1 and dones of length rewards (got {n}, {}, {})",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shift to mean 0 and scale to std 1 (eps 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
}

/// Dual budget counted from the start of a phase; the first one exhausted
/// stops it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub env_steps: Option<u64>,
    pub advice_units: Option<u64>,
}

impl Budget {
    pub fn steps(n: u64) -> Budget {
        Budget {
            env_steps: Some(n),
            advice_units: None,
        }
    }

    pub fn units(n: u64) -> Budget {
        Budget {
            env_steps: None,
            advice_units: Some(n),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.env_steps.is_some() || self.advice_units.is_some()
    }

    pub fn check(&self, start: &AdviceLedger, now: &AdviceLedger) -> Option<StopReason> {
        if self.env_steps.is_some_and(|b| now.env_steps - start.env_steps >= b) {
            return Some(StopReason::EnvSteps);
        }
        if self.advice_units.is_some_and(|b| now.total_units - start.total_units >= b) {
            return Some(StopReason::AdviceUnits);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EnvSteps,
    AdviceUnits,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub env_steps: u64,
    pub advice_units: u64,
    /// Greedy eval success; empty on updates without an eval.
    pub success_rate: Option<f64>,
    /// Mean training reward per step in this update's batch.
    pub mean_reward: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// First row whose eval success reaches `threshold`, as (env_steps, advice_units).
pub fn units_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<(u64, u64)> {
    rows.iter()
        .find(|r| r.success_rate.is_some_and(|s| s >= threshold))
        .map(|r| (r.env_steps, r.advice_units))
}

pub struct GroundSpec<'a> {
    pub env: &'a EnvConfig,
    /// Advice shown to the agent and source of the grounding reward; `None`
    /// trains the advice-free baseline on the task reward.
    pub coach: Option<&'a CoachConfig>,
    pub ppo: &'a PpoConfig,
    pub seed: u64,
    pub budget: Budget,
    /// Stop as soon as an eval reaches this success rate.
    pub stop_at_success: Option<f64>,
    /// Start from these parameters instead of a fresh network.
    pub init: Option<PolicyNet>,
    /// Where to write `aborted.bin` if the loss turns non-finite.
    pub abort_dir: Option<PathBuf>,
}

impl<'a> GroundSpec<'a> {
    pub fn new(env: &'a EnvConfig, coach: Option<&'a CoachConfig>, ppo: &'a PpoConfig, seed: u64, budget: Budget) -> Self {
        GroundSpec {
            env,
            coach,
            ppo,
            seed,
            budget,
            stop_at_success: None,
            init: None,
            abort_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundOutcome {
    /// Parameters with the best eval success seen (ties go to the later one).
    pub net: PolicyNet,
    pub last: PolicyNet,
    pub best_success: f64,
    pub metrics: Vec<MetricsRow>,
    pub stop: StopReason,
    /// Largest max |rho - 1| seen on the first minibatch of any update.
    pub first_ratio_dev: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    /// max |rho - 1| on the first minibatch of the first epoch.
    pub first_ratio_dev: f64,
    pub last_loss: f64,
}

struct Step {
    sample: Sample,
    action: usize,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
}

/// One environment instance plus its coach and episode-seed stream.
struct Worker {
    env: EnvState,
    coach: Option<Coach>,
    law: Option<Reissue>,
    rng: ChaCha8Rng,
    /// Observation + advice for the step about to be taken.
    pending: Sample,
}

fn prepare(env: &EnvState, coach: Option<&mut Coach>, n_actions: usize, ledger: &mut AdviceLedger) -> Result<Sample> {
    let advice = match coach {
        Some(c) => {
            let issued = c.advise(env)?;
            if issued.fresh {
                ledger.charge(issued.advice.form(), ledger.env_steps);
            }
            Some(issued.advice)
        }
        None => None,
    };
    Ok(Sample::new(&env.obs(), &encode_advice(advice.as_ref(), n_actions)?))
}

impl Worker {
    fn new(spec: &GroundSpec, seed: u64, ledger: &mut AdviceLedger) -> Result<Worker> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = spec.env.reset(rng.random::<u32>() as u64)?;
        let mut coach = spec.coach.map(|c| Coach::new(c.clone(), spec.env.kind, rng.random())).transpose()?;
        let pending = prepare(&env, coach.as_mut(), spec.env.n_actions(), ledger)?;
        Ok(Worker {
            law: spec.coach.map(|c| c.reissue_law(spec.env.kind)),
            env,
            coach,
            rng,
            pending,
        })
    }

    /// Steps the env with `action`, charges supervision, and prepares the
    /// next input. Returns (reward, done).
    fn advance(&mut self, spec: &GroundSpec, action: usize, ledger: &mut AdviceLedger) -> Result<(f64, bool)> {
        let out = self.env.step(action)?;
        ledger.add_env_steps(1);
        let at = ledger.env_steps;
        let reward = match &mut self.coach {
            Some(c) => {
                let r = c.grounding_reward(action, &self.env, &out);
                let shaped = if out.success { r - spec.env.success_bonus() } else { r };
                if self.law == Some(Reissue::EveryStep) {
                    ledger.charge(SupervisionKind::DenseReward, at);
                } else if shaped != 0.0 {
                    ledger.charge(SupervisionKind::SemisparseReward, at);
                }
                r
            }
            None => {
                if spec.env.kind == EnvKind::Pointmaze {
                    match spec.env.point.reward {
                        RewardMode::Dense => ledger.charge(SupervisionKind::DenseReward, at),
                        RewardMode::Semisparse if out.waypoints_entered > 0 => ledger.charge(SupervisionKind::SemisparseReward, at),
                        RewardMode::Semisparse => {}
                    }
                }
                out.reward
            }
        };
        let done = out.done();
        if done {
            ledger.charge(SupervisionKind::SuccessSignal, at);
            self.env = spec.env.reset(self.rng.random::<u32>() as u64)?;
            if let Some(c) = &mut self.coach {
                c.reset();
            }
        }
        self.pending = prepare(&self.env, self.coach.as_mut(), spec.env.n_actions(), ledger)?;
        Ok((reward, done))
    }
}

/// PPO loop: collect `steps_per_update` steps across lockstep workers,
/// compute GAE per worker, then `update_epochs` passes of shuffled
/// minibatches. Evaluates every `eval_every` updates and at the end.
pub fn ground(spec: GroundSpec, ledger: &mut AdviceLedger) -> Result<GroundOutcome> {
    ground_with_progress(spec, ledger, &mut |_| {})
}

pub fn ground_with_progress(spec: GroundSpec, ledger: &mut AdviceLedger, progress: &mut dyn FnMut(&MetricsRow)) -> Result<GroundOutcome> {
    let ppo = spec.ppo;
    ppo.validate()?;
    if let Some(c) = spec.coach {
        c.validate(spec.env.kind)?;
    }
    if !spec.budget.is_bounded() && spec.stop_at_success.is_none() {
        return Err(Error::Config("grounding needs an env-step or advice-unit budget".into()));
    }
    let form = spec.coach.map(|c| c.form);
    let gamma = ppo.gamma_for(form);
    let terms = PpoTerms {
        clip: ppo.clip,
        value_coef: ppo.value_coef,
        entropy_coef: ppo.entropy_coef,
        control_penalty: ppo.control_penalty_for(spec.env.kind),
    };
    let magnitudes = spec.env.action_magnitudes();
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let net_seed = master.random();
    let mut net = match &spec.init {
        Some(n) => {
            if n.config().obs_dim != spec.env.obs_len() || n.config().n_actions != spec.env.n_actions() {
                return Err(Error::Shape("initial network does not fit the environment".into()));
            }
            n.clone()
        }
        None => PolicyNet::new(ppo.net_config(spec.env, net_seed)),
    };
    let mut adam = AdamState::new(net.n_params()).with_lr(ppo.lr);
    let start = ledger.clone();
    let mut workers = (0..ppo.workers)
        .map(|_| {
            let s = master.random();
            Worker::new(&spec, s, ledger)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_worker = ppo.steps_per_update / ppo.workers;
    let eval_coach = spec.coach.cloned();

    let mut metrics = Vec::new();
    let mut best = (f64::NEG_INFINITY, net.clone());
    let mut update = 0;
    let mut first_ratio_dev: f64 = 0.0;
    let stop = loop {
        update += 1;
        // collect
        let mut traj: Vec<Vec<Step>> = (0..workers.len()).map(|_| Vec::with_capacity(per_worker)).collect();
        for _ in 0..per_worker {
            let refs: Vec<&Sample> = workers.iter().map(|w| &w.pending).collect();
            let outs = net.forward_batch(&refs)?;
            for (wi, (w, o)) in workers.iter_mut().zip(outs).enumerate() {
                let action = o.sample(&mut w.rng);
                let sample = w.pending.clone();
                let (reward, done) = w.advance(&spec, action, ledger)?;
                traj[wi].push(Step {
                    sample,
                    action,
                    log_prob: o.log_probs[action],
                    value: o.value,
                    reward,
                    done,
                });
            }
        }
        let refs: Vec<&Sample> = workers.iter().map(|w| &w.pending).collect();
        let boot = net.forward_batch(&refs)?;

        let mut steps = Vec::with_capacity(per_worker * workers.len());
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for (t, b) in traj.into_iter().zip(boot) {
            let rewards: Vec<f64> = t.iter().map(|s| s.reward).collect();
            let mut values: Vec<f64> = t.iter().map(|s| s.value).collect();
            values.push(b.value);
            let dones: Vec<bool> = t.iter().map(|s| s.done).collect();
            let (a, r) = compute_gae(&rewards, &values, &dones, gamma, ppo.gae_lambda)?;
            advantages.extend(a);
            returns.extend(r);
            steps.extend(t);
        }
        normalize_advantages(&mut advantages);
        let mean_reward = steps.iter().map(|s| s.reward).sum::<f64>() / steps.len() as f64;

        match ppo_update(&mut net, &mut adam, &steps, &advantages, &returns, &terms, &magnitudes, ppo, &mut master) {
            Ok(st) => first_ratio_dev = first_ratio_dev.max(st.first_ratio_dev),
            Err(e @ Error::NonFinite(_)) => {
                if let Some(dir) = &spec.abort_dir {
                    save_checkpoint(&net, &dir.join("aborted.bin"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }

        let stop = spec.budget.check(&start, ledger);
        let success_rate = if update % ppo.eval_every == 0 || stop.is_some() {
            let policy = Policy::Net {
                net: &net,
                coach: eval_coach.clone(),
            };
            let r = evaluate(&policy, spec.env, ppo.eval_episodes, spec.seed)?.success_rate;
            if r >= best.0 {
                best = (r, net.clone());
            }
            Some(r)
        } else {
            None
        };
        let row = MetricsRow {
            update,
            env_steps: ledger.env_steps,
            advice_units: ledger.total_units,
            success_rate,
            mean_reward,
        };
        progress(&row);
        metrics.push(row);
        if let (Some(t), Some(s)) = (spec.stop_at_success, success_rate) {
            if s >= t {
                break StopReason::TargetReached;
            }
        }
        if let Some(s) = stop {
            break s;
        }
    };
    Ok(GroundOutcome {
        net: best.1,
        last: net,
        best_success: best.0,
        metrics,
        stop,
        first_ratio_dev,
    })
}

#[allow(clippy::too_many_arguments)]
fn ppo_update(
    net: &mut PolicyNet,
    adam: &mut AdamState,
    steps: &[Step],
    advantages: &[f64],
    returns: &[f64],
    terms: &PpoTerms,
    magnitudes: &[f64],
    ppo: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    let mut idx: Vec<usize> = (0..steps.len()).collect();
    let mut first = true;
    for _ in 0..ppo.update_epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(ppo.batch) {
            let inputs: Vec<&Sample> = chunk.iter().map(|&i| &steps[i].sample).collect();
            let actions: Vec<usize> = chunk.iter().map(|&i| steps[i].action).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| steps[i].log_prob).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let spec = LossSpec::Ppo {
                terms: *terms,
                actions: &actions,
                old_log_probs: &old,
                advantages: &adv,
                returns: &ret,
                magnitudes,
            };
            let (parts, mut g) = net.loss_and_grad(&inputs, &spec, &vec![1.0; chunk.len()])?;
            if first {
                stats.first_ratio_dev = parts.max_ratio_dev;
                first = false;
            }
            stats.last_loss = parts.total;
            adam.step(net.params_mut(), &mut g)?;
        }
    }
    Ok(stats)
}

/// Writes a JSON snapshot of the ledger.
pub fn write_ledger(path: &Path, ledger: &AdviceLedger) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, ledger)?;
    f.write_all(b"\n")?;
    Ok(())
}
