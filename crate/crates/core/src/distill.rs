//! Distillation pathways: bootstrap between advice forms, improvement into an
//! advice-free policy, and off-policy relabeling with hindsight annotations.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advice::{encode_advice, Advice};
use crate::coach::{Coach, CoachConfig};
use crate::env::{EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Policy};
use crate::ledger::{AdviceLedger, Source, SupervisionEvent};
use crate::nnet::{AdamState, LossSpec, PolicyNet, Sample, SparseVec};
use crate::ppo::{Budget, MetricsRow, StopReason};
use crate::trajectory::{Pathway, TrajectoryRecord, TrajectoryStep};

#[derive(Debug, Clone, PartialEq)]
pub struct BufferItem {
    pub sample: Sample,
    pub action: usize,
    pub task_id: String,
}

/// Fixed-capacity FIFO of labelled timesteps.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<BufferItem>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<ReplayBuffer> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::new(),
            inserted: 0,
        })
    }

    pub fn push(&mut self, item: BufferItem) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &BufferItem> {
        self.items.iter()
    }

    /// `min(n, len)` distinct items, uniformly.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<&BufferItem> {
        sample_indices(rng, self.items.len(), n.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Negative log-likelihood steps on uniformly sampled minibatches. Returns
/// the loss before each step.
pub fn bc_update(net: &mut PolicyNet, adam: &mut AdamState, buffer: &ReplayBuffer, batch: usize, steps: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::Collection("behavioural cloning on an empty buffer".into()));
    }
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let items = buffer.sample(rng, batch);
        let inputs: Vec<&Sample> = items.iter().map(|i| &i.sample).collect();
        let actions: Vec<usize> = items.iter().map(|i| i.action).collect();
        let (parts, mut g) = net.loss_and_grad(&inputs, &LossSpec::Bc { actions: &actions }, &vec![1.0; items.len()])?;
        losses.push(parts.total);
        adam.step(net.params_mut(), &mut g)?;
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub step: u32,
    pub advice: Advice,
}

/// Sparse advice attached to a recorded episode. Each annotation governs the
/// steps from its own up to the next annotation's; steps before the first
/// one are ungoverned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub episode_id: String,
    pub annotations: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<()> {
        for w in self.annotations.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Annotation(format!(
                    "episode {}: annotation steps must increase strictly ({} then {})",
                    self.episode_id, w[0].step, w[1].step
                )));
            }
        }
        Ok(())
    }

    /// The advice in force at step `t`, aged by the steps since it was given.
    pub fn governing(&self, t: u32) -> Option<Advice> {
        let i = self.annotations.partition_point(|a| a.step <= t);
        (i > 0).then(|| {
            let a = &self.annotations[i - 1];
            a.advice.aged(t - a.step)
        })
    }

    pub fn read(path: &Path) -> Result<AnnotationSet> {
        let set: AnnotationSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        set.validate()?;
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub buffer_capacity: usize,
    pub batch: usize,
    /// BC steps after each collection round.
    pub bc_steps: usize,
    pub episodes_per_round: usize,
    /// Keep only successful episodes during improvement.
    pub success_only: bool,
    /// Start the new surrogate from the old one's body weights (bootstrap).
    pub warm_start: bool,
    /// Act greedily rather than sampling while collecting.
    pub greedy_collection: bool,
    /// Evaluate every this many rounds.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub lr: f64,
    /// Optional self-distillation of the surrogate on the test env before
    /// improvement, capped at 4000 samples.
    pub finetune_samples: Option<usize>,
    /// Off-policy rounds start from an empty buffer instead of keeping
    /// earlier relabels.
    pub fresh_buffer_per_round: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            buffer_capacity: 1_000_000,
            batch: 512,
            bc_steps: 100,
            episodes_per_round: 10,
            success_only: true,
            warm_start: true,
            greedy_collection: false,
            eval_every: 5,
            eval_episodes: 100,
            lr: 1e-3,
            finetune_samples: None,
            fresh_buffer_per_round: false,
        }
    }
}

pub const FINETUNE_CAP: usize = 4000;

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0 || self.batch == 0 || self.episodes_per_round == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config(
                "distill.buffer_capacity, batch, episodes_per_round, eval_every and eval_episodes must be positive".into(),
            ));
        }
        if self.finetune_samples.is_some_and(|n| n > FINETUNE_CAP) {
            return Err(Error::Config(format!("distill.finetune_samples is capped at {FINETUNE_CAP}")));
        }
        Ok(())
    }
}

/// What a distillation pathway produced.
#[derive(Debug, Clone)]
pub struct DistillOutcome {
    /// Parameters with the best eval success seen.
    pub net: PolicyNet,
    pub last: PolicyNet,
    pub best_success: f64,
    pub metrics: Vec<MetricsRow>,
    pub stop: StopReason,
    /// Episodes whose steps were inserted into the buffer.
    pub episodes: Vec<TrajectoryRecord>,
    /// Hindsight annotations (relabeling only).
    pub annotations: Vec<AnnotationSet>,
}

struct Lane {
    env: EnvState,
    low: Option<Coach>,
    high: Option<Coach>,
    rec: TrajectoryRecord,
}

/// Lockstep rollouts of `net`. The network sees `low`'s advice (zeros when
/// there is no low coach); `high`'s advice is only stamped. Fresh emissions
/// of both coaches and all env steps are charged.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    net: &PolicyNet,
    env_cfg: &EnvConfig,
    low: Option<&CoachConfig>,
    high: Option<&CoachConfig>,
    n_episodes: usize,
    greedy: bool,
    pathway: Pathway,
    rng: &mut ChaCha8Rng,
    ledger: &mut AdviceLedger,
) -> Result<Vec<TrajectoryRecord>> {
    let n_actions = env_cfg.n_actions();
    let mut lanes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let seed = rng.random::<u32>() as u64;
        let env = env_cfg.reset(seed)?;
        let low = low.map(|c| Coach::new(c.clone(), env_cfg.kind, rng.random())).transpose()?;
        let high = high.map(|c| Coach::new(c.clone(), env_cfg.kind, rng.random())).transpose()?;
        lanes.push(Lane {
            rec: TrajectoryRecord {
                episode_id: format!("{}-{seed}", serde_json::to_value(pathway)?.as_str().unwrap_or("episode")),
                task: env.task(),
                env: env_cfg.kind,
                seed,
                success: false,
                pathway,
                steps: Vec::new(),
            },
            env,
            low,
            high,
        });
    }
    loop {
        let live: Vec<usize> = (0..lanes.len()).filter(|&i| !lanes[i].env.is_done()).collect();
        if live.is_empty() {
            break;
        }
        let mut samples = Vec::with_capacity(live.len());
        let mut stamps = Vec::with_capacity(live.len());
        for &i in &live {
            let lane = &mut lanes[i];
            let mut issue = |c: &mut Option<Coach>| -> Result<Option<Advice>> {
                Ok(match c {
                    Some(c) => {
                        let is = c.advise(&lane.env)?;
                        if is.fresh {
                            ledger.charge(is.advice.form(), ledger.env_steps);
                        }
                        Some(is.advice)
                    }
                    None => None,
                })
            };
            let a_low = issue(&mut lane.low)?;
            let a_high = issue(&mut lane.high)?;
            let obs = lane.env.obs();
            samples.push(Sample::new(&obs, &encode_advice(a_low.as_ref(), n_actions)?));
            stamps.push((obs, a_low, a_high));
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        let outs = net.forward_batch(&refs)?;
        for ((&i, o), (obs, a_low, a_high)) in live.iter().zip(outs).zip(stamps) {
            let action = if greedy { o.argmax() } else { o.sample(rng) };
            let lane = &mut lanes[i];
            let out = lane.env.step(action)?;
            ledger.add_env_steps(1);
            lane.rec.success |= out.success;
            lane.rec.steps.push(TrajectoryStep {
                t: lane.rec.steps.len() as u32,
                obs,
                state: serde_json::Value::Null,
                action,
                reward: out.reward,
                advice_low: a_low,
                advice_high: a_high,
                done: out.done(),
            });
        }
    }
    Ok(lanes.into_iter().map(|l| l.rec).collect())
}

#[derive(Debug, Clone)]
pub struct Collected {
    /// Returned episodes (successes only when filtering).
    pub episodes: Vec<TrajectoryRecord>,
    pub attempted: usize,
    pub successes: usize,
}

/// Rollouts of a grounded surrogate conditioned on `low`, with `high`
/// stamped alongside. Supervision spent on discarded episodes still counts.
#[allow(clippy::too_many_arguments)]
pub fn collect_coached(
    surrogate: &PolicyNet,
    env_cfg: &EnvConfig,
    low: &CoachConfig,
    high: Option<&CoachConfig>,
    n_episodes: usize,
    success_only: bool,
    greedy: bool,
    pathway: Pathway,
    rng: &mut ChaCha8Rng,
    ledger: &mut AdviceLedger,
) -> Result<Collected> {
    if n_episodes == 0 {
        return Ok(Collected {
            episodes: Vec::new(),
            attempted: 0,
            successes: 0,
        });
    }
    let eps = rollout(surrogate, env_cfg, Some(low), high, n_episodes, greedy, pathway, rng, ledger)?;
    let successes = eps.iter().filter(|e| e.success).count();
    if successes == 0 {
        return Err(Error::Collection(format!(
            "surrogate failed all {n_episodes} coached episodes with {} advice",
            low.form
        )));
    }
    let episodes = if success_only { eps.into_iter().filter(|e| e.success).collect() } else { eps };
    Ok(Collected {
        episodes,
        attempted: n_episodes,
        successes,
    })
}

fn zero_advice(net: &PolicyNet) -> SparseVec {
    SparseVec::zeros(net.config().advice_dim)
}

fn obs_sample(obs: &[f64], advice: SparseVec) -> Sample {
    Sample {
        obs: SparseVec::from_dense(obs),
        advice,
    }
}

/// Inserts advice-free samples for `π`. The zero advice slot is checked,
/// not assumed.
fn push_advice_free(buffer: &mut ReplayBuffer, pi: &PolicyNet, rec: &TrajectoryRecord, label: impl Fn(usize, &TrajectoryStep) -> usize) {
    assert!(pi.config().advice_free, "improvement target must be advice-free");
    for (t, s) in rec.steps.iter().enumerate() {
        let sample = obs_sample(&s.obs, zero_advice(pi));
        assert!(sample.advice.is_zero(), "advice-free policy fed non-zero advice");
        buffer.push(BufferItem {
            sample,
            action: label(t, s),
            task_id: rec.task.task_id.clone(),
        });
    }
}

struct Tracker<'a> {
    start: AdviceLedger,
    budget: Budget,
    stop_at: Option<f64>,
    best: (f64, PolicyNet),
    metrics: Vec<MetricsRow>,
    progress: &'a mut dyn FnMut(&MetricsRow),
}

impl Tracker<'_> {
    /// Records a round; returns a stop reason when the phase should end.
    fn round(&mut self, round: usize, ledger: &AdviceLedger, mean_reward: f64, eval: Option<(&PolicyNet, f64)>) -> Option<StopReason> {
        let success_rate = eval.map(|(net, s)| {
            if s >= self.best.0 {
                self.best = (s, net.clone());
            }
            s
        });
        let row = MetricsRow {
            update: round,
            env_steps: ledger.env_steps,
            advice_units: ledger.total_units,
            success_rate,
            mean_reward,
        };
        (self.progress)(&row);
        self.metrics.push(row);
        if let (Some(t), Some(s)) = (self.stop_at, success_rate) {
            if s >= t {
                return Some(StopReason::TargetReached);
            }
        }
        self.budget.check(&self.start, ledger)
    }
}

fn mean_step_reward(eps: &[TrajectoryRecord]) -> f64 {
    let n: usize = eps.iter().map(|e| e.steps.len()).sum();
    if n == 0 {
        0.0
    } else {
        eps.iter().map(|e| e.total_reward()).sum::<f64>() / n as f64
    }
}

/// Shared knobs for one distillation phase.
pub struct PhaseSpec<'a> {
    pub env: &'a EnvConfig,
    pub cfg: &'a DistillConfig,
    pub budget: Budget,
    pub stop_at_success: Option<f64>,
    pub seed: u64,
}

impl<'a> PhaseSpec<'a> {
    pub fn new(env: &'a EnvConfig, cfg: &'a DistillConfig, budget: Budget, seed: u64) -> Self {
        PhaseSpec {
            env,
            cfg,
            budget,
            stop_at_success: None,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        self.cfg.validate()?;
        if !self.budget.is_bounded() && self.stop_at_success.is_none() {
            return Err(Error::Config("distillation needs an env-step or advice-unit budget".into()));
        }
        Ok(())
    }

    fn should_eval(&self, round: usize) -> bool {
        round.is_multiple_of(self.cfg.eval_every)
    }
}

fn check_forms(low: &CoachConfig, high: &CoachConfig, env: &EnvConfig) -> Result<()> {
    low.validate(env.kind)?;
    high.validate(env.kind)?;
    if low.form == high.form {
        return Err(Error::Config(format!("bootstrap needs two different advice forms, got {} twice", low.form)));
    }
    Ok(())
}

/// Grounds `high` by cloning `q_low`'s behaviour under `low` advice, with the
/// network reading `high` advice instead (input remapping). Labels are the
/// actions `q_low` executed.
pub fn bootstrap_distill(
    q_low: &PolicyNet,
    low: &CoachConfig,
    high: &CoachConfig,
    phase: &PhaseSpec,
    ledger: &mut AdviceLedger,
    progress: &mut dyn FnMut(&MetricsRow),
) -> Result<DistillOutcome> {
    phase.check()?;
    check_forms(low, high, phase.env)?;
    let cfg = phase.cfg;
    let n_actions = phase.env.n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let mut q_high = PolicyNet::new(q_low.config().clone().with_seed(rng.random()));
    if cfg.warm_start {
        q_high.copy_body_from(q_low)?;
    }
    let mut adam = AdamState::new(q_high.n_params()).with_lr(cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut tracker = Tracker {
        start: ledger.clone(),
        budget: phase.budget,
        stop_at: phase.stop_at_success,
        best: (f64::NEG_INFINITY, q_high.clone()),
        metrics: Vec::new(),
        progress,
    };
    let mut kept = Vec::new();
    let mut round = 0;
    let stop = loop {
        round += 1;
        let got = collect_coached(q_low, phase.env, low, Some(high), cfg.episodes_per_round, false, cfg.greedy_collection, Pathway::Bootstrap, &mut rng, ledger)?;
        for rec in &got.episodes {
            for s in &rec.steps {
                let enc = encode_advice(s.advice_high.as_ref(), n_actions)?;
                buffer.push(BufferItem {
                    sample: obs_sample(&s.obs, SparseVec::from_dense(&enc)),
                    action: s.action,
                    task_id: rec.task.task_id.clone(),
                });
            }
        }
        bc_update(&mut q_high, &mut adam, &buffer, cfg.batch, cfg.bc_steps, &mut rng)?;
        let over = phase.budget.check(&tracker.start, ledger).is_some();
        let eval = if phase.should_eval(round) || over {
            let policy = Policy::Net {
                net: &q_high,
                coach: Some(high.clone()),
            };
            Some((&q_high, evaluate(&policy, phase.env, cfg.eval_episodes, phase.seed)?.success_rate))
        } else {
            None
        };
        let reward = mean_step_reward(&got.episodes);
        kept.extend(got.episodes);
        if let Some(s) = tracker.round(round, ledger, reward, eval) {
            break s;
        }
    };
    Ok(DistillOutcome {
        net: tracker.best.1,
        last: q_high,
        best_success: tracker.best.0,
        metrics: tracker.metrics,
        stop,
        episodes: kept,
        annotations: Vec::new(),
    })
}

/// Self-distillation of `q` on coached successes from the test env, capped
/// at [`FINETUNE_CAP`] samples.
fn finetune(q: &mut PolicyNet, coach: &CoachConfig, phase: &PhaseSpec, samples: usize, rng: &mut ChaCha8Rng, ledger: &mut AdviceLedger) -> Result<()> {
    let cfg = phase.cfg;
    let n_actions = phase.env.n_actions();
    let mut buffer = ReplayBuffer::new(samples.max(1))?;
    while (buffer.inserted() as usize) < samples {
        let got = collect_coached(q, phase.env, coach, None, cfg.episodes_per_round, true, cfg.greedy_collection, Pathway::Improvement, rng, ledger)?;
        'outer: for rec in &got.episodes {
            for s in &rec.steps {
                if buffer.inserted() as usize >= samples {
                    break 'outer;
                }
                let enc = encode_advice(s.advice_low.as_ref(), n_actions)?;
                buffer.push(BufferItem {
                    sample: obs_sample(&s.obs, SparseVec::from_dense(&enc)),
                    action: s.action,
                    task_id: rec.task.task_id.clone(),
                });
            }
        }
    }
    let mut adam = AdamState::new(q.n_params()).with_lr(cfg.lr);
    bc_update(q, &mut adam, &buffer, cfg.batch, cfg.bc_steps, rng)?;
    Ok(())
}

/// Distils `q`'s coached behaviour into an advice-free policy `π`, trained
/// on (optionally only successful) episodes with the advice slot zeroed.
pub fn improve(q: &PolicyNet, coach: &CoachConfig, phase: &PhaseSpec, ledger: &mut AdviceLedger, progress: &mut dyn FnMut(&MetricsRow)) -> Result<DistillOutcome> {
    phase.check()?;
    coach.validate(phase.env.kind)?;
    let cfg = phase.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let mut pi = PolicyNet::new(q.config().clone().with_seed(rng.random()).without_advice());
    let mut q = q.clone();
    let start = ledger.clone();
    if let Some(n) = cfg.finetune_samples {
        finetune(&mut q, coach, phase, n, &mut rng, ledger)?;
    }
    let mut adam = AdamState::new(pi.n_params()).with_lr(cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut tracker = Tracker {
        start,
        budget: phase.budget,
        stop_at: phase.stop_at_success,
        best: (f64::NEG_INFINITY, pi.clone()),
        metrics: Vec::new(),
        progress,
    };
    let mut kept = Vec::new();
    let mut round = 0;
    let stop = loop {
        round += 1;
        let got = collect_coached(&q, phase.env, coach, None, cfg.episodes_per_round, cfg.success_only, cfg.greedy_collection, Pathway::Improvement, &mut rng, ledger)?;
        for rec in &got.episodes {
            push_advice_free(&mut buffer, &pi, rec, |_, s| s.action);
        }
        if !buffer.is_empty() {
            bc_update(&mut pi, &mut adam, &buffer, cfg.batch, cfg.bc_steps, &mut rng)?;
        }
        let over = phase.budget.check(&tracker.start, ledger).is_some();
        let eval = if phase.should_eval(round) || over {
            let policy = Policy::Net { net: &pi, coach: None };
            Some((&pi, evaluate(&policy, phase.env, cfg.eval_episodes, phase.seed)?.success_rate))
        } else {
            None
        };
        let reward = mean_step_reward(&got.episodes);
        kept.extend(got.episodes);
        if let Some(s) = tracker.round(round, ledger, reward, eval) {
            break s;
        }
    };
    Ok(DistillOutcome {
        net: tracker.best.1,
        last: pi,
        best_success: tracker.best.0,
        metrics: tracker.metrics,
        stop,
        episodes: kept,
        annotations: Vec::new(),
    })
}

/// Scripted coach in hindsight mode: replays the recorded actions from the
/// episode seed and records each fresh emission as an annotation.
pub fn annotate_hindsight(env_cfg: &EnvConfig, rec: &TrajectoryRecord, coach_cfg: &CoachConfig, coach_seed: u64) -> Result<AnnotationSet> {
    let mut env = env_cfg.reset(rec.seed)?;
    let mut coach = Coach::new(coach_cfg.clone(), env_cfg.kind, coach_seed)?;
    let mut annotations = Vec::new();
    for s in &rec.steps {
        let is = coach.advise(&env)?;
        if is.fresh {
            annotations.push(Annotation { step: s.t, advice: is.advice });
        }
        env.step(s.action)?;
    }
    Ok(AnnotationSet {
        episode_id: rec.episode_id.clone(),
        annotations,
    })
}

/// `a*_t = argmax q(. | s_t, governing annotation)` for every step an
/// annotation governs.
pub fn relabel(q: &PolicyNet, rec: &TrajectoryRecord, set: &AnnotationSet) -> Result<Vec<(usize, usize)>> {
    set.validate()?;
    let n_actions = q.config().n_actions;
    let mut samples = Vec::new();
    let mut steps = Vec::new();
    for (t, s) in rec.steps.iter().enumerate() {
        if let Some(adv) = set.governing(t as u32) {
            samples.push(Sample::new(&s.obs, &encode_advice(Some(&adv), n_actions)?));
            steps.push(t);
        }
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(steps.into_iter().zip(q.forward_batch(&refs)?).map(|(t, o)| (t, o.argmax())).collect())
}

/// Off-policy state carried across relabeling rounds.
pub struct Relabeler {
    pub pi: PolicyNet,
    adam: AdamState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    batch: usize,
    bc_steps: usize,
    fresh_buffer: bool,
}

impl Relabeler {
    pub fn new(pi: PolicyNet, cfg: &DistillConfig, seed: u64) -> Result<Relabeler> {
        if !pi.config().advice_free {
            return Err(Error::Config("relabeling needs an advice-free policy to improve".into()));
        }
        Ok(Relabeler {
            adam: AdamState::new(pi.n_params()).with_lr(cfg.lr),
            pi,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch: cfg.batch,
            bc_steps: cfg.bc_steps,
            fresh_buffer: cfg.fresh_buffer_per_round,
        })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Charges one unit per annotation, relabels with `q`, and runs BC on π.
    /// A round without annotations changes nothing. Returns the number of
    /// relabeled steps.
    pub fn round(&mut self, q: &PolicyNet, episodes: &[TrajectoryRecord], sets: &[AnnotationSet], source: Source, ledger: &mut AdviceLedger) -> Result<usize> {
        for s in sets {
            s.validate()?;
        }
        if sets.iter().all(|s| s.annotations.is_empty()) {
            return Ok(0);
        }
        if self.fresh_buffer {
            self.buffer.clear();
        }
        let mut n = 0;
        for set in sets {
            let rec = episodes
                .iter()
                .find(|e| e.episode_id == set.episode_id)
                .ok_or_else(|| Error::Annotation(format!("no recorded episode {}", set.episode_id)))?;
            for a in &set.annotations {
                let mut ev = SupervisionEvent::scripted(a.advice.form(), ledger.env_steps);
                ev.source = source;
                ledger.record(ev);
            }
            let labels = relabel(q, rec, set)?;
            for (t, a) in labels {
                let sample = obs_sample(&rec.steps[t].obs, zero_advice(&self.pi));
                assert!(sample.advice.is_zero(), "advice-free policy fed non-zero advice");
                self.buffer.push(BufferItem {
                    sample,
                    action: a,
                    task_id: rec.task.task_id.clone(),
                });
                n += 1;
            }
        }
        bc_update(&mut self.pi, &mut self.adam, &self.buffer, self.batch, self.bc_steps, &mut self.rng)?;
        Ok(n)
    }
}

/// DAgger-style improvement: roll out π without advice, annotate each
/// episode in hindsight with the scripted coach, relabel with `q`, clone.
pub fn relabel_offpolicy(
    pi: Option<PolicyNet>,
    q: &PolicyNet,
    coach: &CoachConfig,
    phase: &PhaseSpec,
    ledger: &mut AdviceLedger,
    progress: &mut dyn FnMut(&MetricsRow),
) -> Result<DistillOutcome> {
    phase.check()?;
    coach.validate(phase.env.kind)?;
    let cfg = phase.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let pi = match pi {
        Some(p) if !p.config().advice_free => {
            return Err(Error::Config("relabeling needs an advice-free policy to improve".into()));
        }
        Some(p) => p,
        None => PolicyNet::new(q.config().clone().with_seed(rng.random()).without_advice()),
    };
    let mut rl = Relabeler::new(pi, cfg, rng.random())?;
    let mut tracker = Tracker {
        start: ledger.clone(),
        budget: phase.budget,
        stop_at: phase.stop_at_success,
        best: (f64::NEG_INFINITY, rl.pi.clone()),
        metrics: Vec::new(),
        progress,
    };
    let mut kept = Vec::new();
    let mut all_sets = Vec::new();
    let mut round = 0;
    let stop = loop {
        round += 1;
        let eps = rollout(&rl.pi, phase.env, None, None, cfg.episodes_per_round, cfg.greedy_collection, Pathway::Relabel, &mut rng, ledger)?;
        let sets = eps
            .iter()
            .map(|e| annotate_hindsight(phase.env, e, coach, rng.random()))
            .collect::<Result<Vec<_>>>()?;
        rl.round(q, &eps, &sets, Source::Scripted, ledger)?;
        let over = phase.budget.check(&tracker.start, ledger).is_some();
        let eval = if phase.should_eval(round) || over {
            let policy = Policy::Net { net: &rl.pi, coach: None };
            Some((&rl.pi, evaluate(&policy, phase.env, cfg.eval_episodes, phase.seed)?.success_rate))
        } else {
            None
        };
        let reward = mean_step_reward(&eps);
        kept.extend(eps);
        all_sets.extend(sets);
        if let Some(s) = tracker.round(round, ledger, reward, eval) {
            break s;
        }
    };
    Ok(DistillOutcome {
        net: tracker.best.1,
        last: rl.pi,
        best_success: tracker.best.0,
        metrics: tracker.metrics,
        stop,
        episodes: kept,
        annotations: all_sets,
    })
}
