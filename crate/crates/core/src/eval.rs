//! Supervision-free evaluation: greedy rollouts on held-out seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advice::{encode_advice, AdviceKind};
use crate::coach::{expert_action, Coach, CoachConfig, DEFAULT_BETA};
use crate::env::{EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::nnet::{PolicyNet, Sample};

/// Training episode seeds stay below 2^32; evaluation seeds start here.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

pub fn eval_seed(seed: u64, episode: usize) -> u64 {
    EVAL_SEED_BASE + (seed << 20) + episode as u64
}

pub enum Policy<'a> {
    /// Greedy network. With a coach config the advice slot carries that
    /// coach's live advice; without one it is zero.
    Net {
        net: &'a PolicyNet,
        coach: Option<CoachConfig>,
    },
    Expert,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub mean_return: f64,
    /// Fraction of steps whose action matched live action advice (only when
    /// the policy is conditioned on action advice).
    pub advice_agreement: Option<f64>,
}

struct Episode {
    env: EnvState,
    coach: Option<Coach>,
    ret: f64,
    success: bool,
}

/// Runs `n` episodes in lockstep. Nothing is charged to any ledger.
pub fn evaluate(policy: &Policy, env_cfg: &EnvConfig, n: usize, seed: u64) -> Result<EvalResult> {
    if n == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let n_actions = env_cfg.n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = Vec::with_capacity(n);
    for i in 0..n {
        let s = eval_seed(seed, i);
        let coach = match policy {
            Policy::Net { coach: Some(c), .. } => Some(Coach::new(c.clone(), env_cfg.kind, s)?),
            _ => None,
        };
        eps.push(Episode {
            env: env_cfg.reset(s)?,
            coach,
            ret: 0.0,
            success: false,
        });
    }
    let (mut agree, mut advised) = (0usize, 0usize);
    let mut steps_total = 0usize;
    loop {
        let live: Vec<usize> = (0..n).filter(|&i| !eps[i].env.is_done()).collect();
        if live.is_empty() {
            break;
        }
        let actions: Vec<usize> = match policy {
            Policy::Random => live.iter().map(|_| rng.random_range(0..n_actions)).collect(),
            Policy::Expert => live
                .iter()
                .map(|&i| expert_action(&eps[i].env, DEFAULT_BETA))
                .collect::<Result<_>>()?,
            Policy::Net { net, .. } => {
                let mut samples = Vec::with_capacity(live.len());
                let mut advised_action = Vec::with_capacity(live.len());
                for &i in &live {
                    let ep = &mut eps[i];
                    let advice = match &mut ep.coach {
                        Some(c) => Some(c.advise(&ep.env)?.advice),
                        None => None,
                    };
                    advised_action.push(match advice.as_ref().map(|a| &a.kind) {
                        Some(AdviceKind::Action { action_index }) => Some(*action_index),
                        _ => None,
                    });
                    samples.push(Sample::new(&ep.env.obs(), &encode_advice(advice.as_ref(), n_actions)?));
                }
                let refs: Vec<&Sample> = samples.iter().collect();
                let outs = net.forward_batch(&refs)?;
                let acts: Vec<usize> = outs.iter().map(|o| o.argmax()).collect();
                for (a, adv) in acts.iter().zip(&advised_action) {
                    if let Some(adv) = adv {
                        advised += 1;
                        agree += (a == adv) as usize;
                    }
                }
                acts
            }
        };
        for (&i, &a) in live.iter().zip(&actions) {
            let ep = &mut eps[i];
            let out = ep.env.step(a)?;
            ep.ret += out.reward;
            ep.success |= out.success;
            steps_total += 1;
        }
    }
    let nf = n as f64;
    Ok(EvalResult {
        episodes: n,
        success_rate: eps.iter().filter(|e| e.success).count() as f64 / nf,
        mean_steps: steps_total as f64 / nf,
        mean_return: eps.iter().map(|e| e.ret).sum::<f64>() / nf,
        advice_agreement: (advised > 0).then(|| agree as f64 / advised as f64),
    })
}
