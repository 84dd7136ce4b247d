use ndarray::{Array1, Array2};

use super::{log_softmax, PolicyNet, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoTerms {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub control_penalty: f64,
}

/// Scalar training objective over a batch. Every slice is indexed like the
/// batch inputs.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    /// Clipped surrogate + value MSE - entropy bonus + expected control cost.
    /// `magnitudes[k]` is the squared magnitude of action k.
    Ppo {
        terms: PpoTerms,
        actions: &'a [usize],
        old_log_probs: &'a [f64],
        advantages: &'a [f64],
        returns: &'a [f64],
        magnitudes: &'a [f64],
    },
    /// Negative log-likelihood of the action labels.
    Bc { actions: &'a [usize] },
}

impl LossSpec<'_> {
    fn actions(&self) -> &[usize] {
        match self {
            LossSpec::Ppo { actions, .. } | LossSpec::Bc { actions } => actions,
        }
    }
}

/// Loss value and its components (before coefficients). `max_ratio_dev` is
/// max |rho - 1| over the batch (0 for BC).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub control: f64,
    pub max_ratio_dev: f64,
}

impl PolicyNet {
    pub fn loss(&self, inputs: &[&Sample], spec: &LossSpec, weights: &[f64]) -> Result<LossParts> {
        Ok(self.loss_impl(inputs, spec, weights, false)?.0)
    }

    pub fn loss_and_grad(&self, inputs: &[&Sample], spec: &LossSpec, weights: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        let (parts, g) = self.loss_impl(inputs, spec, weights, true)?;
        Ok((parts, g.expect("gradient requested")))
    }

    fn loss_impl(&self, inputs: &[&Sample], spec: &LossSpec, weights: &[f64], want_grad: bool) -> Result<(LossParts, Option<Vec<f64>>)> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let na = self.cfg.n_actions;
        let check_len = |name: &str, len: usize| {
            if len != n {
                Err(Error::Shape(format!("{name} has {len} entries for a batch of {n}")))
            } else {
                Ok(())
            }
        };
        check_len("weights", weights.len())?;
        check_len("actions", spec.actions().len())?;
        if let Some(&a) = spec.actions().iter().find(|&&a| a >= na) {
            return Err(Error::Shape(format!("action label {a} out of range for {na} actions")));
        }
        if let LossSpec::Ppo { old_log_probs, advantages, returns, magnitudes, .. } = spec {
            check_len("old_log_probs", old_log_probs.len())?;
            check_len("advantages", advantages.len())?;
            check_len("returns", returns.len())?;
            if magnitudes.len() != na {
                return Err(Error::Shape(format!("{} magnitudes for {na} actions", magnitudes.len())));
            }
        }

        let cache = self.forward_cache(inputs)?;
        let inv_n = 1.0 / n as f64;
        let mut parts = LossParts::default();
        let mut dlogits = Array2::zeros((n, na));
        let mut dvalues = Array1::zeros(n);

        for i in 0..n {
            let w = weights[i] * inv_n;
            let logits = cache.logits.row(i).to_vec();
            let lp = log_softmax(&logits);
            let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let a = spec.actions()[i];
            let mut d = dlogits.row_mut(i);
            match spec {
                LossSpec::Bc { .. } => {
                    parts.policy -= w * lp[a];
                    for k in 0..na {
                        d[k] = w * (p[k] - if k == a { 1.0 } else { 0.0 });
                    }
                }
                LossSpec::Ppo { terms, old_log_probs, advantages, returns, magnitudes, .. } => {
                    let ratio = (lp[a] - old_log_probs[i]).exp();
                    if !ratio.is_finite() {
                        return Err(Error::NonFinite("probability ratio".into()));
                    }
                    parts.max_ratio_dev = parts.max_ratio_dev.max((ratio - 1.0).abs());
                    let adv = advantages[i];
                    let s1 = ratio * adv;
                    let s2 = ratio.clamp(1.0 - terms.clip, 1.0 + terms.clip) * adv;
                    parts.policy -= w * s1.min(s2);
                    // d(-min)/d lp[a]; zero when the clipped branch is active
                    let dlp_a = if s1 <= s2 { -w * ratio * adv } else { 0.0 };

                    let ent: f64 = -p.iter().zip(&lp).map(|(pk, lk)| pk * lk).sum::<f64>();
                    parts.entropy += w * ent;
                    let em: f64 = p.iter().zip(*magnitudes).map(|(pk, m)| pk * m).sum();
                    parts.control += w * em;

                    for k in 0..na {
                        let onehot = if k == a { 1.0 } else { 0.0 };
                        let mut g = dlp_a * (onehot - p[k]);
                        g += terms.entropy_coef * w * p[k] * (lp[k] + ent);
                        g += terms.control_penalty * w * p[k] * (magnitudes[k] - em);
                        d[k] = g;
                    }
                    let err = cache.values[i] - returns[i];
                    parts.value += w * err * err;
                    dvalues[i] = terms.value_coef * w * 2.0 * err;
                }
            }
        }
        parts.total = match spec {
            LossSpec::Bc { .. } => parts.policy,
            LossSpec::Ppo { terms, .. } => {
                parts.policy + terms.value_coef * parts.value - terms.entropy_coef * parts.entropy + terms.control_penalty * parts.control
            }
        };
        for (name, v) in [
            ("policy term", parts.policy),
            ("value term", parts.value),
            ("entropy term", parts.entropy),
            ("control term", parts.control),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        let grad = want_grad.then(|| self.backward(inputs, &cache, &dlogits, &dvalues));
        Ok((parts, grad))
    }
}
