//! Advice-conditioned actor-critic MLP with hand-written gradients.
//!
//! Parameters live in one flat `Vec<f64>`. Each layer stores its weight as a
//! row-major `(in, out)` block followed by its bias.

mod adam;
mod checkpoint;
mod loss;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{LossParts, LossSpec, PpoTerms};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub advice_dim: usize,
    pub n_actions: usize,
    pub embed: usize,
    pub hidden: usize,
    pub seed: u64,
    /// The advice input is ignored entirely: whatever arrives in the advice
    /// slot, the network sees zeros.
    #[serde(default)]
    pub advice_free: bool,
}

impl NetConfig {
    pub fn new(obs_dim: usize, advice_dim: usize, n_actions: usize, seed: u64) -> NetConfig {
        NetConfig {
            obs_dim,
            advice_dim,
            n_actions,
            embed: 128,
            hidden: 128,
            seed,
            advice_free: false,
        }
    }

    pub fn without_advice(mut self) -> NetConfig {
        self.advice_free = true;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> NetConfig {
        self.seed = seed;
        self
    }
}

/// One dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Layer {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn end(&self) -> usize {
        self.bias_offset() + self.cols
    }
}

pub const EMBED: usize = 0;
pub const L1: usize = 1;
pub const L2: usize = 2;
pub const ACTOR: usize = 3;
pub const CRITIC: usize = 4;

fn layout(cfg: &NetConfig) -> [Layer; 5] {
    let shapes = [
        ("advice_embed", cfg.advice_dim, cfg.embed),
        ("hidden1", cfg.obs_dim + cfg.embed, cfg.hidden),
        ("hidden2", cfg.hidden, cfg.hidden),
        ("actor", cfg.hidden, cfg.n_actions),
        ("critic", cfg.hidden, 1),
    ];
    let mut off = 0;
    shapes.map(|(name, rows, cols)| {
        let l = Layer {
            name,
            rows,
            cols,
            offset: off,
        };
        off = l.end();
        l
    })
}

/// Sparse input vector (indices ascending).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn from_dense(v: &[f64]) -> SparseVec {
        let mut s = SparseVec {
            dim: v.len(),
            ..Default::default()
        };
        for (i, &x) in v.iter().enumerate() {
            if x != 0.0 {
                s.idx.push(i as u32);
                s.val.push(x);
            }
        }
        s
    }

    pub fn zeros(dim: usize) -> SparseVec {
        SparseVec {
            dim,
            ..Default::default()
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (&i, &x) in self.idx.iter().zip(&self.val) {
            v[i as usize] = x;
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.idx.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().map(|&i| i as usize).zip(self.val.iter().copied())
    }
}

/// Network input: state features plus the raw advice encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: SparseVec,
    pub advice: SparseVec,
}

impl Sample {
    pub fn new(obs: &[f64], advice: &[f64]) -> Sample {
        Sample {
            obs: SparseVec::from_dense(obs),
            advice: SparseVec::from_dense(advice),
        }
    }

    /// Same state with the advice slot zeroed.
    pub fn without_advice(&self) -> Sample {
        Sample {
            obs: self.obs.clone(),
            advice: SparseVec::zeros(self.advice.dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

impl Output {
    pub fn argmax(&self) -> usize {
        argmax(&self.log_probs)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, lp) in self.log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return i;
            }
        }
        self.log_probs.len() - 1
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `logits - logsumexp(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Activations kept from a batched forward pass for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub emb: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    cfg: NetConfig,
    layers: [Layer; 5],
    params: Vec<f64>,
}

impl PolicyNet {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, output heads
    /// scaled by 0.01. Deterministic in `cfg.seed`.
    pub fn new(cfg: NetConfig) -> PolicyNet {
        let layers = layout(&cfg);
        let mut params = vec![0.0; layers[CRITIC].end()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (li, l) in layers.iter().enumerate() {
            let bound = 1.0 / (l.rows.max(1) as f64).sqrt();
            let scale = if li >= ACTOR { 0.01 } else { 1.0 };
            for p in &mut params[l.offset..l.bias_offset()] {
                *p = rng.random_range(-bound..=bound) * scale;
            }
        }
        PolicyNet { cfg, layers, params }
    }

    pub fn from_params(cfg: NetConfig, params: Vec<f64>) -> Result<PolicyNet> {
        let layers = layout(&cfg);
        if params.len() != layers[CRITIC].end() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layers[CRITIC].end(),
                params.len()
            )));
        }
        Ok(PolicyNet { cfg, layers, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[Layer; 5] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let l = self.layers[l];
        ArrayView2::from_shape((l.rows, l.cols), &self.params[l.offset..l.bias_offset()]).expect("layout")
    }

    fn bias(&self, l: usize) -> &[f64] {
        let l = self.layers[l];
        &self.params[l.bias_offset()..l.end()]
    }

    /// Copies every layer except the advice embedding from `other` (shapes
    /// permitting); used to warm-start one surrogate from another.
    pub fn copy_body_from(&mut self, other: &PolicyNet) -> Result<()> {
        for li in [L1, L2, ACTOR, CRITIC] {
            let (a, b) = (self.layers[li], other.layers[li]);
            if (a.rows, a.cols) != (b.rows, b.cols) {
                return Err(Error::Shape(format!("layer {} differs: {}x{} vs {}x{}", a.name, a.rows, a.cols, b.rows, b.cols)));
            }
            self.params[a.offset..a.end()].copy_from_slice(&other.params[b.offset..b.end()]);
        }
        Ok(())
    }

    fn check(&self, s: &Sample) -> Result<()> {
        if s.obs.dim != self.cfg.obs_dim || s.advice.dim != self.cfg.advice_dim {
            return Err(Error::Shape(format!(
                "input widths obs={} advice={} do not match net obs={} advice={}",
                s.obs.dim, s.advice.dim, self.cfg.obs_dim, self.cfg.advice_dim
            )));
        }
        if s.obs.val.iter().chain(&s.advice.val).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Single-sample forward pass on dense inputs.
    pub fn forward(&self, obs: &[f64], advice: &[f64]) -> Result<Output> {
        let s = Sample::new(obs, advice);
        Ok(self.forward_batch(&[&s])?.pop().expect("one output"))
    }

    pub fn forward_batch(&self, inputs: &[&Sample]) -> Result<Vec<Output>> {
        let c = self.forward_cache(inputs)?;
        Ok((0..inputs.len())
            .map(|i| {
                let logits = c.logits.row(i).to_vec();
                Output {
                    log_probs: log_softmax(&logits),
                    logits,
                    value: c.values[i],
                }
            })
            .collect())
    }

    pub(crate) fn forward_cache(&self, inputs: &[&Sample]) -> Result<Cache> {
        for s in inputs {
            self.check(s)?;
        }
        let n = inputs.len();
        let (e, h) = (self.cfg.embed, self.cfg.hidden);
        let we = self.weight(EMBED);
        let w1 = self.weight(L1);
        let (w1_obs, w1_emb) = w1.split_at(Axis(0), self.cfg.obs_dim);

        let mut emb = Array2::zeros((n, e));
        let mut z1 = Array2::zeros((n, h));
        for (i, s) in inputs.iter().enumerate() {
            let mut row = emb.row_mut(i);
            row.assign(&ndarray::aview1(self.bias(EMBED)));
            if !self.cfg.advice_free {
                for (j, v) in s.advice.iter() {
                    row.scaled_add(v, &we.row(j));
                }
            }
            let mut row = z1.row_mut(i);
            row.assign(&ndarray::aview1(self.bias(L1)));
            for (j, v) in s.obs.iter() {
                row.scaled_add(v, &w1_obs.row(j));
            }
        }
        general_mat_mul(1.0, &emb, &w1_emb, 1.0, &mut z1);
        let h1 = z1.mapv_into(f64::tanh);

        let mut z2 = Array2::zeros((n, h));
        z2.rows_mut().into_iter().for_each(|mut r| r.assign(&ndarray::aview1(self.bias(L2))));
        general_mat_mul(1.0, &h1, &self.weight(L2), 1.0, &mut z2);
        let h2 = z2.mapv_into(f64::tanh);

        let mut logits = Array2::zeros((n, self.cfg.n_actions));
        logits.rows_mut().into_iter().for_each(|mut r| r.assign(&ndarray::aview1(self.bias(ACTOR))));
        general_mat_mul(1.0, &h2, &self.weight(ACTOR), 1.0, &mut logits);
        let values = h2.dot(&self.weight(CRITIC)).column(0).mapv(|v| v + self.bias(CRITIC)[0]);
        Ok(Cache {
            emb,
            h1,
            h2,
            logits,
            values,
        })
    }

    /// Backpropagates output gradients (`dlogits`, `dvalues`) through a cached
    /// forward pass, returning the gradient for every parameter.
    pub(crate) fn backward(&self, inputs: &[&Sample], c: &Cache, dlogits: &Array2<f64>, dvalues: &Array1<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];

        let la = self.layers[ACTOR];
        {
            let (wo, bo) = (la.offset, la.bias_offset());
            let mut gw = ArrayViewMut2::from_shape((la.rows, la.cols), &mut g[wo..bo]).expect("layout");
            general_mat_mul(1.0, &c.h2.t(), dlogits, 0.0, &mut gw);
            for (b, s) in g[bo..la.end()].iter_mut().zip(dlogits.sum_axis(Axis(0))) {
                *b = s;
            }
        }
        let lc = self.layers[CRITIC];
        {
            let gw = c.h2.t().dot(dvalues);
            g[lc.offset..lc.bias_offset()].copy_from_slice(gw.as_slice().expect("contiguous"));
            g[lc.bias_offset()] = dvalues.sum();
        }
        let mut dh2 = dlogits.dot(&self.weight(ACTOR).t());
        let wc = self.weight(CRITIC);
        for (mut row, &dv) in dh2.rows_mut().into_iter().zip(dvalues) {
            row.scaled_add(dv, &wc.column(0));
        }
        let dz2 = dh2 * c.h2.mapv(|h| 1.0 - h * h);

        let l2 = self.layers[L2];
        {
            let mut gw = ArrayViewMut2::from_shape((l2.rows, l2.cols), &mut g[l2.offset..l2.bias_offset()]).expect("layout");
            general_mat_mul(1.0, &c.h1.t(), &dz2, 0.0, &mut gw);
            for (b, s) in g[l2.bias_offset()..l2.end()].iter_mut().zip(dz2.sum_axis(Axis(0))) {
                *b = s;
            }
        }
        let dh1 = dz2.dot(&self.weight(L2).t());
        let dz1 = dh1 * c.h1.mapv(|h| 1.0 - h * h);

        let l1 = self.layers[L1];
        let obs_dim = self.cfg.obs_dim;
        {
            let mut gw = ArrayViewMut2::from_shape((l1.rows, l1.cols), &mut g[l1.offset..l1.bias_offset()]).expect("layout");
            let (mut g_obs, mut g_emb) = gw.view_mut().split_at(Axis(0), obs_dim);
            general_mat_mul(1.0, &c.emb.t(), &dz1, 0.0, &mut g_emb);
            for (i, s) in inputs.iter().enumerate() {
                let d = dz1.row(i);
                for (j, v) in s.obs.iter() {
                    g_obs.row_mut(j).scaled_add(v, &d);
                }
            }
            for (b, s) in g[l1.bias_offset()..l1.end()].iter_mut().zip(dz1.sum_axis(Axis(0))) {
                *b = s;
            }
        }
        let w1 = self.weight(L1);
        let demb = dz1.dot(&w1.split_at(Axis(0), obs_dim).1.t());

        let le = self.layers[EMBED];
        {
            let mut gw = ArrayViewMut2::from_shape((le.rows, le.cols), &mut g[le.offset..le.bias_offset()]).expect("layout");
            if !self.cfg.advice_free {
                for (i, s) in inputs.iter().enumerate() {
                    let d = demb.row(i);
                    for (j, v) in s.advice.iter() {
                        gw.row_mut(j).scaled_add(v, &d);
                    }
                }
            }
            for (b, s) in g[le.bias_offset()..le.end()].iter_mut().zip(demb.sum_axis(Axis(0))) {
                *b = s;
            }
        }
        g
    }
}
