//! Instance-wise top-k feature selector.
//!
//! A selector network produces one logit per feature; softmax turns them
//! into importance weights. Training uses a relaxed k-hot mask built as the
//! element-wise maximum of k concrete (Gumbel-Softmax) samples,
//! `c_i = exp((log w_i + g_i) / tau) / sum_l exp((log w_l + g_l) / tau)`.
//! Evaluation uses the exact top-k of the weights.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, Net, NetSpec, Trace};
use crate::error::{dim_mismatch, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub values: Vec<f64>,
    pub hard: bool,
}

impl SelectionMask {
    pub fn ones(n: usize) -> Self {
        SelectionMask { values: vec![1.0; n], hard: true }
    }

    /// k-hot mask over 0-based `indices`.
    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut values = vec![0.0; n];
        for &i in indices {
            values[i] = 1.0;
        }
        SelectionMask { values, hard: true }
    }

    /// 1-based indices of the selected features (entries equal to 1).
    pub fn selected(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn apply_mask(x: &[f64], mask: &SelectionMask) -> Result<Vec<f64>> {
    if x.len() != mask.values.len() {
        return Err(dim_mismatch("selection mask", x.len(), mask.values.len()));
    }
    Ok(x.iter().zip(&mask.values).map(|(a, m)| a * m).collect())
}

/// 0-based indices of the `k` largest values, ties broken by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// 1-based rank of every feature under descending `values` (ties by index).
pub fn ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    for (r, i) in idx.into_iter().enumerate() {
        out[i] = r + 1;
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gumbel perturbations, one row of `n` per relaxed draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub draws: Vec<Vec<f64>>,
}

impl GumbelNoise {
    pub fn zeros(k: usize, n: usize) -> Self {
        GumbelNoise { draws: vec![vec![0.0; n]; k] }
    }

    /// `g = -log(-log(u))`, `u ~ Uniform(0, 1)`.
    pub fn sample(rng: &mut rng::Rng, k: usize, n: usize) -> Self {
        let draws = (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        // open interval (0, 1)
                        let u: f64 = loop {
                            let u: f64 = rng.random();
                            if u > 0.0 {
                                break u;
                            }
                        };
                        -libm::log(-libm::log(u))
                    })
                    .collect()
            })
            .collect();
        GumbelNoise { draws }
    }
}

/// Forward state of one relaxed mask, needed to back-propagate into the
/// selector network.
#[derive(Debug, Clone)]
pub struct RelaxedSample {
    pub mask: SelectionMask,
    trace: Trace,
    /// Concrete samples `c^j`.
    concrete: Vec<Vec<f64>>,
    /// For each feature, the draw attaining the maximum.
    argmax_draw: Vec<usize>,
    tau: f64,
}

impl RelaxedSample {
    /// The `k` concrete draws `c^j`, each summing to one.
    pub fn concrete(&self) -> &[Vec<f64>] {
        &self.concrete
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpreter {
    pub w_net: Net,
    pub k: usize,
    pub tau: f64,
    /// 1-based index of the explained output.
    pub target_index: usize,
    pub n: usize,
}

/// Default selector: two tanh hidden layers of width `4n`, linear head.
pub fn default_selector_spec(n: usize, seed: u64) -> Result<NetSpec> {
    NetSpec::mlp(n, &[4 * n, 4 * n], n, Activation::Tanh, Activation::Identity, seed)
}

impl Interpreter {
    pub fn new(w_net: Net, k: usize, tau: f64, target_index: usize) -> Result<Self> {
        let n = w_net.input_width();
        if w_net.output_width() != n {
            return Err(Error::Config("selector network must map n inputs to n logits".into()));
        }
        if k == 0 || k > n {
            return Err(Error::Config(alloc::format!("k must lie in 1..={n}, got {k}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if target_index == 0 {
            return Err(Error::Config("target index is 1-based".into()));
        }
        Ok(Interpreter { w_net, k, tau, target_index, n })
    }

    pub fn with_default_selector(n: usize, k: usize, tau: f64, target_index: usize, seed: u64) -> Result<Self> {
        Self::new(Net::init(default_selector_spec(n, seed)?)?, k, tau, target_index)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.w_net.forward(x)
    }

    pub fn importance_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn hard_mask(&self, x: &[f64]) -> Result<SelectionMask> {
        let w = self.importance_weights(x)?;
        Ok(SelectionMask::from_indices(self.n, &top_k(&w, self.k)))
    }

    pub fn sample_noise(&self, rng: &mut rng::Rng) -> GumbelNoise {
        GumbelNoise::sample(rng, self.k, self.n)
    }

    pub fn sample_relaxed_mask(&self, x: &[f64], rng: &mut rng::Rng) -> Result<SelectionMask> {
        let noise = self.sample_noise(rng);
        Ok(self.relaxed(x, &noise)?.mask)
    }

    /// Relaxed mask for fixed noise, keeping what the backward pass needs.
    pub fn relaxed(&self, x: &[f64], noise: &GumbelNoise) -> Result<RelaxedSample> {
        self.check(x)?;
        if noise.draws.len() != self.k || noise.draws.iter().any(|g| g.len() != self.n) {
            return Err(Error::InvalidInput("noise shape must be k x n".into()));
        }
        let trace = self.w_net.forward_trace(x)?;
        // log w differs from the logits by a constant, which the softmax drops
        let logits = trace.output();
        let concrete: Vec<Vec<f64>> = noise
            .draws
            .iter()
            .map(|g| {
                let z: Vec<f64> = logits.iter().zip(g).map(|(l, g)| (l + g) / self.tau).collect();
                softmax(&z)
            })
            .collect();
        let mut values = vec![0.0; self.n];
        let mut argmax_draw = vec![0; self.n];
        for i in 0..self.n {
            for (j, c) in concrete.iter().enumerate() {
                if j == 0 || c[i] > values[i] {
                    values[i] = c[i];
                    argmax_draw[i] = j;
                }
            }
        }
        Ok(RelaxedSample {
            mask: SelectionMask { values, hard: false },
            trace,
            concrete,
            argmax_draw,
            tau: self.tau,
        })
    }

    /// Adds `scale * dL/dparams` to `param_grad`, given `dL/dmask`.
    pub fn relaxed_backward(
        &self,
        sample: &RelaxedSample,
        mask_grad: &[f64],
        scale: f64,
        param_grad: &mut [f64],
    ) -> Result<()> {
        if mask_grad.len() != self.n {
            return Err(dim_mismatch("mask gradient", self.n, mask_grad.len()));
        }
        let mut logit_grad = vec![0.0; self.n];
        for (j, c) in sample.concrete.iter().enumerate() {
            let dc: Vec<f64> =
                (0..self.n).map(|i| if sample.argmax_draw[i] == j { mask_grad[i] } else { 0.0 }).collect();
            if dc.iter().all(|&v| v == 0.0) {
                continue;
            }
            let inner: f64 = c.iter().zip(&dc).map(|(a, b)| a * b).sum();
            for l in 0..self.n {
                logit_grad[l] += c[l] * (dc[l] - inner) / sample.tau;
            }
        }
        self.w_net.backward_into(&sample.trace, &logit_grad, scale, param_grad)?;
        Ok(())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(dim_mismatch("interpreter input", self.n, x.len()));
        }
        Ok(())
    }
}
