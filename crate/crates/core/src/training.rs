//! Hinge losses and the alternating interpreter / energy optimization.
//!
//! Each iteration is one pass over the training rows in mini-batches. For
//! every mini-batch the four updates run once, in order:
//!
//! 1. one gradient step on the selector parameters for the batch-mean
//!    interpreter hinge, evaluated on relaxed masks against the cached
//!    masked predictions `y_tilde`;
//! 2. `y_tilde` is refreshed by querying the black box on hard-masked inputs;
//! 3. `y_prime` is the surrogate's own argmin on those inputs;
//! 4. one gradient step on the surrogate for the batch-mean fine-tuning hinge.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::blackbox::{bits_to_f64, BlackBox, EnergyNet};
use crate::diffnet::{Algorithm, Net, OptimizerState};
use crate::error::{dim_mismatch, Error, Result};
use crate::interpreter::{apply_mask, default_selector_spec, GumbelNoise, Interpreter, SelectionMask};
use crate::rng;
use crate::synth::Dataset;

/// Margin term applied to the target pair `(y_sb_t, y_tilde_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementLoss {
    /// `m * 1[a != b]`.
    ScaledIndicator,
}

impl DisagreementLoss {
    pub fn eval(self, margin: f64, a: u8, b: u8) -> f64 {
        match self {
            DisagreementLoss::ScaledIndicator => {
                if a != b {
                    margin
                } else {
                    0.0
                }
            }
        }
    }
}

/// Which hinge drives the surrogate update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneObjective {
    /// Descend `max{0, E(y') - E(y_tilde) + m'}` literally. Because `y'`
    /// minimizes `E`, this raises the energy of the black-box output.
    Literal,
    /// Descend `max{0, E(y_tilde) - E(y') + m'}`: pull the black-box output
    /// below the surrogate's current argmin.
    Ranking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauSchedule {
    Constant { tau: f64 },
    /// Linear from `start` at the first iteration to `end` at the last.
    Linear { start: f64, end: f64 },
}

impl TauSchedule {
    pub fn at(self, iteration: usize, max_iterations: usize) -> f64 {
        match self {
            TauSchedule::Constant { tau } => tau,
            TauSchedule::Linear { start, end } => {
                if max_iterations <= 1 {
                    end
                } else {
                    let f = iteration as f64 / (max_iterations - 1) as f64;
                    start + (end - start) * f
                }
            }
        }
    }

    pub fn last(self, max_iterations: usize) -> f64 {
        self.at(max_iterations.saturating_sub(1), max_iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Margin `m` of the interpreter hinge.
    pub margin: f64,
    /// Margin `m'` of the surrogate fine-tuning hinge.
    pub margin_prime: f64,
    pub disagreement_loss: DisagreementLoss,
    /// Interpreter step size.
    pub interpreter_lr: f64,
    /// Surrogate step size.
    pub energy_lr: f64,
    pub optimizer: Algorithm,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Relative change of the mean penalty regarded as "no change".
    pub tolerance: f64,
    /// Consecutive unchanged iterations before stopping.
    pub patience: usize,
    pub tau: TauSchedule,
    /// Hidden widths of the selector network; `None` uses the default shape.
    pub selector_hidden: Option<Vec<usize>>,
    pub finetune_objective: FinetuneObjective,
    /// Replace Gumbel noise by zeros (deterministic test hook).
    pub force_zero_gumbel: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            margin: 1.0,
            margin_prime: 1.0,
            disagreement_loss: DisagreementLoss::ScaledIndicator,
            interpreter_lr: 1e-3,
            energy_lr: 1e-4,
            optimizer: Algorithm::adam(),
            batch_size: 128,
            max_iterations: 100,
            tolerance: 1e-3,
            patience: 5,
            tau: TauSchedule::Constant { tau: 0.5 },
            selector_hidden: None,
            finetune_objective: FinetuneObjective::Ranking,
            force_zero_gumbel: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin_prime >= 0.0) {
            return Err(Error::Config("margins must be non-negative".into()));
        }
        if !(self.interpreter_lr > 0.0 && self.energy_lr > 0.0) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        let taus = match self.tau {
            TauSchedule::Constant { tau } => [tau, tau],
            TauSchedule::Linear { start, end } => [start, end],
        };
        if taus.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }

    fn selector(&self, n: usize, k: usize, t: usize) -> Result<Interpreter> {
        let seed = rng::derive_seed(self.seed, &[0x5e1e_c70e]);
        let spec = match &self.selector_hidden {
            None => default_selector_spec(n, seed)?,
            Some(hidden) => crate::diffnet::NetSpec::mlp(
                n,
                hidden,
                n,
                crate::diffnet::Activation::Tanh,
                crate::diffnet::Activation::Identity,
                seed,
            )?,
        };
        Interpreter::new(Net::init(spec)?, k, self.tau.at(0, self.max_iterations), t)
    }
}

/// `y_tilde` with its `t`-th entry (1-based) replaced by `y_sb_t`.
pub fn substitute_target(y_tilde: &[u8], y_sb: &[u8], t: usize) -> Vec<u8> {
    let mut out = y_tilde.to_vec();
    out[t - 1] = y_sb[t - 1];
    out
}

fn check_outputs(esb: &EnergyNet, ys: &[&[u8]], t: Option<usize>) -> Result<()> {
    for y in ys {
        if y.len() != esb.d {
            return Err(dim_mismatch("structured output", esb.d, y.len()));
        }
    }
    if let Some(t) = t {
        if t == 0 || t > esb.d {
            return Err(Error::InvalidInput(alloc::format!("target {t} outside 1..={}", esb.d)));
        }
    }
    Ok(())
}

/// Interpreter hinge
/// `max{0, E(x ⊙ mask, [y_sb_t, y_tilde_-t]) - E(x ⊙ mask, y_tilde) + L(y_sb_t, y_tilde_t)}`.
pub fn interpreter_loss(
    esb: &EnergyNet,
    x: &[f64],
    soft_mask: &SelectionMask,
    y_sb: &[u8],
    y_tilde: &[u8],
    t: usize,
    cfg: &TrainerConfig,
) -> Result<f64> {
    check_outputs(esb, &[y_sb, y_tilde], Some(t))?;
    let xm = apply_mask(x, soft_mask)?;
    let sub = substitute_target(y_tilde, y_sb, t);
    let l = cfg.disagreement_loss.eval(cfg.margin, y_sb[t - 1], y_tilde[t - 1]);
    if sub == y_tilde {
        return Ok(l.max(0.0));
    }
    let inner = esb.energy_bits(&xm, &sub)? - esb.energy_bits(&xm, y_tilde)? + l;
    Ok(inner.max(0.0))
}

/// Value of the interpreter hinge and its gradient with respect to the mask.
pub fn interpreter_loss_grad(
    esb: &EnergyNet,
    x: &[f64],
    mask: &SelectionMask,
    y_sb: &[u8],
    y_tilde: &[u8],
    t: usize,
    cfg: &TrainerConfig,
) -> Result<(f64, Vec<f64>)> {
    check_outputs(esb, &[y_sb, y_tilde], Some(t))?;
    let xm = apply_mask(x, mask)?;
    let sub = substitute_target(y_tilde, y_sb, t);
    let l = cfg.disagreement_loss.eval(cfg.margin, y_sb[t - 1], y_tilde[t - 1]);
    let n = x.len();
    if sub == y_tilde {
        // both energy terms coincide
        return Ok((l.max(0.0), vec![0.0; n]));
    }
    let trace_sub = esb.trace(&xm, &bits_to_f64(&sub))?;
    let trace_tilde = esb.trace(&xm, &bits_to_f64(y_tilde))?;
    let inner = -trace_sub.output()[0] + trace_tilde.output()[0] + l;
    if inner < 0.0 {
        return Ok((0.0, vec![0.0; n]));
    }
    let mut scratch = vec![0.0; esb.net.params.len()];
    let g_sub = esb.energy_backward(&trace_sub, 0.0, &mut scratch)?;
    let g_tilde = esb.energy_backward(&trace_tilde, 0.0, &mut scratch)?;
    let grad = (0..n).map(|i| (g_sub[i] - g_tilde[i]) * x[i]).collect();
    Ok((inner, grad))
}

/// Surrogate fine-tuning hinge `max{0, E(x_m, y') - E(x_m, y_tilde) + m'}`.
pub fn energy_finetune_loss(
    esb: &EnergyNet,
    x_masked: &[f64],
    y_prime: &[u8],
    y_tilde: &[u8],
    m_prime: f64,
) -> Result<f64> {
    check_outputs(esb, &[y_prime, y_tilde], None)?;
    let inner = esb.energy_bits(x_masked, y_prime)? - esb.energy_bits(x_masked, y_tilde)? + m_prime;
    Ok(inner.max(0.0))
}

/// Adds `scale * d(hinge)/d(params)` for the surrogate update selected by
/// `objective` to `param_grad` and returns that hinge's value. The hinge
/// counts as active at exactly zero.
pub fn energy_finetune_grad(
    esb: &EnergyNet,
    x_masked: &[f64],
    y_prime: &[u8],
    y_tilde: &[u8],
    m_prime: f64,
    objective: FinetuneObjective,
    scale: f64,
    param_grad: &mut [f64],
) -> Result<f64> {
    check_outputs(esb, &[y_prime, y_tilde], None)?;
    if y_prime == y_tilde {
        return Ok(m_prime.max(0.0));
    }
    let trace_prime = esb.trace(x_masked, &bits_to_f64(y_prime))?;
    let trace_tilde = esb.trace(x_masked, &bits_to_f64(y_tilde))?;
    let (e_prime, e_tilde) = (-trace_prime.output()[0], -trace_tilde.output()[0]);
    let (up, down, inner) = match objective {
        FinetuneObjective::Literal => (&trace_prime, &trace_tilde, e_prime - e_tilde + m_prime),
        FinetuneObjective::Ranking => (&trace_tilde, &trace_prime, e_tilde - e_prime + m_prime),
    };
    if inner < 0.0 {
        return Ok(0.0);
    }
    esb.energy_backward(up, scale, param_grad)?;
    esb.energy_backward(down, -scale, param_grad)?;
    Ok(inner)
}

/// Exhaustive argmin of the surrogate, lexicographic tie-break.
pub fn infer_surrogate_argmin(esb: &EnergyNet, x_masked: &[f64]) -> Result<Vec<u8>> {
    esb.argmin(x_masked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_penalty: f64,
    pub mean_finetune_loss: f64,
    /// Fraction of rows with `y_tilde_t == y_sb_t` after the iteration.
    pub target_agreement: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub interpreter: Interpreter,
    pub energy: EnergyNet,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn penalty_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.mean_penalty).collect()
    }
}

pub fn train_interpreter<B: BlackBox + ?Sized>(
    bb: &B,
    esb0: EnergyNet,
    data: &Dataset,
    t: usize,
    k: usize,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    train_interpreter_observed(bb, esb0, data, t, k, cfg, &mut |_| {})
}

/// [`train_interpreter`] with a callback after every iteration.
pub fn train_interpreter_observed<B: BlackBox + ?Sized>(
    bb: &B,
    esb0: EnergyNet,
    data: &Dataset,
    t: usize,
    k: usize,
    cfg: &TrainerConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n, d) = (bb.input_dim(), bb.output_dim());
    if data.n != n {
        return Err(dim_mismatch("dataset width", n, data.n));
    }
    if esb0.n != n || esb0.d != d {
        return Err(Error::Config("surrogate energy shape does not match the black box".into()));
    }
    if t == 0 || t > d {
        return Err(Error::Config(alloc::format!("target index {t} outside 1..={d}")));
    }
    if k == 0 || k > n {
        return Err(Error::Config(alloc::format!("k must lie in 1..={n}, got {k}")));
    }

    let mut interp = cfg.selector(n, k, t)?;
    let mut energy = esb0;
    let mut interp_opt = OptimizerState::new(cfg.optimizer, cfg.interpreter_lr, interp.w_net.params.len())?;
    let mut energy_opt = OptimizerState::new(cfg.optimizer, cfg.energy_lr, energy.net.params.len())?;
    let mut interp_grad = vec![0.0; interp.w_net.params.len()];
    let mut energy_grad = vec![0.0; energy.net.params.len()];

    let noise_for = |interp: &Interpreter, iteration: usize, i: usize| -> GumbelNoise {
        if cfg.force_zero_gumbel {
            GumbelNoise::zeros(k, n)
        } else {
            interp.sample_noise(&mut rng::keyed(cfg.seed, &[0x6a3b, iteration as u64, i as u64]))
        }
    };

    let rows = data.len();
    let y_sb: Vec<Vec<u8>> = data.inputs.iter().map(|x| bb.predict(x)).collect::<Result<_>>()?;
    let mut y_tilde: Vec<Vec<u8>> = data
        .inputs
        .iter()
        .map(|x| bb.predict_masked(x, &interp.hard_mask(x)?.values))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..rows).collect();
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut calm = 0usize;
    let mut converged = false;

    for iteration in 0..cfg.max_iterations {
        interp.tau = cfg.tau.at(iteration, cfg.max_iterations);
        order.shuffle(&mut rng::keyed(cfg.seed, &[0x0d3e, iteration as u64]));
        let (mut penalty_sum, mut finetune_sum) = (0.0, 0.0);

        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;

            interp_grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &data.inputs[i];
                let sample = interp.relaxed(x, &noise_for(&interp, iteration, i))?;
                let (loss, mask_grad) =
                    interpreter_loss_grad(&energy, x, &sample.mask, &y_sb[i], &y_tilde[i], t, cfg)?;
                penalty_sum += loss;
                if mask_grad.iter().any(|&g| g != 0.0) {
                    interp.relaxed_backward(&sample, &mask_grad, scale, &mut interp_grad)?;
                }
            }
            interp_opt.step(&mut interp.w_net, &interp_grad).map_err(|e| diverged(e, iteration))?;

            energy_grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &data.inputs[i];
                let hard = interp.hard_mask(x)?;
                y_tilde[i] = bb.predict_masked(x, &hard.values)?;
                let xm = apply_mask(x, &hard)?;
                let y_prime = infer_surrogate_argmin(&energy, &xm)?;
                finetune_sum += energy_finetune_grad(
                    &energy,
                    &xm,
                    &y_prime,
                    &y_tilde[i],
                    cfg.margin_prime,
                    cfg.finetune_objective,
                    scale,
                    &mut energy_grad,
                )?;
            }
            energy_opt.step(&mut energy.net, &energy_grad).map_err(|e| diverged(e, iteration))?;
        }

        let mean_penalty = penalty_sum / rows as f64;
        let mean_finetune_loss = finetune_sum / rows as f64;
        if !mean_penalty.is_finite() || !mean_finetune_loss.is_finite() {
            return Err(Error::Divergence { iteration, reason: "non-finite loss".into() });
        }
        let agree = y_tilde.iter().zip(&y_sb).filter(|(a, b)| a[t - 1] == b[t - 1]).count();
        let record = IterationRecord {
            iteration,
            mean_penalty,
            mean_finetune_loss,
            target_agreement: agree as f64 / rows as f64,
            tau: interp.tau,
        };
        observer(&record);
        if let Some(prev) = history.last() {
            let denom = libm::fabs(prev.mean_penalty).max(1e-12);
            if libm::fabs(mean_penalty - prev.mean_penalty) / denom < cfg.tolerance {
                calm += 1;
            } else {
                calm = 0;
            }
        }
        history.push(record);
        if calm >= cfg.patience {
            converged = true;
            break;
        }
    }

    Ok(TrainOutcome { interpreter: interp, energy, history, converged })
}

fn diverged(e: Error, iteration: usize) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { iteration, reason },
        other => other,
    }
}
