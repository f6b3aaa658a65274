//! Black-box structured predictors and energy networks over `(x, y)`.
//!
//! The interpretation pipeline only ever sees a black box through
//! [`BlackBox::predict`] and [`BlackBox::predict_masked`]. Gradients are
//! taken through [`EnergyNet`] surrogates, never through the black box.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffnet::{sigmoid, Activation, Net, NetSpec, OptimizerState, Trace};
use crate::error::{dim_mismatch, Error, Result};
use crate::rng;
use crate::synth::{brute_force_argmin, sample_input, Dataset, SyntheticEnergy};

/// A structured predictor that can only be queried.
pub trait BlackBox {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<Vec<u8>>;

    /// Prediction on `x ⊙ mask`.
    fn predict_masked(&self, x: &[f64], mask: &[f64]) -> Result<Vec<u8>> {
        if mask.len() != x.len() {
            return Err(dim_mismatch("selection mask", x.len(), mask.len()));
        }
        if mask.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidInput("mask entries must lie in [0, 1]".into()));
        }
        let masked: Vec<f64> = x.iter().zip(mask).map(|(a, b)| a * b).collect();
        self.predict(&masked)
    }
}

impl<B: BlackBox + ?Sized> BlackBox for &B {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn predict(&self, x: &[f64]) -> Result<Vec<u8>> {
        (**self).predict(x)
    }
    fn predict_masked(&self, x: &[f64], mask: &[f64]) -> Result<Vec<u8>> {
        (**self).predict_masked(x, mask)
    }
}

/// Exact inference on one of the analytic energies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBlackBox {
    pub energy: SyntheticEnergy,
    pub n: usize,
}

impl OracleBlackBox {
    pub fn new(energy: SyntheticEnergy, n: usize) -> Result<Self> {
        if n < energy.min_input_dim() {
            return Err(Error::Config(alloc::format!(
                "oracle black box needs at least {} features",
                energy.min_input_dim()
            )));
        }
        Ok(OracleBlackBox { energy, n })
    }
}

impl BlackBox for OracleBlackBox {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.energy.output_dim()
    }
    fn predict(&self, x: &[f64]) -> Result<Vec<u8>> {
        if x.len() != self.n {
            return Err(dim_mismatch("black-box input", self.n, x.len()));
        }
        let (y, _) = brute_force_argmin(self.output_dim(), |y| self.energy.eval_unchecked(x, y))?;
        Ok(y)
    }
}

/// Scalar energy network over the concatenation `[x, y]`.
///
/// The network output `o` is read as the logit of a predicted value in
/// `(0, 1)`; the energy is `-o`, so low energy means high predicted value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyNet {
    pub net: Net,
    pub n: usize,
    pub d: usize,
}

/// Surrogate energy standing in for the black box's structure.
pub type SurrogateEnergy = EnergyNet;

impl EnergyNet {
    pub fn new(net: Net, n: usize, d: usize) -> Result<Self> {
        if net.input_width() != n + d || net.output_width() != 1 {
            return Err(Error::Config(alloc::format!(
                "energy network must map {} inputs to 1 output, got {} -> {}",
                n + d,
                net.input_width(),
                net.output_width()
            )));
        }
        Ok(EnergyNet { net, n, d })
    }

    /// Freshly initialized network with the default architecture: two
    /// softplus hidden layers of width `max(16, 2(n + d))`.
    pub fn with_default_architecture(n: usize, d: usize, seed: u64) -> Result<Self> {
        let width = default_hidden_width(n, d);
        Self::with_architecture(n, d, &[width, width], Activation::Softplus, seed)
    }

    pub fn with_architecture(
        n: usize,
        d: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let spec = NetSpec::mlp(n + d, hidden, 1, activation, Activation::Identity, seed)?;
        Self::new(Net::init(spec)?, n, d)
    }

    fn joint(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(dim_mismatch("energy input", self.n, x.len()));
        }
        if y.len() != self.d {
            return Err(dim_mismatch("energy output", self.d, y.len()));
        }
        let mut v = Vec::with_capacity(self.n + self.d);
        v.extend_from_slice(x);
        v.extend_from_slice(y);
        Ok(v)
    }

    /// Raw network output (value logit).
    pub fn logit(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.joint(x, y)?)?[0])
    }

    pub fn energy(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(-self.logit(x, y)?)
    }

    pub fn energy_bits(&self, x: &[f64], y: &[u8]) -> Result<f64> {
        self.energy(x, &bits_to_f64(y))
    }

    /// Predicted value `sigmoid(logit)`.
    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x, y)?))
    }

    pub fn trace(&self, x: &[f64], y: &[f64]) -> Result<Trace> {
        self.net.forward_trace(&self.joint(x, y)?)
    }

    /// Adds `scale * dE/dparams` into `param_grad` and returns `dE/d[x, y]`.
    pub fn energy_backward(&self, trace: &Trace, scale: f64, param_grad: &mut [f64]) -> Result<Vec<f64>> {
        // E = -o; the input gradient is returned unscaled
        self.net.backward_into(trace, &[-1.0], scale, param_grad)
    }

    /// Exhaustive argmin over binary outputs, lexicographic tie-break.
    pub fn argmin(&self, x: &[f64]) -> Result<Vec<u8>> {
        if x.len() != self.n {
            return Err(dim_mismatch("energy input", self.n, x.len()));
        }
        let mut pf = self.net.with_prefix(x)?;
        let mut yf = vec![0.0; self.d];
        let mut failed = None;
        let (y, _) = brute_force_argmin(self.d, |y| {
            for (slot, &b) in yf.iter_mut().zip(y) {
                *slot = b as f64;
            }
            match pf.forward(&yf) {
                Ok(o) => -o[0],
                Err(e) => {
                    failed = Some(e);
                    f64::INFINITY
                }
            }
        })?;
        match failed {
            Some(e) => Err(e),
            None => Ok(y),
        }
    }
}

pub fn default_hidden_width(n: usize, d: usize) -> usize {
    16.max(2 * (n + d))
}

pub fn bits_to_f64(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&b| b as f64).collect()
}

/// Black box backed by a trained energy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpenBlackBox {
    pub energy: EnergyNet,
}

impl BlackBox for SpenBlackBox {
    fn input_dim(&self) -> usize {
        self.energy.n
    }
    fn output_dim(&self) -> usize {
        self.energy.d
    }
    fn predict(&self, x: &[f64]) -> Result<Vec<u8>> {
        self.energy.argmin(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlackBoxModel {
    Oracle(OracleBlackBox),
    Spen(SpenBlackBox),
}

impl BlackBox for BlackBoxModel {
    fn input_dim(&self) -> usize {
        match self {
            BlackBoxModel::Oracle(b) => b.input_dim(),
            BlackBoxModel::Spen(b) => b.input_dim(),
        }
    }
    fn output_dim(&self) -> usize {
        match self {
            BlackBoxModel::Oracle(b) => b.output_dim(),
            BlackBoxModel::Spen(b) => b.output_dim(),
        }
    }
    fn predict(&self, x: &[f64]) -> Result<Vec<u8>> {
        match self {
            BlackBoxModel::Oracle(b) => b.predict(x),
            BlackBoxModel::Spen(b) => b.predict(x),
        }
    }
}

/// Exposes only output `target` (1-based) of a black box, as a one-output
/// predictor.
#[derive(Debug, Clone, Copy)]
pub struct TargetOnly<B> {
    pub inner: B,
    pub target: usize,
}

impl<B: BlackBox> TargetOnly<B> {
    pub fn new(inner: B, target: usize) -> Result<Self> {
        if target == 0 || target > inner.output_dim() {
            return Err(Error::Config(alloc::format!(
                "target index {target} outside 1..={}",
                inner.output_dim()
            )));
        }
        Ok(TargetOnly { inner, target })
    }
}

impl<B: BlackBox> BlackBox for TargetOnly<B> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn predict(&self, x: &[f64]) -> Result<Vec<u8>> {
        Ok(vec![self.inner.predict(x)?[self.target - 1]])
    }
    fn predict_masked(&self, x: &[f64], mask: &[f64]) -> Result<Vec<u8>> {
        Ok(vec![self.inner.predict_masked(x, mask)?[self.target - 1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueFunction {
    /// `1 - hamming(y, y_true) / d`, with the L1 distance for relaxed outputs.
    NegHamming,
}

impl ValueFunction {
    pub fn value(self, y: &[f64], y_true: &[u8]) -> f64 {
        match self {
            ValueFunction::NegHamming => {
                let dist: f64 = y.iter().zip(y_true).map(|(a, &b)| libm::fabs(a - b as f64)).sum();
                1.0 - dist / y.len() as f64
            }
        }
    }

    /// Gradient of the value with respect to a relaxed `y`.
    fn gradient(self, y: &[f64], y_true: &[u8]) -> Vec<f64> {
        let d = y.len() as f64;
        match self {
            ValueFunction::NegHamming => y
                .iter()
                .zip(y_true)
                .map(|(a, &b)| {
                    let diff = a - b as f64;
                    if diff > 0.0 {
                        -1.0 / d
                    } else if diff < 0.0 {
                        1.0 / d
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpenTrainConfig {
    /// Hidden layer widths; empty selects the default architecture.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub inference: InferenceMode,
    pub value_function: ValueFunction,
    pub ground_truth_ratio: f64,
    pub random_ratio: f64,
    pub adversarial_ratio: f64,
    pub adversarial_steps: usize,
    pub adversarial_step_size: f64,
    /// Inputs drawn by surrogate pre-training.
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for SpenTrainConfig {
    fn default() -> Self {
        SpenTrainConfig {
            hidden: Vec::new(),
            activation: Activation::Softplus,
            epochs: 60,
            batch_size: 32,
            learning_rate: 2e-3,
            inference: InferenceMode::Enumerate,
            value_function: ValueFunction::NegHamming,
            ground_truth_ratio: 0.3,
            random_ratio: 0.4,
            adversarial_ratio: 0.3,
            adversarial_steps: 3,
            adversarial_step_size: 1.0,
            num_samples: 10_000,
            seed: 0,
        }
    }
}

impl SpenTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        let ratios = [self.ground_truth_ratio, self.random_ratio, self.adversarial_ratio];
        if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("sample mix ratios must lie in [0, 1]".into()));
        }
        if libm::fabs(ratios.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(Error::Config("sample mix ratios must sum to 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn build_net(&self, n: usize, d: usize) -> Result<EnergyNet> {
        if self.hidden.is_empty() {
            let w = default_hidden_width(n, d);
            EnergyNet::with_architecture(n, d, &[w, w], self.activation, self.seed)
        } else {
            EnergyNet::with_architecture(n, d, &self.hidden, self.activation, self.seed)
        }
    }
}

/// Result of value-network training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEnergy {
    pub energy: EnergyNet,
    /// Mean squared value error per epoch.
    pub loss_history: Vec<f64>,
}

/// Value-network regression: `sigmoid(o(x, y))` is fit by squared loss to
/// the value of candidate outputs drawn as a mix of ground truth, uniform
/// random outputs and gradient-adversarial relaxed outputs.
pub fn train_value_network(
    inputs: &[Vec<f64>],
    labels: &[Vec<u8>],
    n: usize,
    d: usize,
    cfg: &SpenTrainConfig,
) -> Result<TrainedEnergy> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != inputs.len() {
        return Err(dim_mismatch("labels", inputs.len(), labels.len()));
    }
    let mut energy = cfg.build_net(n, d)?;
    let mut opt = OptimizerState::adam(cfg.learning_rate, energy.net.params.len())?;
    let mut grad = vec![0.0; energy.net.params.len()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::keyed(cfg.seed, &[1, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut sample_rng = rng::keyed(cfg.seed, &[2, epoch as u64, i as u64]);
                let y = draw_candidate(&energy, &inputs[i], &labels[i], cfg, &mut sample_rng)?;
                let target = cfg.value_function.value(&y, &labels[i]);
                let trace = energy.trace(&inputs[i], &y)?;
                let v = sigmoid(trace.output()[0]);
                let err = v - target;
                epoch_loss += err * err;
                let dlogit = 2.0 * err * v * (1.0 - v);
                energy.net.backward_into(&trace, &[dlogit], scale, &mut grad)?;
            }
            opt.step(&mut energy.net, &grad).map_err(|e| at_iteration(e, epoch))?;
        }
        let mean = epoch_loss / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { iteration: epoch, reason: "non-finite loss".into() });
        }
        loss_history.push(mean);
    }
    Ok(TrainedEnergy { energy, loss_history })
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { iteration, reason },
        other => other,
    }
}

fn draw_candidate(
    energy: &EnergyNet,
    x: &[f64],
    y_true: &[u8],
    cfg: &SpenTrainConfig,
    rng: &mut rng::Rng,
) -> Result<Vec<f64>> {
    let u: f64 = rng.random();
    if u < cfg.ground_truth_ratio {
        return Ok(bits_to_f64(y_true));
    }
    if u < cfg.ground_truth_ratio + cfg.random_ratio {
        return Ok((0..energy.d).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect());
    }
    // gradient ascent on the value error, inside the relaxed box [0, 1]^d
    let mut y: Vec<f64> = (0..energy.d).map(|_| rng.random::<f64>()).collect();
    let mut scratch = vec![0.0; energy.net.params.len()];
    for _ in 0..cfg.adversarial_steps {
        let trace = energy.trace(x, &y)?;
        let v = sigmoid(trace.output()[0]);
        let err = v - cfg.value_function.value(&y, y_true);
        let joint_grad = energy.net.backward_into(&trace, &[v * (1.0 - v)], 0.0, &mut scratch)?;
        let value_grad = cfg.value_function.gradient(&y, y_true);
        for j in 0..energy.d {
            let g = 2.0 * err * (joint_grad[energy.n + j] - value_grad[j]);
            y[j] = (y[j] + cfg.adversarial_step_size * g).clamp(0.0, 1.0);
        }
    }
    Ok(y)
}

/// Trains a black-box energy network on labelled data.
pub fn train_spen(data: &Dataset, cfg: &SpenTrainConfig) -> Result<(SpenBlackBox, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let trained = train_value_network(&data.inputs, &data.outputs, data.n, data.d, cfg)?;
    Ok((SpenBlackBox { energy: trained.energy }, trained.loss_history))
}

/// Fits a surrogate energy to the black box's own predictions on
/// `cfg.num_samples` standard-normal inputs drawn from `sampler_seed`.
pub fn pretrain_surrogate<B: BlackBox + ?Sized>(
    bb: &B,
    sampler_seed: u64,
    cfg: &SpenTrainConfig,
) -> Result<TrainedEnergy> {
    if cfg.num_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = bb.input_dim();
    let inputs: Vec<Vec<f64>> =
        (0..cfg.num_samples).map(|i| sample_input(sampler_seed, i as u64, n)).collect();
    let labels = inputs.iter().map(|x| bb.predict(x)).collect::<Result<Vec<_>>>()?;
    train_value_network(&inputs, &labels, n, bb.output_dim(), cfg)
}

/// Fraction of `inputs` on which the energy's argmin reproduces the black box.
pub fn argmin_agreement<B: BlackBox + ?Sized>(
    energy: &EnergyNet,
    bb: &B,
    inputs: &[Vec<f64>],
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for x in inputs {
        if energy.argmin(x)? == bb.predict(x)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.len() as f64)
}

pub fn describe(bb: &BlackBoxModel) -> String {
    match bb {
        BlackBoxModel::Oracle(o) => alloc::format!("oracle({}, n={})", o.energy.name(), o.n),
        BlackBoxModel::Spen(s) => alloc::format!("spen(n={}, d={})", s.energy.n, s.energy.d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_predicts_example() {
        let bb = OracleBlackBox::new(SyntheticEnergy::E1, 5).unwrap();
        assert_eq!(bb.predict(&[1.0, 2.0, 3.0, -1.0, 0.0]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn oracle_e2_all_zero_when_terms_positive() {
        let bb = OracleBlackBox::new(SyntheticEnergy::E2, 5).unwrap();
        assert_eq!(bb.predict(&[0.4, -0.3, 1.5, 0.8, 0.0]).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn masked_prediction() {
        let bb = OracleBlackBox::new(SyntheticEnergy::E1, 5).unwrap();
        let x = [1.0, 2.0, 3.0, -1.0, 0.0];
        assert_eq!(bb.predict_masked(&x, &[1.0; 5]).unwrap(), bb.predict(&x).unwrap());
        assert_eq!(bb.predict_masked(&x, &[0.0; 5]).unwrap(), bb.predict(&[0.0; 5]).unwrap());
        assert_eq!(bb.predict_masked(&x, &[1.0, 1.0, 1.0, 1.0, 0.0]).unwrap(), vec![0, 0]);
        assert!(bb.predict_masked(&x, &[1.0; 4]).is_err());
        assert!(bb.predict_masked(&x, &[1.5, 1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let bb = OracleBlackBox::new(SyntheticEnergy::E1, 5).unwrap();
        assert!(bb.predict(&[0.0; 6]).is_err());
    }

    #[test]
    fn target_only_projection() {
        let bb = OracleBlackBox::new(SyntheticEnergy::E2, 5).unwrap();
        let x = [0.0, 0.0, -2.0, 1.0, 0.0];
        let full = bb.predict(&x).unwrap();
        let proj = TargetOnly::new(bb, 3).unwrap();
        assert_eq!(proj.predict(&x).unwrap(), vec![full[2]]);
        assert!(TargetOnly::new(bb, 5).is_err());
        assert!(TargetOnly::new(bb, 0).is_err());
    }

    #[test]
    fn neg_hamming_value() {
        let vf = ValueFunction::NegHamming;
        assert_eq!(vf.value(&[1.0, 0.0], &[1, 0]), 1.0);
        assert_eq!(vf.value(&[0.0, 0.0], &[1, 0]), 0.5);
        assert_eq!(vf.value(&[0.0, 1.0], &[1, 0]), 0.0);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let data = crate::synth::generate_dataset(&crate::synth::DatasetSpec {
            energy: SyntheticEnergy::E1,
            n: 5,
            num_samples: 20,
            seed: 3,
        })
        .unwrap();
        let cfg = SpenTrainConfig { epochs: 0, seed: 11, ..Default::default() };
        let (bb, losses) = train_spen(&data, &cfg).unwrap();
        assert!(losses.is_empty());
        assert_eq!(bb.energy, EnergyNet::with_default_architecture(5, 2, 11).unwrap());
    }

    #[test]
    fn empty_inputs_rejected() {
        let bb = OracleBlackBox::new(SyntheticEnergy::E1, 5).unwrap();
        let cfg = SpenTrainConfig { num_samples: 0, ..Default::default() };
        assert_eq!(pretrain_surrogate(&bb, 1, &cfg).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SpenTrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.random_ratio = 0.5;
        assert!(cfg.validate().is_err());
        let cfg = SpenTrainConfig { batch_size: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let e = EnergyNet::with_default_architecture(3, 2, 5).unwrap();
        let x = [0.3, -0.8, 1.1];
        let y = [0.2, 0.9];
        let trace = e.trace(&x, &y).unwrap();
        let mut pg = vec![0.0; e.net.params.len()];
        let g = e.energy_backward(&trace, 1.0, &mut pg).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (e.energy(&xp, &y).unwrap() - e.energy(&xm, &y).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }
}
