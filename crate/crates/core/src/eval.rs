//! Selection metrics, baselines and the synthetic benchmark protocol.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::blackbox::{
    pretrain_surrogate, train_spen, BlackBox, BlackBoxModel, EnergyNet, OracleBlackBox, SpenTrainConfig,
    TargetOnly,
};
use crate::error::{Error, Result};
use crate::interpreter::{ranks, top_k, Interpreter, SelectionMask};
use crate::rng;
use crate::synth::{generate_dataset, Dataset, DatasetSpec, SyntheticEnergy};
use crate::training::{train_interpreter, TrainOutcome, TrainerConfig};

/// Anything that scores features per input and extracts a k-hot mask.
pub trait FeatureSelector {
    fn importance_weights(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn hard_mask(&self, x: &[f64]) -> Result<SelectionMask>;
}

impl FeatureSelector for Interpreter {
    fn importance_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        Interpreter::importance_weights(self, x)
    }
    fn hard_mask(&self, x: &[f64]) -> Result<SelectionMask> {
        Interpreter::hard_mask(self, x)
    }
}

/// Uniformly random selector. The scores are a pure function of
/// `(seed, x)`, so each input gets its own random k-subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSelector {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
}

impl RandomSelector {
    fn input_key(x: &[f64]) -> u64 {
        x.iter().fold(0x243F_6A88_85A3_08D3, |h, v| rng::mix64(h ^ v.to_bits()))
    }
}

impl FeatureSelector for RandomSelector {
    fn importance_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(crate::error::dim_mismatch("selector input", self.n, x.len()));
        }
        let mut r = rng::stream(self.seed, Self::input_key(x));
        let raw: Vec<f64> = (0..self.n).map(|_| r.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|v| v / sum).collect())
    }
    fn hard_mask(&self, x: &[f64]) -> Result<SelectionMask> {
        let w = self.importance_weights(x)?;
        Ok(SelectionMask::from_indices(self.n, &top_k(&w, self.k)))
    }
}

fn ground_truth_set(gt: &[usize]) -> Vec<usize> {
    let mut g = gt.to_vec();
    g.sort_unstable();
    g.dedup();
    g
}

/// Fraction of masks whose selected set equals `ground_truth` (1-based).
pub fn selection_accuracy(masks: &[SelectionMask], ground_truth: &[usize]) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::InvalidInput("no masks to score".into()));
    }
    let gt = ground_truth_set(ground_truth);
    let mut hits = 0usize;
    for m in masks {
        let sel = m.selected();
        if !m.hard || sel.len() != gt.len() {
            return Err(Error::Config(alloc::format!(
                "exact-match accuracy needs hard masks with k = {} selections, got {}",
                gt.len(),
                sel.len()
            )));
        }
        if sel == gt {
            hits += 1;
        }
    }
    Ok(hits as f64 / masks.len() as f64)
}

/// Mean of `|selected ∩ ground_truth| / k` over masks.
pub fn feature_precision(masks: &[SelectionMask], ground_truth: &[usize]) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::InvalidInput("no masks to score".into()));
    }
    let gt = ground_truth_set(ground_truth);
    let mut total = 0.0;
    for m in masks {
        let sel = m.selected();
        if sel.is_empty() {
            return Err(Error::InvalidInput("mask selects nothing".into()));
        }
        let hit = sel.iter().filter(|i| gt.binary_search(i).is_ok()).count();
        total += hit as f64 / sel.len() as f64;
    }
    Ok(total / masks.len() as f64)
}

/// Median, over samples and ground-truth features, of each ground-truth
/// feature's rank under descending weight (rank 1 is the largest, ties by
/// lower index). Even counts take the midpoint of the two middle ranks.
pub fn median_rank(weight_vectors: &[Vec<f64>], ground_truth: &[usize]) -> Result<f64> {
    if weight_vectors.is_empty() || ground_truth.is_empty() {
        return Err(Error::InvalidInput("median rank needs weights and ground truth".into()));
    }
    let gt = ground_truth_set(ground_truth);
    let mut collected = Vec::with_capacity(weight_vectors.len() * gt.len());
    for w in weight_vectors {
        let r = ranks(w);
        for &g in &gt {
            if g == 0 || g > w.len() {
                return Err(Error::InvalidInput(alloc::format!("ground-truth feature {g} out of range")));
            }
            collected.push(r[g - 1]);
        }
    }
    collected.sort_unstable();
    let m = collected.len();
    Ok(if m % 2 == 1 {
        collected[m / 2] as f64
    } else {
        (collected[m / 2 - 1] + collected[m / 2]) as f64 / 2.0
    })
}

/// What masked predictions are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityReference {
    /// The black box's own prediction on the full input.
    #[default]
    BlackBox,
    /// The dataset labels.
    Labels,
}

/// Micro-averaged F1 (positive class 1) of masked predictions against the
/// reference. Returns 1.0 when neither side has any positive.
pub fn fidelity_f1<B, S>(bb: &B, selector: &S, data: &Dataset, reference: FidelityReference) -> Result<f64>
where
    B: BlackBox + ?Sized,
    S: FeatureSelector + ?Sized,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (x, label) in data.inputs.iter().zip(&data.outputs) {
        let truth = match reference {
            FidelityReference::BlackBox => bb.predict(x)?,
            FidelityReference::Labels => label.clone(),
        };
        let masked = bb.predict_masked(x, &selector.hard_mask(x)?.values)?;
        for (p, r) in masked.iter().zip(&truth) {
            match (*p, *r) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

/// Interpreter trained with a target-only surrogate (`d = 1`), so it never
/// sees the other outputs.
pub fn marginal_baseline<B: BlackBox + ?Sized>(
    bb: &B,
    data: &Dataset,
    t: usize,
    k: usize,
    surrogate_cfg: &SpenTrainConfig,
    sampler_seed: u64,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    let projected = TargetOnly::new(bb, t)?;
    let esb = pretrain_surrogate(&projected, sampler_seed, surrogate_cfg)?.energy;
    marginal_baseline_with_surrogate(bb, esb, data, t, k, cfg)
}

/// [`marginal_baseline`] with a given target-only surrogate.
pub fn marginal_baseline_with_surrogate<B: BlackBox + ?Sized>(
    bb: &B,
    esb: EnergyNet,
    data: &Dataset,
    t: usize,
    k: usize,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    if esb.d != 1 {
        return Err(Error::Config(alloc::format!(
            "marginal surrogate must model a single output, got d = {}",
            esb.d
        )));
    }
    let projected = TargetOnly::new(bb, t)?;
    let mut target_data = data.clone();
    target_data.d = 1;
    target_data.outputs = data.outputs.iter().map(|y| vec![y[t - 1]]).collect();
    let mut outcome = train_interpreter(&projected, esb, &target_data, 1, k, cfg)?;
    outcome.interpreter.target_index = t;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Soint,
    Marginal,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Soint => "soint",
            Method::Marginal => "marginal",
            Method::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    MedianRank,
    FidelityF1,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::MedianRank => "median_rank",
            Metric::FidelityF1 => "fidelity_f1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accuracy" => Some(Metric::Accuracy),
            "precision" => Some(Metric::Precision),
            "median_rank" => Some(Metric::MedianRank),
            "fidelity_f1" => Some(Metric::FidelityF1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlackBoxKind {
    Oracle,
    #[default]
    Spen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub metrics: Vec<Metric>,
    pub repetitions: usize,
    /// Fraction of generated rows held out for evaluation.
    pub eval_split: f64,
    pub fidelity_reference: FidelityReference,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            metrics: vec![Metric::Accuracy, Metric::Precision, Metric::MedianRank, Metric::FidelityF1],
            repetitions: 5,
            eval_split: 0.2,
            fidelity_reference: FidelityReference::BlackBox,
            seed: 0,
        }
    }
}

/// Scores one trained selector on held-out data.
pub fn evaluate_selector<B, S>(
    bb: &B,
    selector: &S,
    data: &Dataset,
    metrics: &[Metric],
    reference: FidelityReference,
) -> Result<BTreeMap<String, f64>>
where
    B: BlackBox + ?Sized,
    S: FeatureSelector + ?Sized,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let masks = data.inputs.iter().map(|x| selector.hard_mask(x)).collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::Accuracy => selection_accuracy(&masks, &data.ground_truth_features)?,
            Metric::Precision => feature_precision(&masks, &data.ground_truth_features)?,
            Metric::MedianRank => {
                let w = data.inputs.iter().map(|x| selector.importance_weights(x)).collect::<Result<Vec<_>>>()?;
                median_rank(&w, &data.ground_truth_features)?
            }
            Metric::FidelityF1 => fidelity_f1(bb, selector, data, reference)?,
        };
        out.insert(m.name().to_string(), v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub energies: Vec<SyntheticEnergy>,
    pub dims: Vec<usize>,
    /// 1-based targets explained for E1.
    pub targets_e1: Vec<usize>,
    /// 1-based targets explained for E2.
    pub targets_e2: Vec<usize>,
    pub methods: Vec<Method>,
    pub k: usize,
    /// Rows generated for interpreter training plus evaluation.
    pub num_samples: usize,
    pub blackbox: BlackBoxKind,
    /// Rows used to train a SPEN black box.
    pub blackbox_samples: usize,
    pub spen: SpenTrainConfig,
    pub surrogate: SpenTrainConfig,
    pub trainer: TrainerConfig,
    pub metric: MetricConfig,
    pub master_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            energies: vec![SyntheticEnergy::E1, SyntheticEnergy::E2],
            dims: vec![5, 10, 15, 20],
            targets_e1: vec![1, 2],
            targets_e2: vec![3, 4],
            methods: vec![Method::Soint, Method::Marginal, Method::Random],
            k: 4,
            num_samples: 2_500,
            blackbox: BlackBoxKind::Spen,
            blackbox_samples: 10_000,
            spen: SpenTrainConfig::default(),
            surrogate: SpenTrainConfig::default(),
            trainer: TrainerConfig::default(),
            metric: MetricConfig::default(),
            master_seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn targets(&self, energy: SyntheticEnergy) -> &[usize] {
        match energy {
            SyntheticEnergy::E1 => &self.targets_e1,
            SyntheticEnergy::E2 => &self.targets_e2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        if !(self.metric.eval_split > 0.0 && self.metric.eval_split < 1.0) {
            return Err(Error::Config("eval_split must lie in (0, 1)".into()));
        }
        for &e in &self.energies {
            for &t in self.targets(e) {
                if t == 0 || t > e.output_dim() {
                    return Err(Error::Config(alloc::format!("target {t} invalid for {}", e.name())));
                }
            }
        }
        for &n in &self.dims {
            if n < 4 {
                return Err(Error::Config("input dimension must be at least 4".into()));
            }
            if self.k == 0 || self.k > n {
                return Err(Error::Config(alloc::format!("k = {} invalid for n = {n}", self.k)));
            }
        }
        self.spen.validate()?;
        self.surrogate.validate()?;
        self.trainer.validate()
    }

    /// Every `(energy, n, repetition)` unit of work, in report order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &energy in &self.energies {
            for &n in &self.dims {
                for repetition in 0..self.metric.repetitions {
                    jobs.push(Job { energy, n, repetition });
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub energy: SyntheticEnergy,
    pub n: usize,
    pub repetition: usize,
}

impl Job {
    pub fn seed(&self, master: u64) -> u64 {
        let e = match self.energy {
            SyntheticEnergy::E1 => 1,
            SyntheticEnergy::E2 => 2,
        };
        rng::derive_seed(master, &[e, self.n as u64, self.repetition as u64])
    }
}

/// Metrics of one method on one target within one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub energy: SyntheticEnergy,
    pub n: usize,
    pub target: usize,
    pub method: Method,
    pub repetition: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Interpreter training iterations (0 for untrained baselines).
    pub iterations: usize,
}

/// Failure inside one benchmark job, with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct JobError {
    pub job: Job,
    pub stage: &'static str,
    pub error: Error,
}

impl core::fmt::Display for JobError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{} n={} repetition={} failed during {}: {}",
            self.job.energy.name(),
            self.job.n,
            self.job.repetition,
            self.stage,
            self.error
        )
    }
}

/// Runs every method on every configured target for one job.
pub fn run_job(cfg: &BenchmarkConfig, job: Job) -> core::result::Result<Vec<CellResult>, JobError> {
    let fail = |stage: &'static str| move |error: Error| JobError { job, stage, error };
    let seed = job.seed(cfg.master_seed);
    let sub = |tag: u64| rng::derive_seed(seed, &[tag]);

    let spec = DatasetSpec { energy: job.energy, n: job.n, num_samples: cfg.num_samples, seed: sub(1) };
    let data = generate_dataset(&spec).map_err(fail("data generation"))?;
    let (train, test) = data.split(cfg.metric.eval_split);
    if train.is_empty() || test.is_empty() {
        return Err(fail("data generation")(Error::EmptyDataset));
    }

    let bb = match cfg.blackbox {
        BlackBoxKind::Oracle => {
            BlackBoxModel::Oracle(OracleBlackBox::new(job.energy, job.n).map_err(fail("black-box training"))?)
        }
        BlackBoxKind::Spen => {
            let bb_spec =
                DatasetSpec { energy: job.energy, n: job.n, num_samples: cfg.blackbox_samples, seed: sub(2) };
            let bb_data = generate_dataset(&bb_spec).map_err(fail("black-box training"))?;
            let spen_cfg = SpenTrainConfig { seed: sub(3), ..cfg.spen.clone() };
            BlackBoxModel::Spen(train_spen(&bb_data, &spen_cfg).map_err(fail("black-box training"))?.0)
        }
    };

    let needs_surrogate = cfg.methods.contains(&Method::Soint);
    let esb = if needs_surrogate {
        let scfg = SpenTrainConfig { seed: sub(4), ..cfg.surrogate.clone() };
        Some(pretrain_surrogate(&bb, sub(5), &scfg).map_err(fail("surrogate pre-training"))?.energy)
    } else {
        None
    };

    let mut cells = Vec::new();
    for &t in cfg.targets(job.energy) {
        for &method in &cfg.methods {
            let tcfg = TrainerConfig {
                seed: rng::derive_seed(seed, &[6, t as u64, method as u64]),
                ..cfg.trainer.clone()
            };
            let (metrics, iterations) = match method {
                Method::Soint => {
                    let esb0 = esb.clone().expect("surrogate is trained when soint runs");
                    let out = train_interpreter(&bb, esb0, &train, t, cfg.k, &tcfg)
                        .map_err(fail("interpreter training"))?;
                    let m = evaluate_selector(&bb, &out.interpreter, &test, &cfg.metric.metrics, cfg.metric.fidelity_reference)
                        .map_err(fail("evaluation"))?;
                    (m, out.history.len())
                }
                Method::Marginal => {
                    let scfg = SpenTrainConfig {
                        seed: rng::derive_seed(seed, &[7, t as u64]),
                        ..cfg.surrogate.clone()
                    };
                    let out = marginal_baseline(&bb, &train, t, cfg.k, &scfg, sub(5), &tcfg)
                        .map_err(fail("marginal baseline training"))?;
                    let m = evaluate_selector(&bb, &out.interpreter, &test, &cfg.metric.metrics, cfg.metric.fidelity_reference)
                        .map_err(fail("evaluation"))?;
                    (m, out.history.len())
                }
                Method::Random => {
                    let sel = RandomSelector { n: job.n, k: cfg.k, seed: rng::derive_seed(seed, &[8, t as u64]) };
                    let m = evaluate_selector(&bb, &sel, &test, &cfg.metric.metrics, cfg.metric.fidelity_reference)
                        .map_err(fail("evaluation"))?;
                    (m, 0)
                }
            };
            cells.push(CellResult {
                energy: job.energy,
                n: job.n,
                target: t,
                method,
                repetition: job.repetition,
                metrics,
                iterations,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        MetricSummary { values, mean, std: libm::sqrt(var) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub energy: SyntheticEnergy,
    pub n: usize,
    pub target: usize,
    pub method: Method,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Training iterations per repetition.
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub master_seed: u64,
    pub repetitions: usize,
    pub k: usize,
    pub blackbox: BlackBoxKind,
    /// Seed of every job, in job order.
    pub job_seeds: Vec<u64>,
    /// Fingerprint of the resolved configuration, filled in by callers that
    /// can serialize it.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<CellReport>,
    pub meta: ReportMeta,
}

impl BenchmarkReport {
    pub fn cell(&self, energy: SyntheticEnergy, n: usize, target: usize, method: Method) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.energy == energy && c.n == n && c.target == target && c.method == method)
    }
}

/// Groups per-repetition results into sorted cells.
pub fn aggregate(cfg: &BenchmarkConfig, results: Vec<CellResult>) -> BenchmarkReport {
    let mut grouped: BTreeMap<(SyntheticEnergy, usize, usize, Method), Vec<CellResult>> = BTreeMap::new();
    for r in results {
        grouped.entry((r.energy, r.n, r.target, r.method)).or_default().push(r);
    }
    let cells = grouped
        .into_iter()
        .map(|((energy, n, target, method), mut reps)| {
            reps.sort_by_key(|r| r.repetition);
            let mut metrics = BTreeMap::new();
            for name in reps[0].metrics.keys() {
                let values = reps.iter().map(|r| r.metrics[name]).collect();
                metrics.insert(name.clone(), MetricSummary::from_values(values));
            }
            CellReport { energy, n, target, method, metrics, iterations: reps.iter().map(|r| r.iterations).collect() }
        })
        .collect();
    BenchmarkReport {
        cells,
        meta: ReportMeta {
            master_seed: cfg.master_seed,
            repetitions: cfg.metric.repetitions,
            k: cfg.k,
            blackbox: cfg.blackbox,
            job_seeds: cfg.jobs().iter().map(|j| j.seed(cfg.master_seed)).collect(),
            config_hash: None,
        },
    }
}

/// Sequential benchmark over the full configured grid.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> core::result::Result<BenchmarkReport, JobError> {
    cfg.validate().map_err(|error| JobError {
        job: Job { energy: SyntheticEnergy::E1, n: 0, repetition: 0 },
        stage: "configuration",
        error,
    })?;
    let mut results = Vec::new();
    for job in cfg.jobs() {
        results.extend(run_job(cfg, job)?);
    }
    Ok(aggregate(cfg, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hard(n: usize, one_based: &[usize]) -> SelectionMask {
        let idx: Vec<usize> = one_based.iter().map(|i| i - 1).collect();
        SelectionMask::from_indices(n, &idx)
    }

    #[test]
    fn accuracy_examples() {
        let gt = [1, 2, 3, 4];
        assert_eq!(selection_accuracy(&[hard(5, &gt), hard(5, &gt)], &gt).unwrap(), 1.0);
        assert_eq!(selection_accuracy(&[hard(5, &[1, 2, 3, 5])], &gt).unwrap(), 0.0);
        assert_eq!(selection_accuracy(&[hard(5, &gt), hard(5, &[2, 3, 4, 5])], &gt).unwrap(), 0.5);
        assert!(matches!(selection_accuracy(&[hard(5, &[1, 2])], &gt), Err(Error::Config(_))));
    }

    #[test]
    fn precision_counts_overlap() {
        let gt = [1, 2, 3, 4];
        assert_eq!(feature_precision(&[hard(6, &[1, 2, 5, 6])], &gt).unwrap(), 0.5);
    }

    #[test]
    fn median_rank_examples() {
        let gt = [1, 2, 3, 4];
        let top = vec![vec![0.4, 0.3, 0.2, 0.09, 0.01]; 3];
        assert_eq!(median_rank(&top, &gt).unwrap(), 2.5);
        let shifted = vec![vec![0.4, 0.3, 0.2, 0.09, 0.5]];
        assert_eq!(median_rank(&shifted, &gt).unwrap(), 3.5);
        let mut last = vec![0.0; 20];
        for (i, v) in last.iter_mut().enumerate() {
            *v = i as f64;
        }
        assert_eq!(median_rank(&[last], &gt).unwrap(), 18.5);
        assert!(median_rank(&[], &gt).is_err());
    }

    #[test]
    fn summary_population_std() {
        let s = MetricSummary::from_values(vec![1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(MetricSummary::from_values(vec![0.7]).std, 0.0);
    }

    #[test]
    fn random_selector_is_deterministic_per_input() {
        let s = RandomSelector { n: 6, k: 2, seed: 9 };
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(s.hard_mask(&x).unwrap(), s.hard_mask(&x).unwrap());
        assert_eq!(s.hard_mask(&x).unwrap().selected().len(), 2);
        let w = s.importance_weights(&x).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
