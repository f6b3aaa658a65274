//! Stage-based command line: every subcommand reads earlier artifacts from
//! disk, writes its own, and leaves a resolved-config snapshot beside them.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use soint_core::blackbox::{
    argmin_agreement, pretrain_surrogate, train_spen, BlackBox, BlackBoxModel, OracleBlackBox, SpenTrainConfig,
};
use soint_core::eval::{
    evaluate_selector, marginal_baseline, BenchmarkConfig, Method, Metric, MetricConfig, MetricSummary,
    RandomSelector,
};
use soint_core::rng::derive_seed;
use soint_core::synth::{generate_dataset, Dataset, DatasetSpec, SyntheticEnergy};
use soint_core::training::{train_interpreter, train_interpreter_observed, IterationRecord, TrainerConfig};

use crate::bench;
use crate::format::{self, sibling, DatasetMeta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment switch that replaces Gumbel noise by zeros.
pub const FORCE_ZERO_GUMBEL_ENV: &str = "SOINT_FORCE_ZERO_GUMBEL";

#[derive(Debug, Parser)]
#[command(name = "soint", version, about = "Interpreting structured-output black boxes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with the subcommand's configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (benchmark only).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlackBoxChoice {
    Spen,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset labelled by exhaustive argmin.
    Synth {
        #[arg(long)]
        energy: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the structured black box on a dataset.
    TrainBlackbox {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "spen")]
        kind: BlackBoxChoice,
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the surrogate energy on the black box's predictions.
    PretrainEnergy {
        #[arg(long)]
        blackbox: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train an interpreter for one target output.
    Interpret {
        #[arg(long)]
        blackbox: PathBuf,
        #[arg(long)]
        energy: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Score an interpreter checkpoint, or train and score a method several times.
    Evaluate {
        #[arg(long)]
        blackbox: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        interpreter: Option<PathBuf>,
        /// Surrogate energy checkpoint, needed to train `soint`.
        #[arg(long)]
        energy: Option<PathBuf>,
        #[arg(long, default_value = "soint")]
        method: String,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated metric names.
        #[arg(long)]
        metrics: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full grid of energies, dimensions, targets and methods.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// Turn a benchmark report into per-panel series (x = n, y = mean, band = std).
    Plotdata {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        format: Option<PlotFormat>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<soint_core::Error>() {
            Some(soint_core::Error::Divergence { .. }) => Failure::Runtime(e),
            _ => Failure::Usage(e),
        }
    }
}

impl From<soint_core::Error> for Failure {
    fn from(e: soint_core::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

pub fn execute(command: Command) -> CmdResult {
    match command {
        Command::Synth { energy, n, samples, common } => cmd_synth(energy, n, samples, &common),
        Command::TrainBlackbox { data, kind, common } => cmd_train_blackbox(&data, kind, &common),
        Command::PretrainEnergy { blackbox, samples, common } => cmd_pretrain(&blackbox, samples, &common),
        Command::Interpret { blackbox, energy, data, target, k, common } => {
            cmd_interpret(&blackbox, &energy, &data, target, k, &common)
        }
        Command::Evaluate { blackbox, data, interpreter, energy, method, target, k, metrics, runs, common } => {
            let args = EvaluateArgs { blackbox, data, interpreter, energy, method, target, k, metrics, runs };
            cmd_evaluate(&args, &common)
        }
        Command::Benchmark { common } => cmd_benchmark(&common),
        Command::Plotdata { report, format, common } => cmd_plotdata(&report, format, &common),
    }
}

fn load_config<T: serde::de::DeserializeOwned + Default>(common: &Common) -> Result<T, Failure> {
    match &common.config {
        Some(p) => Ok(format::read_json(p)?),
        None => Ok(T::default()),
    }
}

fn zero_gumbel_requested() -> bool {
    std::env::var(FORCE_ZERO_GUMBEL_ENV).map(|v| v == "1").unwrap_or(false)
}

#[derive(Serialize)]
struct Snapshot<'a, C: Serialize> {
    command: &'a str,
    inputs: BTreeMap<&'a str, String>,
    config: &'a C,
}

fn write_snapshot<C: Serialize>(out: &Path, command: &str, inputs: &[(&str, &Path)], config: &C) -> CmdResult {
    let snap = Snapshot {
        command,
        inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect(),
        config,
    };
    format::write_json(&sibling(out, "config.json"), &snap)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub energy: SyntheticEnergy,
    pub n: usize,
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { energy: SyntheticEnergy::E1, n: 5, num_samples: 1000, seed: 0 }
    }
}

fn cmd_synth(energy: Option<String>, n: Option<usize>, samples: Option<usize>, common: &Common) -> CmdResult {
    let mut cfg: SynthConfig = load_config(common)?;
    if let Some(e) = energy {
        cfg.energy = SyntheticEnergy::parse(&e).ok_or_else(|| Failure::Usage(anyhow::anyhow!("unknown energy `{e}`")))?;
    }
    cfg.n = n.unwrap_or(cfg.n);
    cfg.num_samples = samples.unwrap_or(cfg.num_samples);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    let spec = DatasetSpec { energy: cfg.energy, n: cfg.n, num_samples: cfg.num_samples, seed: cfg.seed };
    let data = generate_dataset(&spec)?;
    format::write_dataset(&common.out, &data)?;
    format::write_json(&format::meta_path(&common.out), &DatasetMeta::from_spec(&spec, &data))?;
    write_snapshot(&common.out, "synth", &[], &cfg)?;
    log::info!("wrote {} rows to {}", data.len(), common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainLog {
    losses: Vec<f64>,
    train_exact_match: f64,
    elapsed_ms: u128,
}

#[derive(Serialize)]
struct BlackBoxSnapshot<'a> {
    kind: BlackBoxChoice,
    spen: &'a SpenTrainConfig,
}

fn cmd_train_blackbox(data_path: &Path, kind: BlackBoxChoice, common: &Common) -> CmdResult {
    let data = format::read_dataset(data_path)?;
    let mut cfg: SpenTrainConfig = load_config(common)?;
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    let start = Instant::now();
    let (model, losses) = match kind {
        BlackBoxChoice::Spen => {
            let (bb, losses) = train_spen(&data, &cfg)?;
            (BlackBoxModel::Spen(bb), losses)
        }
        BlackBoxChoice::Oracle => {
            let meta = format::read_dataset_meta(data_path)?.ok_or_else(|| {
                Failure::Usage(anyhow::anyhow!("an oracle black box needs the dataset's metadata sidecar"))
            })?;
            (BlackBoxModel::Oracle(OracleBlackBox::new(meta.energy, data.n)?), Vec::new())
        }
    };
    let exact = exact_match(&model, &data)?;
    log::info!("black box reproduces {:.4} of the training labels", exact);
    format::write_json(&common.out, &model)?;
    let log = TrainLog { losses, train_exact_match: exact, elapsed_ms: start.elapsed().as_millis() };
    format::write_json(&sibling(&common.out, "log.json"), &log)?;
    write_snapshot(&common.out, "train-blackbox", &[("data", data_path)], &BlackBoxSnapshot { kind, spen: &cfg })?;
    Ok(())
}

fn exact_match<B: BlackBox>(bb: &B, data: &Dataset) -> Result<f64, Failure> {
    if data.is_empty() {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for (x, y) in data.inputs.iter().zip(&data.outputs) {
        if &bb.predict(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Serialize)]
struct PretrainLog {
    losses: Vec<f64>,
    /// Argmin agreement with the black box on fresh standard-normal inputs.
    heldout_agreement: f64,
    elapsed_ms: u128,
}

fn cmd_pretrain(bb_path: &Path, samples: Option<usize>, common: &Common) -> CmdResult {
    let bb = format::read_blackbox(bb_path)?;
    let mut cfg: SpenTrainConfig = load_config(common)?;
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.num_samples = samples.unwrap_or(cfg.num_samples);
    let start = Instant::now();
    let trained = pretrain_surrogate(&bb, derive_seed(cfg.seed, &[5]), &cfg)?;
    let held: Vec<Vec<f64>> =
        (0..500).map(|i| soint_core::synth::sample_input(derive_seed(cfg.seed, &[9]), i, bb.input_dim())).collect();
    let agreement = argmin_agreement(&trained.energy, &bb, &held)?;
    log::info!("surrogate argmin agrees with the black box on {:.4} of held-out inputs", agreement);
    format::write_json(&common.out, &trained.energy)?;
    let log = PretrainLog { losses: trained.loss_history, heldout_agreement: agreement, elapsed_ms: start.elapsed().as_millis() };
    format::write_json(&sibling(&common.out, "log.json"), &log)?;
    write_snapshot(&common.out, "pretrain-energy", &[("blackbox", bb_path)], &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct LoggedIteration {
    #[serde(flatten)]
    record: IterationRecord,
    elapsed_ms: u128,
}

#[derive(Serialize)]
struct RunLog {
    target: usize,
    k: usize,
    converged: bool,
    error: Option<String>,
    iterations: Vec<LoggedIteration>,
}

fn cmd_interpret(bb_path: &Path, esb_path: &Path, data_path: &Path, t: usize, k: usize, common: &Common) -> CmdResult {
    let bb = format::read_blackbox(bb_path)?;
    let esb = format::read_energy(esb_path)?;
    let data = format::read_dataset(data_path)?;
    let mut cfg: TrainerConfig = load_config(common)?;
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.force_zero_gumbel |= zero_gumbel_requested();
    write_snapshot(
        &common.out,
        "interpret",
        &[("blackbox", bb_path), ("energy", esb_path), ("data", data_path)],
        &cfg,
    )?;

    let start = Instant::now();
    let mut iterations = Vec::new();
    let outcome = train_interpreter_observed(&bb, esb, &data, t, k, &cfg, &mut |r| {
        log::info!("iteration {} penalty {:.6} agreement {:.4}", r.iteration, r.mean_penalty, r.target_agreement);
        iterations.push(LoggedIteration { record: r.clone(), elapsed_ms: start.elapsed().as_millis() });
    });
    let log_path = sibling(&common.out, "log.json");
    match outcome {
        Ok(out) => {
            format::write_json(&common.out, &out.interpreter)?;
            let log = RunLog { target: t, k, converged: out.converged, error: None, iterations };
            format::write_json(&log_path, &log)?;
            Ok(())
        }
        Err(e) => {
            let log = RunLog { target: t, k, converged: false, error: Some(e.to_string()), iterations };
            format::write_json(&log_path, &log)?;
            let f = Failure::from(e);
            Err(match f {
                Failure::Runtime(e) => Failure::Runtime(e.context(format!("see run log {}", log_path.display()))),
                other => other,
            })
        }
    }
}

pub struct EvaluateArgs {
    pub blackbox: PathBuf,
    pub data: PathBuf,
    pub interpreter: Option<PathBuf>,
    pub energy: Option<PathBuf>,
    pub method: String,
    pub target: Option<usize>,
    pub k: Option<usize>,
    pub metrics: Option<String>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub trainer: TrainerConfig,
    /// Surrogate settings for the marginal baseline's target-only energy.
    pub surrogate: SpenTrainConfig,
    pub metric: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub target: usize,
    pub k: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub iterations: Vec<usize>,
}

fn parse_metrics(list: &str) -> Result<Vec<Metric>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Metric::parse(s).ok_or_else(|| Failure::Usage(anyhow::anyhow!("unknown metric `{s}`"))))
        .collect()
}

fn summarize(runs: Vec<BTreeMap<String, f64>>) -> BTreeMap<String, MetricSummary> {
    let mut out = BTreeMap::new();
    if let Some(first) = runs.first() {
        for name in first.keys() {
            out.insert(name.clone(), MetricSummary::from_values(runs.iter().map(|r| r[name]).collect()));
        }
    }
    out
}

fn cmd_evaluate(a: &EvaluateArgs, common: &Common) -> CmdResult {
    let bb = format::read_blackbox(&a.blackbox)?;
    let data = format::read_dataset(&a.data)?;
    let mut cfg: EvaluateConfig = load_config(common)?;
    if let Some(list) = &a.metrics {
        cfg.metric.metrics = parse_metrics(list)?;
    }
    cfg.metric.repetitions = a.runs.unwrap_or(cfg.metric.repetitions);
    cfg.metric.seed = common.seed.unwrap_or(cfg.metric.seed);
    cfg.trainer.force_zero_gumbel |= zero_gumbel_requested();
    if cfg.metric.repetitions == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--runs must be at least 1")));
    }
    let metrics = cfg.metric.metrics.clone();
    let reference = cfg.metric.fidelity_reference;

    let mut inputs: Vec<(&str, &Path)> = vec![("blackbox", &a.blackbox), ("data", &a.data)];
    let report = if let Some(path) = &a.interpreter {
        // a saved interpreter is deterministic, so one pass over all rows
        inputs.push(("interpreter", path));
        let interp = format::read_interpreter(path)?;
        let m = evaluate_selector(&bb, &interp, &data, &metrics, reference)?;
        EvaluationReport {
            method: "checkpoint".into(),
            target: interp.target_index,
            k: interp.k,
            metrics: summarize(vec![m]),
            iterations: Vec::new(),
        }
    } else {
        let method = match a.method.as_str() {
            "soint" => Method::Soint,
            "marginal" => Method::Marginal,
            "random" => Method::Random,
            other => return Err(Failure::Usage(anyhow::anyhow!("unknown method `{other}`"))),
        };
        let t = a.target.unwrap_or(1);
        let k = a.k.unwrap_or(4);
        let esb = match (method, &a.energy) {
            (Method::Soint, Some(p)) => {
                inputs.push(("energy", p));
                Some(format::read_energy(p)?)
            }
            (Method::Soint, None) => {
                return Err(Failure::Usage(anyhow::anyhow!("training soint needs --energy")));
            }
            _ => None,
        };
        let (train, test) = data.split(cfg.metric.eval_split);
        if train.is_empty() || test.is_empty() {
            return Err(Failure::Usage(anyhow::anyhow!("eval_split leaves an empty train or test part")));
        }
        let mut per_run = Vec::new();
        let mut iterations = Vec::new();
        for r in 0..cfg.metric.repetitions {
            let seed = derive_seed(cfg.metric.seed, &[r as u64]);
            let tcfg = TrainerConfig { seed, ..cfg.trainer.clone() };
            let (m, it) = match method {
                Method::Soint => {
                    let out = train_interpreter(&bb, esb.clone().expect("checked above"), &train, t, k, &tcfg)?;
                    (evaluate_selector(&bb, &out.interpreter, &test, &metrics, reference)?, out.history.len())
                }
                Method::Marginal => {
                    let scfg = SpenTrainConfig { seed: derive_seed(seed, &[7]), ..cfg.surrogate.clone() };
                    let out = marginal_baseline(&bb, &train, t, k, &scfg, derive_seed(seed, &[5]), &tcfg)?;
                    (evaluate_selector(&bb, &out.interpreter, &test, &metrics, reference)?, out.history.len())
                }
                Method::Random => {
                    let sel = RandomSelector { n: data.n, k, seed };
                    (evaluate_selector(&bb, &sel, &test, &metrics, reference)?, 0)
                }
            };
            log::info!("run {r}: {m:?}");
            per_run.push(m);
            iterations.push(it);
        }
        EvaluationReport { method: method.name().into(), target: t, k, metrics: summarize(per_run), iterations }
    };
    format::write_json(&common.out, &report)?;
    write_snapshot(&common.out, "evaluate", &inputs, &cfg)?;
    Ok(())
}

fn cmd_benchmark(common: &Common) -> CmdResult {
    let mut cfg: BenchmarkConfig = load_config(common)?;
    cfg.master_seed = common.seed.unwrap_or(cfg.master_seed);
    cfg.trainer.force_zero_gumbel |= zero_gumbel_requested();
    write_snapshot(&common.out, "benchmark", &[], &cfg)?;
    match bench::run_parallel(&cfg, common.jobs)? {
        Ok(report) => {
            format::write_json(&common.out, &report)?;
            std::fs::write(sibling(&common.out, "csv"), bench::report_csv(&report).map_err(Failure::Usage)?)
                .map_err(|e| Failure::Usage(e.into()))?;
            Ok(())
        }
        Err(e) => Err(Failure::Runtime(anyhow::anyhow!("{e}"))),
    }
}

fn cmd_plotdata(report_path: &Path, fmt: Option<PlotFormat>, common: &Common) -> CmdResult {
    let report: soint_core::eval::BenchmarkReport = format::read_json(report_path)?;
    let series = bench::plot_series(&report);
    let fmt = fmt.unwrap_or(match common.out.extension().and_then(|e| e.to_str()) {
        Some("csv") => PlotFormat::Csv,
        _ => PlotFormat::Json,
    });
    match fmt {
        PlotFormat::Json => format::write_json(&common.out, &series)?,
        PlotFormat::Csv => std::fs::write(&common.out, bench::plot_csv(&series).map_err(Failure::Usage)?)
            .map_err(|e| Failure::Usage(e.into()))?,
    }
    Ok(())
}
