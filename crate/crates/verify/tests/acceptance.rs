//! Acceptance criteria for the whole pipeline. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Positional arguments select criteria by id (`c4`) or by a fragment of
//! their name (`oracle`).

use std::error::Error;
use std::path::{Path, PathBuf};
use std::time::Instant;

use soint::bench::run_parallel;
use soint::format::read_json;
use soint_core::blackbox::{train_spen, BlackBox, EnergyNet, OracleBlackBox, SpenTrainConfig};
use soint_core::diffnet::{grad_check, relative_error, Activation, Net, NetSpec};
use soint_core::eval::{BenchmarkConfig, BenchmarkReport, BlackBoxKind, Metric, MetricConfig, Method};
use soint_core::interpreter::{apply_mask, default_selector_spec, Interpreter, SelectionMask};
use soint_core::rng;
use soint_core::synth::{generate_dataset, sample_input, DatasetSpec, SyntheticEnergy};
use soint_core::training::{energy_finetune_loss, interpreter_loss, interpreter_loss_grad, TrainerConfig};

type Res<T> = Result<T, Box<dyn Error>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Res<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

/// State shared between criteria that reuse each other's runs.
#[derive(Default)]
struct Context {
    dir: PathBuf,
    recovery: Option<BenchmarkReport>,
    structure: Option<(PathBuf, BenchmarkReport)>,
}

// ---------------------------------------------------------------- 1

fn binary_tail(d: usize, code: usize) -> Vec<f64> {
    (0..d).map(|j| ((code >> j) & 1) as f64).collect()
}

fn gradients(_: &mut Context) -> Res<Outcome> {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checks = 0;
    for n in [5usize, 10, 15, 20] {
        let selector = Net::init(default_selector_spec(n, n as u64)?)?;
        for r in 0..3 {
            worst = worst.max(grad_check(&selector, &sample_input(100 + r, n as u64, n), eps)?);
            checks += 1;
        }
        // d = 1: target-only surrogate, 2: E1, 4: E2; the SPEN black box and
        // the surrogate share this architecture
        for d in [1usize, 2, 4] {
            let energy = EnergyNet::with_default_architecture(n, d, (n * 10 + d) as u64)?;
            for r in 0..3 {
                let mut input = sample_input(200 + r as u64, n as u64, n);
                input.extend(binary_tail(d, r * 5 + 1));
                worst = worst.max(grad_check(&energy.net, &input, eps)?);
                checks += 1;
            }
        }
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e} over {checks} checks (bound 1e-4)"))
}

// ---------------------------------------------------------------- 2

fn ref_energy(energy: SyntheticEnergy, x: &[f64], y: &[u8]) -> f64 {
    let b = |i: usize| f64::from(y[i]);
    match energy {
        SyntheticEnergy::E1 => (x[0] * b(0) + x[3]) * (1.0 - b(1)) + (x[1] * (1.0 - b(0)) + x[2]) * b(1),
        SyntheticEnergy::E2 => {
            (x[0].sin() * b(0) * b(2) + x[3].abs()) * (1.0 - b(1)) * b(3)
                + ((x[1] / 10.0 - 1.0).exp() * (1.0 - b(0)) * (1.0 - b(2)) + x[2]) * b(1) * (1.0 - b(3))
        }
    }
}

/// Enumerates outputs in lexicographic order and keeps the first strict minimum.
fn ref_argmin(energy: SyntheticEnergy, x: &[f64]) -> Vec<u8> {
    let d = match energy {
        SyntheticEnergy::E1 => 2,
        SyntheticEnergy::E2 => 4,
    };
    let mut best: Option<(f64, Vec<u8>)> = None;
    for code in 0..(1usize << d) {
        let y: Vec<u8> = (0..d).map(|j| ((code >> (d - 1 - j)) & 1) as u8).collect();
        let e = ref_energy(energy, x, &y);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, y));
        }
    }
    best.unwrap().1
}

fn oracle(_: &mut Context) -> Res<Outcome> {
    let ties: [[f64; 5]; 5] = [
        [0.0; 5],
        [0.0, 0.0, -2.0, 1.0, 0.0],
        [0.0, 1.0, 0.5, 0.5, 3.0],
        [1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, 10.0, 0.0, 0.0, -1.0],
    ];
    let (mut agree, mut total) = (0, 0);
    let (mut tie_agree, mut tie_total) = (0, 0);
    for energy in [SyntheticEnergy::E1, SyntheticEnergy::E2] {
        let bb = OracleBlackBox::new(energy, 5)?;
        for row in 0..1000 {
            let x = sample_input(31, row, 5);
            total += 1;
            agree += usize::from(bb.predict(&x)? == ref_argmin(energy, &x));
        }
        for x in &ties {
            tie_total += 1;
            tie_agree += usize::from(bb.predict(x)? == ref_argmin(energy, x));
        }
    }
    outcome(
        agree == total && tie_agree == tie_total,
        format!("{agree}/{total} random inputs and {tie_agree}/{tie_total} tie cases match the reference"),
    )
}

// ---------------------------------------------------------------- 3

fn spot_checks(_: &mut Context) -> Res<Outcome> {
    let e1 = SyntheticEnergy::E1.eval(&[1.0, 2.0, 3.0, -1.0, 0.0], &[0, 0])?;
    let mut e2_zero = 0;
    for row in 0..100 {
        let x = sample_input(32, row, 5);
        e2_zero += usize::from(SyntheticEnergy::E2.eval(&x, &[0, 0, 0, 0])? == 0.0);
    }
    outcome(e1 == -1.0 && e2_zero == 100, format!("E1 spot value {e1}, E2 zero at y = 0 on {e2_zero}/100 inputs"))
}

// ---------------------------------------------------------------- 4

fn spen_quality(_: &mut Context) -> Res<Outcome> {
    let train = generate_dataset(&DatasetSpec { energy: SyntheticEnergy::E1, n: 5, num_samples: 10_000, seed: 41 })?;
    let held = generate_dataset(&DatasetSpec { energy: SyntheticEnergy::E1, n: 5, num_samples: 2_000, seed: 42 })?;
    let (bb, _) = train_spen(&train, &SpenTrainConfig::default())?;
    let mut hits = 0;
    for (x, y) in held.inputs.iter().zip(&held.outputs) {
        hits += usize::from(&bb.predict(x)? == y);
    }
    let acc = hits as f64 / held.len() as f64;
    outcome(acc >= 0.95, format!("held-out exact match {acc:.4} on {} rows (bound 0.95)", held.len()))
}

// ---------------------------------------------------------------- 5

/// `E(x, y) = w . y` for n inputs that the energy ignores.
fn linear_energy(n: usize, w: &[f64]) -> Res<EnergyNet> {
    let spec = NetSpec::new(vec![n + w.len(), 1], vec![Activation::Identity], 0)?;
    let mut params = vec![0.0; n];
    params.extend(w.iter().map(|v| -v));
    params.push(0.0);
    Ok(EnergyNet::new(Net::from_params(spec, params)?, n, w.len())?)
}

fn hinge_suite(_: &mut Context) -> Res<Outcome> {
    let n = 3;
    let x = [0.7, -1.1, 2.0];
    let soft = SelectionMask { values: vec![0.9, 0.4, 0.1], hard: false };
    let cfg = TrainerConfig { margin: 0.5, ..Default::default() };
    let mut exact = Vec::new();

    // interpreter hinge with t = 1
    let any = linear_energy(n, &[0.3, -0.7])?;
    exact.push(interpreter_loss(&any, &x, &soft, &[1, 0], &[1, 1], 1, &cfg)? == 0.0);
    // substituted output (1, 1) at energy 2.0, y~ = (0, 1) at 1.0
    let direct = linear_energy(n, &[1.0, 1.0])?;
    exact.push(interpreter_loss(&direct, &x, &soft, &[1, 0], &[0, 1], 1, &cfg)? == 1.5);
    // substituted output at 0.2, y~ at 1.0
    let clamp = linear_energy(n, &[-0.8, 1.0])?;
    exact.push(interpreter_loss(&clamp, &x, &soft, &[1, 0], &[0, 1], 1, &cfg)? == 0.0);

    // fine-tuning hinge, y' = (1, 0) and y~ = (0, 1)
    let xm = apply_mask(&x, &soft)?;
    exact.push(energy_finetune_loss(&any, &xm, &[1, 1], &[1, 1], 0.5)? == 0.5);
    let ranked = linear_energy(n, &[1.0, 3.0])?;
    exact.push(energy_finetune_loss(&ranked, &xm, &[1, 0], &[0, 1], 0.5)? == 0.0);
    let inside = linear_energy(n, &[1.0, 1.2])?;
    exact.push(energy_finetune_loss(&inside, &xm, &[1, 0], &[0, 1], 0.5)? == (1.0f64 - 1.2) + 0.5);
    let cases_ok = exact.iter().filter(|&&b| b).count();

    // interpreter parameters vs central differences at fixed Gumbel noise
    let (n, d, k) = (5, 2, 3);
    let cfg = TrainerConfig::default();
    let (mut worst, mut sampled) = (0.0f64, 0);
    for seed in 0..30u64 {
        let mut interp = Interpreter::new(Net::init(default_selector_spec(n, seed)?)?, k, 0.7, 1)?;
        let esb = EnergyNet::with_default_architecture(n, d, seed + 50)?;
        let x = sample_input(seed, 9, n);
        let noise = interp.sample_noise(&mut rng::stream(seed, 3));
        let (y_sb, y_tilde) = ([1u8, 0], [0u8, 1]);
        let loss_at = |interp: &Interpreter| -> Res<f64> {
            let s = interp.relaxed(&x, &noise)?;
            Ok(interpreter_loss(&esb, &x, &s.mask, &y_sb, &y_tilde, 1, &cfg)?)
        };
        let sample = interp.relaxed(&x, &noise)?;
        let (loss, mask_grad) = interpreter_loss_grad(&esb, &x, &sample.mask, &y_sb, &y_tilde, 1, &cfg)?;
        if loss < 1e-3 {
            // at or beyond the hinge boundary
            continue;
        }
        let mut analytic = vec![0.0; interp.w_net.params.len()];
        interp.relaxed_backward(&sample, &mask_grad, 1.0, &mut analytic)?;
        let h = 1e-6;
        for p in 0..analytic.len() {
            let orig = interp.w_net.params[p];
            interp.w_net.params[p] = orig + h;
            let up = loss_at(&interp)?;
            interp.w_net.params[p] = orig - h;
            let down = loss_at(&interp)?;
            interp.w_net.params[p] = orig;
            worst = worst.max(relative_error((up - down) / (2.0 * h), analytic[p]));
        }
        sampled += 1;
    }
    outcome(
        cases_ok == exact.len() && sampled >= 10 && worst <= 1e-4,
        format!(
            "{cases_ok}/{} analytic cases exact; gradient max relative error {worst:.2e} over {sampled} active samples",
            exact.len()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn mean(report: &BenchmarkReport, n: usize, t: usize, method: Method, metric: &str, e: SyntheticEnergy) -> Res<f64> {
    let cell = report.cell(e, n, t, method).ok_or_else(|| format!("missing cell n={n} t={t} {}", method.name()))?;
    Ok(cell.metrics.get(metric).ok_or_else(|| format!("missing metric {metric}"))?.mean)
}

fn recovery(ctx: &mut Context) -> Res<Outcome> {
    let cfg = BenchmarkConfig {
        energies: vec![SyntheticEnergy::E1],
        dims: vec![5],
        methods: vec![Method::Soint],
        blackbox: BlackBoxKind::Oracle,
        master_seed: 6,
        ..Default::default()
    };
    let report = run_parallel(&cfg, 1)?.map_err(|e| e.to_string())?;
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [1, 2] {
        let acc = mean(&report, 5, t, Method::Soint, "accuracy", SyntheticEnergy::E1)?;
        let mr = mean(&report, 5, t, Method::Soint, "median_rank", SyntheticEnergy::E1)?;
        pass &= acc >= 0.9 && (mr - 2.5).abs() <= 0.5;
        parts.push(format!("t={t}: accuracy {acc:.3}, median rank {mr:.2}"));
    }
    ctx.recovery = Some(report);
    outcome(pass, format!("{} (bounds: accuracy >= 0.9, |rank - 2.5| <= 0.5)", parts.join("; ")))
}

// ---------------------------------------------------------------- 7

const STRUCTURE_CONFIG: &str = r#"{"energies": ["e2"], "dims": [10, 20]}"#;
const STRUCTURE_SEED: &str = "7";

fn run_benchmark_cli(dir: &Path, name: &str, jobs: &str) -> Res<PathBuf> {
    let cfg = dir.join("structure.config-in.json");
    std::fs::write(&cfg, STRUCTURE_CONFIG)?;
    let out = dir.join(name);
    let args = ["soint", "benchmark", "--config", cfg.to_str().unwrap(), "--seed", STRUCTURE_SEED];
    let args = args.iter().map(|s| s.to_string()).chain([
        "--jobs".to_string(),
        jobs.to_string(),
        "--out".to_string(),
        out.display().to_string(),
    ]);
    let code = soint::cli::run(args);
    if code != 0 {
        return Err(format!("benchmark exited with {code}").into());
    }
    Ok(out)
}

fn structure_run(ctx: &mut Context) -> Res<(PathBuf, BenchmarkReport)> {
    if let Some(r) = &ctx.structure {
        return Ok(r.clone());
    }
    let path = run_benchmark_cli(&ctx.dir, "structure-a.json", "1")?;
    let report: BenchmarkReport = read_json(&path)?;
    ctx.structure = Some((path.clone(), report.clone()));
    Ok((path, report))
}

fn structure(ctx: &mut Context) -> Res<Outcome> {
    let (_, report) = structure_run(ctx)?;
    let e2 = SyntheticEnergy::E2;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [10, 20] {
        for t in [3, 4] {
            let acc = |m| mean(&report, n, t, m, "accuracy", e2);
            let rank = |m| mean(&report, n, t, m, "median_rank", e2);
            let (sa, ma, ra) = (acc(Method::Soint)?, acc(Method::Marginal)?, acc(Method::Random)?);
            let (sr, mr, rr) = (rank(Method::Soint)?, rank(Method::Marginal)?, rank(Method::Random)?);
            let ok = sa >= ma && sa > ra && ma > ra && (sr - 2.5).abs() <= (mr - 2.5).abs();
            pass &= ok;
            parts.push(format!(
                "n={n} t={t} {}: accuracy soint {sa:.3} marginal {ma:.3} random {ra:.3}, \
                 median rank soint {sr:.2} marginal {mr:.2} random {rr:.2}",
                if ok { "ok" } else { "violated" }
            ));
        }
    }
    outcome(pass, parts.join("\n    "))
}

// ---------------------------------------------------------------- 8

fn fidelity(_: &mut Context) -> Res<Outcome> {
    let cfg = BenchmarkConfig {
        energies: vec![SyntheticEnergy::E1],
        dims: vec![10],
        methods: vec![Method::Soint, Method::Random],
        metric: MetricConfig { metrics: vec![Metric::FidelityF1], ..Default::default() },
        master_seed: 8,
        ..Default::default()
    };
    let report = run_parallel(&cfg, 1)?.map_err(|e| e.to_string())?;
    let per_seed = |method: Method| -> Res<Vec<f64>> {
        let mut sums = vec![0.0; cfg.metric.repetitions];
        for t in [1, 2] {
            let cell = report.cell(SyntheticEnergy::E1, 10, t, method).ok_or("missing fidelity cell")?;
            for (s, v) in sums.iter_mut().zip(&cell.metrics["fidelity_f1"].values) {
                *s += v / 2.0;
            }
        }
        Ok(sums)
    };
    let (soint, random) = (per_seed(Method::Soint)?, per_seed(Method::Random)?);
    let wins = soint.iter().zip(&random).filter(|(s, r)| s > r).count();
    let pairs: Vec<String> = soint.iter().zip(&random).map(|(s, r)| format!("{s:.3}/{r:.3}")).collect();
    outcome(
        wins == soint.len(),
        format!("soint beats random on {wins}/{} seeds (soint/random F1: {})", soint.len(), pairs.join(", ")),
    )
}

// ---------------------------------------------------------------- 9

fn determinism(ctx: &mut Context) -> Res<Outcome> {
    let (first, _) = structure_run(ctx)?;
    let again = run_benchmark_cli(&ctx.dir, "structure-b.json", "1")?;
    let parallel = run_benchmark_cli(&ctx.dir, "structure-c.json", "4")?;
    let bytes = std::fs::read(&first)? == std::fs::read(&again)?;
    let value = |p: &Path| -> Res<serde_json::Value> { Ok(serde_json::from_slice(&std::fs::read(p)?)?) };
    let values = value(&first)? == value(&parallel)?;
    outcome(bytes && values, format!("--jobs 1 byte-identical: {bytes}; --jobs 4 value-identical: {values}"))
}

// ---------------------------------------------------------------- 10

fn convergence(ctx: &mut Context) -> Res<Outcome> {
    let mut counts = Vec::new();
    for report in ctx.recovery.iter().chain(ctx.structure.as_ref().map(|(_, r)| r)) {
        for cell in &report.cells {
            if cell.method != Method::Random {
                counts.extend(cell.iterations.iter().copied());
            }
        }
    }
    if counts.is_empty() {
        return outcome(false, "no interpreter runs recorded (run criteria 6 and 7 first)");
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    outcome(max <= 100, format!("{} training runs, at most {max} iterations (bound 100)", counts.len()))
}

type Criterion = (&'static str, &'static str, fn(&mut Context) -> Res<Outcome>);

const CRITERIA: [Criterion; 10] = [
    ("c1", "gradient correctness", gradients),
    ("c2", "oracle equivalence", oracle),
    ("c3", "analytic spot checks", spot_checks),
    ("c4", "spen black-box quality", spen_quality),
    ("c5", "hinge-loss suite", hinge_suite),
    ("c6", "recovery on known ground truth", recovery),
    ("c7", "structure advantage", structure),
    ("c8", "fidelity pattern", fidelity),
    ("c9", "determinism", determinism),
    ("c10", "convergence bound", convergence),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |id: &str, name: &str| filters.is_empty() || filters.iter().any(|f| f == id || name.contains(f.as_str()));
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("scratch directory");
    let mut ctx = Context { dir, ..Default::default() };

    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !selected(id, name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = match check(&mut ctx) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {id} {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
