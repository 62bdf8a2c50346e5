//! Batch entry point: federated training, the centralized reference run,
//! kernel-approximation checks, communication-structure benchmarks, and the
//! privacy audit. Emits tidy CSV/JSON for plotting; every run is fully
//! reproducible from its arguments and seed.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
//! 3 protocol abort, 4 audit failure.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedkern::audit::{run_full_audit, AuditConfig};
use fedkern::comm::{bench_global_sum, CommStructure, LatencyModel, Recorder};
use fedkern::dataio::{parse_sparse_file, PartitionScheme, Sample, VerticalDataset};
use fedkern::engine::{
    train_centralized, train_federated, EngineError, EvalOptions, RunMetrics, TrainConfig,
};
use fedkern::loss::{LossKind, LossSpec};
use fedkern::protocol::Injection;
use fedkern::rff::{approx_kernel, KernelFamily, KernelSpec};
use fedkern::seedstream::CounterStream;
use fedkern::synth;

use config::ConfigMap;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;
const EXIT_AUDIT: u8 = 4;

#[derive(Parser)]
#[command(name = "fedkern", version, about = "Federated kernel learning over vertically partitioned data")]
struct Cli {
    /// Optional key=value config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the federated model and write metrics/model summaries.
    Train(TrainArgs),
    /// Run the centralized reference trainer on the same trajectory.
    Oracle(TrainArgs),
    /// Sweep the random-feature count and report kernel approximation error.
    KernelCheck(KernelCheckArgs),
    /// Compare star, ring, and tree communication structures.
    CommBench(CommBenchArgs),
    /// Run the privacy audit suite; exits 0 only if every verdict passes.
    Audit(AuditArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Laplace,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Square,
    Logistic,
    SmoothHinge,
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticArg {
    Circles,
    Xor,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Contiguous,
    RoundRobin,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectArg {
    NoMasks,
    SameTree,
    ConstantMaskSeed,
}

#[derive(Args)]
struct TrainArgs {
    /// Sparse text dataset (`label idx:val ...`, 1-based indices).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Built-in generator used when no file is given.
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticArg>,
    /// Sample count for the generator.
    #[arg(long)]
    n: Option<usize>,
    /// Feature count for the generator.
    #[arg(long)]
    d: Option<usize>,
    /// Sparse generator density.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long, value_enum)]
    partition: Option<PartitionArg>,
    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model summary JSON path.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelCheckArgs {
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m_min: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    /// Number of point pairs in the evaluation grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Independent base seeds averaged per feature count.
    #[arg(long)]
    repeats: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CommBenchArgs {
    /// Comma-separated worker counts.
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    per_round_cost: Option<f64>,
    #[arg(long)]
    per_message_cost: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    features_per_worker: Option<usize>,
    /// Protocol calls to record.
    #[arg(long)]
    calls: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fault injection to validate the detectors.
    #[arg(long, value_enum)]
    inject: Option<InjectArg>,
    /// Audit report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ConfigMap::load(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, &format!("config file: {e}")),
    };
    let outcome = match cli.command {
        Command::Train(args) => run_train(&args, &cfg, true),
        Command::Oracle(args) => run_train(&args, &cfg, false),
        Command::KernelCheck(args) => run_kernel_check(&args, &cfg),
        Command::CommBench(args) => run_comm_bench(&args, &cfg),
        Command::Audit(args) => run_audit(&args, &cfg),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => fail(e.0, &e.1),
    }
}

struct Failure(u8, String);

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure(EXIT_CONFIG, msg.into())
    }
    fn io(e: std::io::Error) -> Self {
        Failure(EXIT_IO, e.to_string())
    }
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("fedkern: {msg}");
    ExitCode::from(code)
}

fn load_samples(args: &TrainArgs, cfg: &ConfigMap, seed: u64) -> Result<Vec<Sample>, Failure> {
    if let Some(path) = args.data.clone().or_else(|| cfg.path("data")) {
        return parse_sparse_file(&path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())));
    }
    let which = args
        .synthetic
        .or(cfg.parse_enum("synthetic", &[("circles", SyntheticArg::Circles), ("xor", SyntheticArg::Xor), ("sparse", SyntheticArg::Sparse)])?)
        .unwrap_or(SyntheticArg::Circles);
    let n = cfg.pick(args.n, "n", 2000)?;
    if n < 8 {
        return Err(Failure::config("need at least 8 samples"));
    }
    Ok(match which {
        SyntheticArg::Circles => {
            let d = cfg.pick(args.d, "d", 8)?;
            synth::circles(n, d, seed)
        }
        SyntheticArg::Xor => {
            let d = cfg.pick(args.d, "d", 8)?;
            synth::xor_blobs(n, d, seed)
        }
        SyntheticArg::Sparse => {
            let d = cfg.pick(args.d, "d", 40)?;
            let density = cfg.pick(args.density, "density", 0.3)?;
            synth::sparse_classification(n, d, density, seed)
        }
    })
}

fn build_train_config(
    args: &TrainArgs,
    cfg: &ConfigMap,
    seed: u64,
) -> Result<TrainConfig, Failure> {
    let workers = cfg.pick(args.workers, "workers", 4)?;
    if workers == 0 {
        return Err(Failure::config("worker count must be at least 1"));
    }
    let sigma = cfg.pick(args.sigma, "sigma", 1.0)?;
    if sigma <= 0.0 {
        return Err(Failure::config("kernel bandwidth must be positive"));
    }
    let kernel = match args
        .kernel
        .or(cfg.parse_enum("kernel", &[("rbf", KernelArg::Rbf), ("laplace", KernelArg::Laplace)])?)
        .unwrap_or(KernelArg::Rbf)
    {
        KernelArg::Rbf => KernelSpec::new(KernelFamily::GaussianRbf, sigma),
        KernelArg::Laplace => KernelSpec::new(KernelFamily::Laplace, sigma),
    };
    let loss = match args
        .loss
        .or(cfg.parse_enum(
            "loss",
            &[
                ("square", LossArg::Square),
                ("logistic", LossArg::Logistic),
                ("smooth-hinge", LossArg::SmoothHinge),
            ],
        )?)
        .unwrap_or(LossArg::Logistic)
    {
        LossArg::Square => LossSpec::new(LossKind::Square),
        LossArg::Logistic => LossSpec::new(LossKind::Logistic),
        LossArg::SmoothHinge => LossSpec::new(LossKind::SmoothHinge),
    };
    Ok(TrainConfig {
        gamma: cfg.pick(args.gamma, "gamma", 0.05)?,
        lambda: cfg.pick(args.lambda, "lambda", 1e-4)?,
        iterations: cfg.pick(args.iters, "iters", 2000)?,
        loss,
        kernel,
        q: workers,
        seed,
    })
}

fn run_train(args: &TrainArgs, cfg: &ConfigMap, federated: bool) -> Result<ExitCode, Failure> {
    let seed = cfg.seed(args.seed)?;
    let samples = load_samples(args, cfg, seed)?;
    let train_cfg = build_train_config(args, cfg, seed)?;
    let ratio = cfg.pick(args.split_ratio, "split-ratio", 0.75)?;
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Failure::config("split ratio must be in (0, 1)"));
    }
    let scheme = match args
        .partition
        .or(cfg.parse_enum(
            "partition",
            &[("contiguous", PartitionArg::Contiguous), ("round-robin", PartitionArg::RoundRobin)],
        )?)
        .unwrap_or(PartitionArg::Contiguous)
    {
        PartitionArg::Contiguous => PartitionScheme::Contiguous,
        PartitionArg::RoundRobin => PartitionScheme::RoundRobin,
    };
    let data = VerticalDataset::build(&samples, ratio, seed, train_cfg.q, &scheme)
        .map_err(|e| Failure::config(e.to_string()))?;
    let opts = EvalOptions {
        eval_every: Some(cfg.pick(args.eval_every, "eval-every", 100)?),
        ..Default::default()
    };

    let engine_failure = |e: EngineError| match e {
        EngineError::Config(msg) => Failure::config(msg),
        EngineError::ProtocolAbort { iteration, source } => {
            Failure(EXIT_PROTOCOL, format!("iteration {iteration}: {source}"))
        }
    };

    let command = if federated { "train" } else { "oracle" };
    let (metrics, summary): (RunMetrics, output::ModelSummary) = if federated {
        let mut rec = Recorder::counting();
        let (mut model, metrics) =
            train_federated(&data, &train_cfg, &opts, &mut rec).map_err(engine_failure)?;
        let final_error = if data.test.is_empty() {
            None
        } else {
            let mut scratch = Recorder::counting();
            Some(model.evaluate_test_error(&mut scratch).map_err(engine_failure)?)
        };
        let summary = output::ModelSummary::federated(command, &train_cfg, &model, final_error, &rec.ledger);
        (metrics, summary)
    } else {
        let (mut model, metrics) =
            train_centralized(&data, &train_cfg, &opts).map_err(engine_failure)?;
        let final_error = (!data.test.is_empty()).then(|| model.evaluate_test_error());
        let summary = output::ModelSummary::centralized(command, &train_cfg, &model, final_error);
        (metrics, summary)
    };

    if let Some(path) = args.out.clone().or_else(|| cfg.path("out")) {
        output::write_metrics_csv(&path, &metrics).map_err(Failure::io)?;
    }
    if let Some(path) = args.model_out.clone().or_else(|| cfg.path("model-out")) {
        output::write_json(&path, &summary).map_err(Failure::io)?;
    }
    if let Some(last) = metrics.rows.last() {
        println!(
            "{command}: {} iterations, final test error {}, {} messages, {} bytes",
            last.iteration,
            summary
                .final_test_error
                .map_or("n/a".to_string(), |e| format!("{e:.4}")),
            last.messages,
            last.bytes
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_kernel_check(args: &KernelCheckArgs, cfg: &ConfigMap) -> Result<ExitCode, Failure> {
    let seed = cfg.seed(args.seed)?;
    let sigma = cfg.pick(args.sigma, "sigma", 1.0)?;
    if sigma <= 0.0 {
        return Err(Failure::config("kernel bandwidth must be positive"));
    }
    let spec = match args
        .kernel
        .or(cfg.parse_enum("kernel", &[("rbf", KernelArg::Rbf), ("laplace", KernelArg::Laplace)])?)
        .unwrap_or(KernelArg::Rbf)
    {
        KernelArg::Rbf => KernelSpec::new(KernelFamily::GaussianRbf, sigma),
        KernelArg::Laplace => KernelSpec::new(KernelFamily::Laplace, sigma),
    };
    let d = cfg.pick(args.d, "d", 8)?;
    let m_min = cfg.pick(args.m_min, "m-min", 64)?;
    let m_max = cfg.pick(args.m_max, "m-max", 16384)?;
    let grid = cfg.pick(args.grid, "grid", 20)?;
    let repeats = cfg.pick(args.repeats, "repeats", 5)?;
    if m_min == 0 || m_max < m_min || grid == 0 || repeats == 0 || d == 0 {
        return Err(Failure::config("kernel check sizes must be positive and m-max >= m-min"));
    }

    let mut stream = CounterStream::new(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..grid)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| stream.next_f64()).collect();
            let y: Vec<f64> = (0..d).map(|_| stream.next_f64()).collect();
            (x, y)
        })
        .collect();

    let mut rows = Vec::new();
    let mut m = m_min;
    while m <= m_max {
        let mut total = 0.0;
        let mut max_err = 0.0f64;
        for rep in 0..repeats {
            for (x, y) in &pairs {
                let err = (approx_kernel(&spec, x, y, m, seed ^ (rep + 1)) - spec.exact(x, y)).abs();
                total += err;
                max_err = max_err.max(err);
            }
        }
        let mean = total / (repeats as usize * pairs.len()) as f64;
        println!("m={m}: mean_abs_error={mean:.6} max_abs_error={max_err:.6}");
        rows.push((m, mean, max_err));
        if m >= m_max {
            break;
        }
        m = (m * 2).min(m_max);
    }
    if let Some(path) = args.out.clone().or_else(|| cfg.path("out")) {
        output::write_kernel_csv(&path, &rows).map_err(Failure::io)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_comm_bench(args: &CommBenchArgs, cfg: &ConfigMap) -> Result<ExitCode, Failure> {
    let seed = cfg.seed(args.seed)?;
    let spec = args
        .workers
        .clone()
        .or_else(|| cfg.raw("workers"))
        .unwrap_or_else(|| "4,8,16".to_string());
    let mut worker_counts = Vec::new();
    for part in spec.split(',') {
        let q: usize = part
            .trim()
            .parse()
            .map_err(|_| Failure::config(format!("bad worker count `{part}`")))?;
        if q < 2 {
            return Err(Failure::config("comm-bench needs at least 2 workers"));
        }
        worker_counts.push(q);
    }
    let latency = LatencyModel {
        per_round: cfg.pick(args.per_round_cost, "per-round-cost", 1.0)?,
        per_message: cfg.pick(args.per_message_cost, "per-message-cost", 0.05)?,
    };

    let mut results = Vec::new();
    for &q in &worker_counts {
        let mut stream = CounterStream::new(seed ^ q as u64);
        let values: Vec<f64> = (0..q).map(|_| stream.next_f64() * 10.0 - 5.0).collect();
        let expected: f64 = values.iter().sum();
        for structure in [CommStructure::Tree, CommStructure::Star, CommStructure::Ring] {
            let mut rec = Recorder::counting();
            let r = bench_global_sum(structure, &values, seed, &latency, &mut rec);
            assert!(
                (r.sum - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                "benchmark sum mismatch"
            );
            println!(
                "{} q={q}: rounds={} messages={} latency={:.3}",
                r.structure.as_str(),
                r.rounds,
                r.messages,
                r.latency
            );
            results.push(r);
        }
    }
    if let Some(path) = args.out.clone().or_else(|| cfg.path("out")) {
        output::write_bench_csv(&path, &results).map_err(Failure::io)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_audit(args: &AuditArgs, cfg: &ConfigMap) -> Result<ExitCode, Failure> {
    let seed = cfg.seed(args.seed)?;
    let q = cfg.pick(args.workers, "workers", 4)?;
    if q < 2 {
        return Err(Failure::config("the audit needs at least 2 workers"));
    }
    let mut audit_cfg = AuditConfig::new(q, seed);
    audit_cfg.features_per_worker = cfg.pick(args.features_per_worker, "features-per-worker", 5)?;
    audit_cfg.calls = cfg.pick(args.calls, "calls", 400)?;
    audit_cfg.injection = match args.inject.or(cfg.parse_enum(
        "inject",
        &[
            ("no-masks", InjectArg::NoMasks),
            ("same-tree", InjectArg::SameTree),
            ("constant-mask-seed", InjectArg::ConstantMaskSeed),
        ],
    )?) {
        None => Injection::None,
        Some(InjectArg::NoMasks) => Injection::NoMasks,
        Some(InjectArg::SameTree) => Injection::SameTree,
        Some(InjectArg::ConstantMaskSeed) => Injection::ConstantMaskSeed,
    };
    if audit_cfg.features_per_worker == 0 || audit_cfg.calls == 0 {
        return Err(Failure::config("audit sizes must be positive"));
    }

    let report = run_full_audit(&audit_cfg)
        .map_err(|e| Failure(EXIT_PROTOCOL, e.to_string()))?;
    if let Some(path) = args.out.clone().or_else(|| cfg.path("out")) {
        output::write_json(&path, &report).map_err(Failure::io)?;
    }
    println!(
        "audit q={q} seed={seed}: trees_ok={} locality_ok={} masks_checked={} attack={} model_privacy={} -> {}",
        report.tree_pairs_ok,
        report.locality_ok,
        report.mask_uniformity.len(),
        report.attack.verdict,
        report.model_privacy_ok,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_AUDIT))
    }
}
