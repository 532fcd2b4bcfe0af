mod config;
mod suite;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use movebandit::harness::loglog_slope;
use movebandit::hst::{
    build_hst, check_conditions_with, reshape_traced, verify_dominance, ConditionSet, HstTree,
};
use movebandit::metric::{complexity_report, CountMode};

use config::{execute, load_metric, Algorithm, ExperimentConfig};

/// Failure classes, mapped to exit codes 1 (invariant), 2 (config) and 3 (runtime).
#[derive(Debug)]
pub enum Failure {
    Invariant(anyhow::Error),
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invariant(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invariant(e) | Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(name = "movebandit", version, about = "Bandits with movement costs on finite metric spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Metric analysis.
    #[command(subcommand)]
    Metric(MetricCommand),
    /// Tree construction and reshaping.
    #[command(subcommand)]
    Hst(HstCommand),
    /// Run one experiment and write its trace and summary.
    Run(RunArgs),
    /// Run a grid of horizons and seeds in parallel.
    Sweep(SweepArgs),
    /// Fit the log-log slope of mean regret against the horizon in a sweep CSV.
    Slope {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct MetricInput {
    /// Metric family such as uniform:8, grid1d:5, gridlinf:2:4 or random:10:7.
    #[arg(long, conflicts_with = "metric")]
    spec: Option<String>,
    /// Metric CSV file with a label header row.
    #[arg(long)]
    metric: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MetricCommand {
    /// Print covering and packing numbers and complexities as JSON.
    Analyze {
        #[command(flatten)]
        input: MetricInput,
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Also write the per-radius table to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum HstCommand {
    /// Build a dominating tree for a metric.
    Build {
        #[command(flatten)]
        input: MetricInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deepen or collapse a tree until it is well-behaved for a horizon.
    Reshape {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        horizon: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report the well-behaved conditions, and dominance when a metric is given.
    Check {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        horizon: u64,
        #[arg(long, value_enum, default_value = "appendix")]
        conditions: Conditions,
        #[command(flatten)]
        input: MetricInput,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Conditions {
    Appendix,
    MainText,
}

#[derive(Args, Default)]
struct ExperimentFlags {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metric family, metric CSV path, `interval` or `cube:D`.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eta_multiplier: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Loss sequence such as epoch, gap:gap=0.2, drift:period=50,step=0.25 or file:path=L.csv.
    #[arg(long)]
    adversary: Option<String>,
}

impl ExperimentFlags {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Ok(base.merge(ExperimentConfig {
            metric: self.metric.clone(),
            algorithm: self.algorithm,
            eta: self.eta,
            eta_multiplier: self.eta_multiplier,
            gamma: self.gamma,
            adversary: self.adversary.clone(),
            ..ExperimentConfig::default()
        }))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trace CSV path (default trace.csv).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Summary JSON path (default summary.json).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    horizons: Vec<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    seeds: Vec<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the fitted log-log slope of mean regret against T.
    #[arg(long)]
    fit_slope: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run only the named checks.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random instances per check.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Largest action count for the enumerated estimator instances.
    #[arg(long, default_value_t = 16)]
    max_k: usize,
    /// Largest random metric size.
    #[arg(long, default_value_t = 32)]
    max_metric_k: usize,
    /// Monte Carlo samples for the movement check.
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_faulty_tree: bool,
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("MOVEBANDIT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Config(anyhow!("MOVEBANDIT_SEED is not an integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn count_mode(s: &str) -> Result<CountMode, Failure> {
    s.parse().map_err(|e: movebandit::Error| Failure::Config(e.into()))
}

fn load_tree(path: &Path) -> Result<HstTree, Failure> {
    HstTree::load(path)
        .with_context(|| format!("loading tree {}", path.display()))
        .map_err(Failure::Config)
}

fn cmd_metric(cmd: MetricCommand) -> Result<(), Failure> {
    let MetricCommand::Analyze { input, mode, csv } = cmd;
    let m = load_metric(input.spec.as_deref(), input.metric.as_deref())?;
    let report = complexity_report(&m, count_mode(&mode)?).map_err(|e| Failure::Config(e.into()))?;
    if let Some(path) = csv {
        let mut w = csv_writer(&path)?;
        writeln!(w, "eps,cover,pack")?;
        for ((e, c), p) in report.breakpoints.iter().zip(&report.cover_nums).zip(&report.pack_nums) {
            writeln!(w, "{e},{c},{p}")?;
        }
        w.flush()?;
    }
    let mut value = serde_json::to_value(&report).map_err(anyhow::Error::from)?;
    value["k"] = json!(m.len());
    write_json(None, &value)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>, Failure> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn tree_json(t: &HstTree) -> Result<serde_json::Value, Failure> {
    Ok(serde_json::to_value(t.to_file()).map_err(anyhow::Error::from)?)
}

fn cmd_hst(cmd: HstCommand) -> Result<(), Failure> {
    match cmd {
        HstCommand::Build { input, out } => {
            let m = load_metric(input.spec.as_deref(), input.metric.as_deref())?;
            let tree = build_hst(&m).map_err(|e| match e {
                movebandit::Error::DominanceViolation { .. } => Failure::Invariant(e.into()),
                e => Failure::Runtime(e.into()),
            })?;
            let dom = verify_dominance(&m, &tree).map_err(anyhow::Error::from)?;
            let mut value = json!({
                "depth": tree.depth(),
                "dim": tree.complexity().value,
                "levelCounts": tree.level_counts(),
                "maxRatio": dom.max_ratio,
            });
            match out {
                Some(p) => tree.save(&p).with_context(|| format!("writing {}", p.display()))?,
                None => value["tree"] = tree_json(&tree)?,
            }
            write_json(None, &value)
        }
        HstCommand::Reshape { tree, horizon, out } => {
            let t = load_tree(&tree)?;
            let (shaped, steps) = reshape_traced(&t, horizon).map_err(anyhow::Error::from)?;
            let mut value = json!({
                "depth": shaped.depth(),
                "dim": shaped.complexity().value,
                "steps": steps,
            });
            match out {
                Some(p) => shaped.save(&p).with_context(|| format!("writing {}", p.display()))?,
                None => value["tree"] = tree_json(&shaped)?,
            }
            write_json(None, &value)
        }
        HstCommand::Check { tree, horizon, conditions, input } => {
            let t = load_tree(&tree)?;
            let set = match conditions {
                Conditions::Appendix => ConditionSet::Appendix,
                Conditions::MainText => ConditionSet::MainText,
            };
            let report = check_conditions_with(&t, horizon, set);
            let mut value = serde_json::to_value(&report).map_err(anyhow::Error::from)?;
            let mut violated = None;
            if input.spec.is_some() || input.metric.is_some() {
                let m = load_metric(input.spec.as_deref(), input.metric.as_deref())?;
                let dom = verify_dominance(&m, &t).map_err(|e| Failure::Config(e.into()))?;
                if let Some(v) = dom.violations.first() {
                    violated = Some(format!("pair ({}, {}): distance {} exceeds 4 x tree distance {}", v.i, v.j, v.dist, v.tree));
                }
                value["dominance"] = serde_json::to_value(&dom).map_err(anyhow::Error::from)?;
            }
            write_json(None, &value)?;
            match violated {
                Some(msg) => Err(Failure::Invariant(anyhow!("dominance violated at {msg}"))),
                None => Ok(()),
            }
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = args.flags.config()?.merge(ExperimentConfig {
        horizon: args.horizon,
        seed: args.seed,
        trace: args.trace,
        summary: args.summary,
        ..ExperimentConfig::default()
    });
    let cfg = cfg.resolve(env_seed()?)?;
    let outcome = execute(&cfg)?;
    let mut w = csv_writer(&cfg.trace)?;
    outcome.trace.write_csv(&mut w).map_err(anyhow::Error::from)?;
    w.flush()?;
    let summary = serde_json::to_value(&outcome.summary).map_err(anyhow::Error::from)?;
    write_json(Some(&cfg.summary), &summary)?;
    println!("movement_regret={}", outcome.summary.movement_regret);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    if args.horizons.is_empty() {
        return Err(Failure::Config(anyhow!("empty horizon grid")));
    }
    if args.seeds.is_empty() {
        return Err(Failure::Config(anyhow!("empty seed list")));
    }
    let base = args.flags.config()?;
    let mut cells = Vec::new();
    for &t in &args.horizons {
        for &s in &args.seeds {
            let cfg = base.clone().merge(ExperimentConfig { horizon: Some(t), seed: Some(s), ..Default::default() });
            cells.push((t, s, cfg.resolve(None)?));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(anyhow::Error::from)?;
    let results: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|(t, s, cfg)| (*t, *s, execute(cfg).map(|o| o.summary)))
            .collect()
    });

    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(csv_writer(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    writeln!(out, "T,seed,movement_regret,total_move,status")?;
    let mut failed = 0;
    for (t, s, r) in &results {
        match r {
            Ok(sum) => writeln!(out, "{t},{s},{},{},ok", sum.movement_regret, sum.total_move)?,
            Err(e) => {
                failed += 1;
                let msg = format!("{:#}", e.error()).replace([',', '\n'], ";");
                writeln!(out, "{t},{s},,,error: {msg}")?;
            }
        }
    }
    out.flush()?;
    drop(out);
    if args.fit_slope {
        let points = mean_regret_points(results.iter().filter_map(|(t, _, r)| {
            r.as_ref().ok().map(|s| (*t, s.movement_regret))
        }));
        report_slope(&points, args.out.is_none());
    }
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} of {} sweep cells failed", results.len())));
    }
    Ok(())
}

fn mean_regret_points(rows: impl Iterator<Item = (usize, f64)>) -> Vec<(f64, f64)> {
    let mut by_t: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (t, r) in rows {
        let e = by_t.entry(t).or_default();
        e.0 += r;
        e.1 += 1;
    }
    by_t.into_iter().map(|(t, (sum, n))| (t as f64, sum / n as f64)).collect()
}

fn report_slope(points: &[(f64, f64)], to_stderr: bool) {
    let line = match loglog_slope(points) {
        Some(s) => format!("slope={s}"),
        None => "slope=nan".to_string(),
    };
    if to_stderr {
        eprintln!("{line}");
    } else {
        println!("{line}");
    }
}

fn cmd_slope(input: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))
        .map_err(Failure::Config)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 5 && f[4] == "ok" {
            let t = f[0].parse().map_err(|_| Failure::Config(anyhow!("bad T in {line:?}")))?;
            let r = f[2].parse().map_err(|_| Failure::Config(anyhow!("bad regret in {line:?}")))?;
            rows.push((t, r));
        }
    }
    report_slope(&mean_regret_points(rows.into_iter()), false);
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    if let Some(bad) = args.only.iter().find(|o| !suite::CHECKS.contains(&o.as_str())) {
        return Err(Failure::Config(anyhow!("unknown check {bad:?}; known: {}", suite::CHECKS.join(", "))));
    }
    let seed = args.seed.or(env_seed()?).unwrap_or(1);
    let opts = suite::SuiteOptions {
        seed,
        instances: args.instances,
        max_k: args.max_k.clamp(2, 64),
        max_metric_k: args.max_metric_k.clamp(2, 256),
        samples: args.samples.max(1),
        inject_faulty_tree: args.inject_faulty_tree,
    };
    let report = suite::run_suite(&args.only, &opts)?;
    let value = serde_json::to_value(&report).map_err(anyhow::Error::from)?;
    write_json(None, &value)?;
    if let Some(p) = &args.report {
        write_json(Some(p), &value)?;
    }
    if report.ok {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
        Err(Failure::Invariant(anyhow!("failed checks: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Metric(c) => cmd_metric(c),
        Command::Hst(c) => cmd_hst(c),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Slope { input } => cmd_slope(&input),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
