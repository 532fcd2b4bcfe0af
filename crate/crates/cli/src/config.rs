use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use movebandit::harness::{
    discretize_and_run, run, run_general, AdversarySpec, ContinuousSpace, DriftParams, GeneralOptions,
    LipschitzOracle, LossOracle, RunTrace,
};
use movebandit::metric::{make_metric, MetricFamily, MetricSpace};
use movebandit::smb::Exp3;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Smb,
    Exp3,
}

/// Experiment settings as read from a config file; every field is optional so
/// that flags can fill the gaps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: Option<String>,
    pub algorithm: Option<Algorithm>,
    pub eta: Option<f64>,
    pub eta_multiplier: Option<f64>,
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub adversary: Option<String>,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Config)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::Config)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merge(self, over: ExperimentConfig) -> Self {
        ExperimentConfig {
            metric: over.metric.or(self.metric),
            algorithm: over.algorithm.or(self.algorithm),
            eta: over.eta.or(self.eta),
            eta_multiplier: over.eta_multiplier.or(self.eta_multiplier),
            gamma: over.gamma.or(self.gamma),
            horizon: over.horizon.or(self.horizon),
            seed: over.seed.or(self.seed),
            adversary: over.adversary.or(self.adversary),
            trace: over.trace.or(self.trace),
            summary: over.summary.or(self.summary),
        }
    }

    pub fn resolve(self, env_seed: Option<u64>) -> Result<Resolved, Failure> {
        let metric = self.metric.ok_or_else(|| Failure::Config(anyhow!("no metric given")))?;
        let source = MetricSource::from_str(&metric).map_err(Failure::Config)?;
        let horizon = self.horizon.ok_or_else(|| Failure::Config(anyhow!("no horizon given")))?;
        if horizon == 0 {
            return Err(Failure::Config(anyhow!("horizon must be at least 1")));
        }
        let seed = self
            .seed
            .or(env_seed)
            .ok_or_else(|| Failure::Config(anyhow!("no seed given (use --seed or MOVEBANDIT_SEED)")))?;
        let algorithm = self.algorithm.unwrap_or(Algorithm::Smb);
        let adversary = self.adversary.unwrap_or_else(|| match source {
            MetricSource::Continuous(_) => "drift".to_string(),
            _ => "epoch".to_string(),
        });
        let eta_multiplier = self.eta_multiplier.unwrap_or(1.0);
        if !(eta_multiplier > 0.0 && eta_multiplier.is_finite()) {
            return Err(Failure::Config(anyhow!("eta multiplier must be positive")));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Failure::Config(anyhow!("eta must be positive, got {eta}")));
            }
        }
        let gamma = self.gamma.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Failure::Config(anyhow!("gamma must lie in [0, 1], got {gamma}")));
        }
        if matches!(source, MetricSource::Continuous(_)) && algorithm == Algorithm::Exp3 {
            return Err(Failure::Config(anyhow!("continuous spaces are only run with smb")));
        }
        Ok(Resolved {
            metric,
            algorithm,
            eta: self.eta,
            eta_multiplier,
            gamma,
            horizon,
            seed,
            adversary,
            trace: self.trace.unwrap_or_else(|| PathBuf::from("trace.csv")),
            summary: self.summary.unwrap_or_else(|| PathBuf::from("summary.json")),
        })
    }
}

/// Fully specified experiment, echoed into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Resolved {
    pub metric: String,
    pub algorithm: Algorithm,
    pub eta: Option<f64>,
    pub eta_multiplier: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub seed: u64,
    pub adversary: String,
    pub trace: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone)]
pub enum MetricSource {
    Family(MetricFamily),
    File(PathBuf),
    Continuous(ContinuousSpace),
}

impl FromStr for MetricSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        if let Ok(space) = s.parse::<ContinuousSpace>() {
            return Ok(MetricSource::Continuous(space));
        }
        if let Ok(family) = s.parse::<MetricFamily>() {
            return Ok(MetricSource::Family(family));
        }
        let path = PathBuf::from(s);
        if path.exists() {
            Ok(MetricSource::File(path))
        } else {
            bail!("{s:?} is neither a metric family nor an existing file")
        }
    }
}

/// Load a finite metric from `--spec` or `--metric`.
pub fn load_metric(spec: Option<&str>, file: Option<&Path>) -> Result<MetricSpace, Failure> {
    match (spec, file) {
        (Some(s), None) => {
            let family: MetricFamily = s.parse().map_err(|e| Failure::Config(anyhow::Error::new(e)))?;
            make_metric(family).map_err(|e| Failure::Config(e.into()))
        }
        (None, Some(p)) => MetricSpace::load_csv(p)
            .with_context(|| format!("loading metric {}", p.display()))
            .map_err(Failure::Config),
        _ => Err(Failure::Config(anyhow!("give exactly one of --spec or --metric"))),
    }
}

fn load_source(source: &MetricSource) -> Result<MetricSpace, Failure> {
    match source {
        MetricSource::Family(f) => make_metric(*f).map_err(|e| Failure::Config(e.into())),
        MetricSource::File(p) => load_metric(None, Some(p)),
        MetricSource::Continuous(_) => unreachable!("continuous spaces have no finite metric"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    #[serde(rename = "H")]
    pub depth: usize,
    pub dim: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSummary {
    pub eps: f64,
    pub cover_size: usize,
    pub continuous_comparator: f64,
    pub continuous_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: Resolved,
    pub seed: u64,
    pub total_loss: f64,
    pub total_move: f64,
    pub comparator_loss: f64,
    pub movement_regret: f64,
    pub tree: Option<TreeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousSummary>,
}

pub struct Outcome {
    pub trace: RunTrace,
    pub summary: Summary,
}

fn core_err(e: movebandit::Error) -> Failure {
    if e.is_validation() {
        Failure::Config(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

/// Run one experiment in memory.
pub fn execute(cfg: &Resolved) -> Result<Outcome, Failure> {
    let source = MetricSource::from_str(&cfg.metric).map_err(Failure::Config)?;
    let opts = GeneralOptions { eta: cfg.eta, eta_multiplier: cfg.eta_multiplier };
    let (trace, comparator, tree, continuous) = match source {
        MetricSource::Continuous(space) => {
            let drift: DriftParams = cfg.adversary.parse().map_err(core_err)?;
            let oracle = LipschitzOracle::drift_target(space.dim(), cfg.horizon, cfg.seed, None, drift.period, drift.step)
                .map_err(core_err)?;
            let (trace, rep) =
                discretize_and_run(space, Arc::new(oracle), cfg.horizon, cfg.seed, &opts).map_err(core_err)?;
            let tree = TreeSummary { depth: rep.general.depth, dim: rep.general.dim, eta: rep.general.eta };
            let cont = ContinuousSummary {
                eps: rep.discretization.eps,
                cover_size: rep.discretization.centers.len(),
                continuous_comparator: rep.continuous_comparator,
                continuous_regret: rep.continuous_regret,
            };
            (trace, rep.finite_comparator, Some(tree), Some(cont))
        }
        source => {
            let metric = load_source(&source)?;
            let spec: AdversarySpec = cfg.adversary.parse().map_err(core_err)?;
            let oracle = LossOracle::new(&spec, cfg.seed, &metric, cfg.horizon).map_err(core_err)?;
            let comparator = oracle.comparator().1;
            match cfg.algorithm {
                Algorithm::Smb => {
                    let (trace, rep) = run_general(&metric, &oracle, cfg.horizon, cfg.seed, &opts).map_err(core_err)?;
                    let tree = TreeSummary { depth: rep.depth, dim: rep.dim, eta: rep.eta };
                    (trace, comparator, Some(tree), None)
                }
                Algorithm::Exp3 => {
                    let eta = cfg.eta.unwrap_or_else(|| Exp3::default_eta(metric.len(), cfg.horizon as u64))
                        * cfg.eta_multiplier;
                    let mut policy = Exp3::new(metric.len(), eta, cfg.gamma).map_err(core_err)?;
                    let trace = run(&mut policy, &oracle, &metric, cfg.horizon, cfg.seed).map_err(core_err)?;
                    (trace, comparator, None, None)
                }
            }
        }
    };
    let b = trace.breakdown(comparator);
    let summary = Summary {
        config: cfg.clone(),
        seed: cfg.seed,
        total_loss: b.total_loss,
        total_move: b.total_move,
        comparator_loss: b.comparator_loss,
        movement_regret: b.movement_regret,
        tree,
        continuous,
    };
    Ok(Outcome { trace, summary })
}
