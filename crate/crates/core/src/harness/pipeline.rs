//! End-to-end pipelines: general finite metrics through a dominating tree, and
//! continuous cubes through a finite cover.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::oracle::{LipschitzOracle, LossOracle};
use super::run::{run_scaled, RunTrace};
use crate::error::{Error, Result};
use crate::hst::{build_hst, reshape_traced, HstTree, ReshapeStep};
use crate::metric::{linf_matrix, MetricSpace};
use crate::smb::{default_eta, Smb};

/// Losses are divided by this before reaching the tree policy, so that tree
/// distances (scaled by the same factor) dominate the metric.
pub const LOSS_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeneralOptions {
    /// Fixed learning rate; otherwise the default for the reshaped tree.
    pub eta: Option<f64>,
    pub eta_multiplier: f64,
}

impl Default for GeneralOptions {
    fn default() -> Self {
        GeneralOptions { eta: None, eta_multiplier: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeneralReport {
    pub built_depth: usize,
    pub depth: usize,
    pub dim: f64,
    pub eta: f64,
    pub reshape_steps: Vec<ReshapeStep>,
    /// Every executed switch satisfied `d(i, j) <= 4 tree(i, j)`.
    pub dominance_held: bool,
    pub truncated_rounds: u64,
    #[serde(skip)]
    pub tree: Option<HstTree>,
}

/// Build a dominating tree, reshape it for `horizon` and run the tree policy
/// on losses scaled by [`LOSS_SCALE`].
pub fn run_general(
    metric: &MetricSpace,
    oracle: &LossOracle,
    horizon: usize,
    seed: u64,
    opts: &GeneralOptions,
) -> Result<(RunTrace, GeneralReport)> {
    let built = build_hst(metric)?;
    run_on_tree(metric, &built, oracle, horizon, seed, opts)
}

/// Same as [`run_general`] but starting from a given tree over the actions.
pub fn run_on_tree(
    metric: &MetricSpace,
    built: &HstTree,
    oracle: &LossOracle,
    horizon: usize,
    seed: u64,
    opts: &GeneralOptions,
) -> Result<(RunTrace, GeneralReport)> {
    if built.num_actions() != metric.len() {
        return Err(Error::ActionMismatch { tree: built.num_actions(), metric: metric.len() });
    }
    let (tree, steps) = reshape_traced(built, horizon as u64)?;
    let dim = tree.complexity().value;
    let eta = opts.eta.unwrap_or_else(|| default_eta(tree.depth(), dim, horizon as u64)) * opts.eta_multiplier;
    let tree = Arc::new(tree);
    let mut smb = Smb::new(Arc::clone(&tree), eta)?;
    let trace = run_scaled(&mut smb, oracle, metric, horizon, seed, LOSS_SCALE)?;
    let mut dominance_held = true;
    for w in trace.rounds.windows(2) {
        let (a, b) = (w[0].action, w[1].action);
        if a != b && metric.dist(a, b) > 4.0 * tree.distance(a, b)? {
            dominance_held = false;
        }
    }
    let report = GeneralReport {
        built_depth: built.depth(),
        depth: tree.depth(),
        dim,
        eta,
        reshape_steps: steps,
        dominance_held,
        truncated_rounds: smb.stats().truncated_rounds,
        tree: Some((*tree).clone()),
    };
    Ok((trace, report))
}

/// Continuous action spaces under the max-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ContinuousSpace {
    Interval,
    Hypercube { d: usize },
}

impl ContinuousSpace {
    pub fn dim(&self) -> usize {
        match self {
            ContinuousSpace::Interval => 1,
            ContinuousSpace::Hypercube { d } => *d,
        }
    }
}

impl FromStr for ContinuousSpace {
    type Err = Error;

    /// `interval` or `cube:D`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "interval" => Ok(ContinuousSpace::Interval),
            Some(("cube", d)) => d
                .parse()
                .map(|d| ContinuousSpace::Hypercube { d })
                .map_err(|_| Error::BadSpec(format!("bad dimension in {s:?}"))),
            _ => Err(Error::BadSpec(format!("unknown space {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Discretization {
    pub eps: f64,
    pub spacing: f64,
    pub per_axis: usize,
    pub centers: Vec<Vec<f64>>,
}

/// Cover of `[0, 1]^d` at scale `eps = T^(-1/(d+2))`: a product grid with
/// spacing `4 eps` whose centers sit at cell midpoints, clamped into the cube.
pub fn discretization(space: ContinuousSpace, horizon: usize) -> Result<Discretization> {
    let d = space.dim();
    if d == 0 || d > 3 {
        return Err(Error::DimensionUnsupported(d));
    }
    let eps = (horizon.max(1) as f64).powf(-1.0 / (d as f64 + 2.0));
    let spacing = 4.0 * eps;
    let per_axis = ((1.0 / spacing) - 1e-9).ceil().max(1.0) as usize;
    let axis: Vec<f64> = (0..per_axis).map(|m| (spacing * (m as f64 + 0.5)).min(1.0)).collect();
    let mut centers = vec![Vec::new()];
    for _ in 0..d {
        centers = centers
            .into_iter()
            .flat_map(|c| {
                axis.iter().map(move |&x| {
                    let mut c = c.clone();
                    c.push(x);
                    c
                })
            })
            .collect();
    }
    Ok(Discretization { eps, spacing, per_axis, centers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiscretizeReport {
    pub discretization: Discretization,
    pub general: GeneralReport,
    /// Best fixed point of the whole cube (grid search).
    pub continuous_comparator: f64,
    /// Best fixed cover point.
    pub finite_comparator: f64,
    pub continuous_regret: f64,
}

/// Grid resolution per axis for the continuous comparator search.
fn comparator_resolution(d: usize) -> usize {
    match d {
        1 => 1000,
        2 => 100,
        _ => 20,
    }
}

/// Discretize the cube, then run the general pipeline on the cover.
pub fn discretize_and_run(
    space: ContinuousSpace,
    oracle: Arc<LipschitzOracle>,
    horizon: usize,
    seed: u64,
    opts: &GeneralOptions,
) -> Result<(RunTrace, DiscretizeReport)> {
    let disc = discretization(space, horizon)?;
    if oracle.dim() != space.dim() {
        return Err(Error::BadSpec("oracle dimension does not match the space".into()));
    }
    let metric = MetricSpace::from_matrix(&linf_matrix(&disc.centers))?;
    let finite = LossOracle::on_points(Arc::clone(&oracle), disc.centers.clone())?;
    let (trace, general) = run_general(&metric, &finite, horizon, seed, opts)?;
    let (_, continuous_comparator) = oracle.best_fixed_loss(comparator_resolution(space.dim()));
    let finite_comparator = finite.comparator().1;
    let continuous_regret = trace.total_loss() + trace.total_move() - continuous_comparator;
    Ok((
        trace,
        DiscretizeReport { discretization: disc, general, continuous_comparator, finite_comparator, continuous_regret },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::oracle::AdversarySpec;
    use crate::metric::{make_metric, MetricFamily};

    #[test]
    fn discretization_examples() {
        let d = discretization(ContinuousSpace::Interval, 1000).unwrap();
        assert!((d.eps - 0.1).abs() < 1e-12);
        assert_eq!(d.centers.len(), 3);
        for (c, want) in d.centers.iter().zip([0.2, 0.6, 1.0]) {
            assert!((c[0] - want).abs() < 1e-12);
        }
        let d2 = discretization(ContinuousSpace::Hypercube { d: 2 }, 10_000).unwrap();
        assert!((d2.eps - 0.1).abs() < 1e-12);
        assert_eq!(d2.centers.len(), 9);
        assert!(matches!(
            discretization(ContinuousSpace::Hypercube { d: 4 }, 10),
            Err(Error::DimensionUnsupported(4))
        ));
        assert_eq!(discretization(ContinuousSpace::Interval, 1).unwrap().centers, vec![vec![1.0]]);
    }

    #[test]
    fn cover_radius() {
        for t in [10, 1000, 54321] {
            let d = discretization(ContinuousSpace::Interval, t).unwrap();
            for x in (0..=1000).map(|i| i as f64 / 1000.0) {
                let near = d.centers.iter().map(|c| (c[0] - x).abs()).fold(f64::INFINITY, f64::min);
                assert!(near <= 2.0 * d.eps + 1e-12);
            }
        }
    }

    #[test]
    fn space_strings() {
        assert_eq!("interval".parse::<ContinuousSpace>().unwrap(), ContinuousSpace::Interval);
        assert_eq!("cube:3".parse::<ContinuousSpace>().unwrap(), ContinuousSpace::Hypercube { d: 3 });
        assert!("ball".parse::<ContinuousSpace>().is_err());
    }

    #[test]
    fn general_run_on_grid() {
        let g = make_metric(MetricFamily::Grid1d { k: 9 }).unwrap();
        let spec = AdversarySpec::DriftTarget { start: Some(3), period: 0, step: 0.25 };
        let o = LossOracle::new(&spec, 2, &g, 2000).unwrap();
        let (tr, rep) = run_general(&g, &o, 2000, 5, &GeneralOptions::default()).unwrap();
        assert_eq!(tr.rounds.len(), 2000);
        assert!(rep.dominance_held);
        assert!(rep.depth >= rep.built_depth);
        let late: f64 = tr.rounds[1500..].iter().map(|r| r.loss).sum::<f64>() / 500.0;
        let early: f64 = tr.rounds[..500].iter().map(|r| r.loss).sum::<f64>() / 500.0;
        assert!(late < early);
    }

    #[test]
    fn continuous_run() {
        let o = Arc::new(LipschitzOracle::drift_target(1, 1000, 3, Some(vec![0.3]), 0, 0.0).unwrap());
        let (tr, rep) =
            discretize_and_run(ContinuousSpace::Interval, o, 1000, 1, &GeneralOptions::default()).unwrap();
        assert_eq!(tr.rounds.len(), 1000);
        assert_eq!(rep.continuous_comparator, 0.0);
        assert!((rep.finite_comparator - 100.0).abs() < 1e-9);
        assert_eq!(rep.continuous_regret, tr.total_loss() + tr.total_move());
    }
}
