//! The invariant suite behind `movebandit verify`.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use movebandit::harness::{
    enumerate_estimator_moments, marginal_check, mc_movement_check, AdversarySpec, LossOracle,
};
use movebandit::hst::{build_hst, check_conditions, reshape_well_behaved, verify_dominance, HstTree};
use movebandit::metric::{
    complexity_report, covering_number, make_metric, packing_number, CountMode, MetricFamily, MetricSpace,
};
use movebandit::rng;

pub const CHECKS: &[&str] = &["estimator", "marginals", "movement", "dominance", "reshape", "complexity", "lipschitz"];

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub instances: usize,
    pub max_k: usize,
    pub max_metric_k: usize,
    pub samples: u64,
    pub inject_faulty_tree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub ok: bool,
    pub details: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub ok: bool,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

pub fn run_suite(only: &[String], opts: &SuiteOptions) -> anyhow::Result<SuiteReport> {
    let mut checks = Vec::new();
    for &name in CHECKS {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        log::info!("running {name}");
        let (ok, details) = match name {
            "estimator" => estimator(opts)?,
            "marginals" => marginals(opts)?,
            "movement" => movement(opts)?,
            "dominance" => dominance(opts)?,
            "reshape" => reshape(opts)?,
            "complexity" => complexity(opts)?,
            _ => lipschitz(opts)?,
        };
        checks.push(CheckResult { name: name.to_string(), ok, details });
    }
    if opts.inject_faulty_tree {
        checks.push(faulty_tree()?);
    }
    Ok(SuiteReport { ok: checks.iter().all(|c| c.ok), seed: opts.seed, checks })
}

/// Random distribution with a spread of magnitudes.
fn random_distribution<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| (-4.0 * rng.gen::<f64>()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn estimator(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let mut r = rng::stream(opts.seed, "verify/estimator");
    let mut worst_bias = f64::NEG_INFINITY;
    let mut worst_ratio = 0.0f64;
    let mut worst_importance = 0.0f64;
    let mut failures = Vec::new();
    for n in 0..opts.instances {
        let k = r.gen_range(2..=opts.max_k.max(2));
        let depth = r.gen_range(1..=4);
        let tree = HstTree::random(k, depth, &mut r)?;
        let p = random_distribution(k, &mut r);
        let loss: Vec<f64> = (0..k).map(|_| r.gen()).collect();
        let eta = if r.gen::<bool>() { 1e-4 } else { 1e-2 };
        let rep = enumerate_estimator_moments(&tree, &p, eta, &loss)?;
        let bias = rep.gap.iter().map(|g| -g).fold(f64::NEG_INFINITY, f64::max);
        let imp = rep.importance.iter().map(|w| (w.expectation - 1.0).abs()).fold(0.0, f64::max);
        worst_bias = worst_bias.max(bias);
        worst_importance = worst_importance.max(imp);
        worst_ratio = worst_ratio.max(rep.second_moment / rep.second_moment_bound);
        if bias > 1e-9 || rep.second_moment > rep.second_moment_bound + 1e-9 || imp > 1e-12 {
            failures.push(json!({"instance": n, "k": k, "depth": depth, "eta": eta, "bias": bias, "importance": imp}));
        }
    }
    Ok((
        failures.is_empty(),
        json!({
            "instances": opts.instances,
            "worstBias": worst_bias,
            "worstSecondMomentRatio": worst_ratio,
            "worstImportanceError": worst_importance,
            "failures": failures,
        }),
    ))
}

fn marginals(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let tree = HstTree::complete_binary(3)?;
    let rep = marginal_check(&tree, opts.seed, 10_000, 0.01)?;
    Ok((rep.max_deviation <= 1e-10, serde_json::to_value(rep)?))
}

fn movement(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let tree = HstTree::complete_binary(3)?;
    let rep = mc_movement_check(&tree, opts.seed, 1000, opts.samples, None)?;
    Ok((rep.ok(), serde_json::to_value(rep)?))
}

fn dominance(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let mut r = rng::stream(opts.seed, "verify/dominance");
    let mut metrics: Vec<MetricSpace> = Vec::new();
    for _ in 0..opts.instances {
        let k = r.gen_range(2..=opts.max_metric_k.max(2));
        metrics.push(make_metric(MetricFamily::Random { k, seed: r.gen() })?);
    }
    for k in [2, 5, 16, opts.max_metric_k.max(2)] {
        metrics.push(make_metric(MetricFamily::Uniform { k })?);
        metrics.push(make_metric(MetricFamily::Grid1d { k })?);
    }
    let mut violations = Vec::new();
    let mut max_ratio = 0.0f64;
    for m in &metrics {
        let tree = match build_hst(m) {
            Ok(t) => t,
            Err(e) => {
                violations.push(json!({"k": m.len(), "error": e.to_string()}));
                continue;
            }
        };
        let rep = verify_dominance(m, &tree)?;
        max_ratio = max_ratio.max(rep.max_ratio);
        for v in rep.violations {
            violations.push(json!({"k": m.len(), "i": v.i, "j": v.j, "dist": v.dist, "tree": v.tree}));
        }
    }
    Ok((
        violations.is_empty(),
        json!({"metrics": metrics.len(), "maxRatio": max_ratio, "violations": violations}),
    ))
}

fn reshape(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let mut r = rng::stream(opts.seed, "verify/reshape");
    let mut failures = Vec::new();
    let trees = 2 * opts.instances;
    for n in 0..trees {
        let k = r.gen_range(1..=opts.max_metric_k.max(1));
        let depth = r.gen_range(1..=6);
        let tree = HstTree::random(k, depth, &mut r)?;
        for horizon in [1_000u64, 1_000_000] {
            let out = reshape_well_behaved(&tree, horizon)?;
            let cond = check_conditions(&out, horizon);
            let same_dim = out.complexity().value == tree.complexity().value;
            let mut shrunk = false;
            for i in 0..k {
                for j in 0..k {
                    if out.distance(i, j)? < tree.distance(i, j)? {
                        shrunk = true;
                    }
                }
            }
            if !cond.well_behaved || !same_dim || shrunk {
                failures.push(json!({
                    "tree": n, "horizon": horizon, "wellBehaved": cond.well_behaved,
                    "dimPreserved": same_dim, "distancesShrunk": shrunk,
                }));
            }
        }
    }
    Ok((failures.is_empty(), json!({"trees": trees, "failures": failures})))
}

fn complexity(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let mut r = rng::stream(opts.seed, "verify/complexity");
    let count = opts.instances.div_ceil(2);
    let mut failures = Vec::new();
    for _ in 0..count {
        let k = r.gen_range(1..=12);
        let m = make_metric(MetricFamily::Random { k, seed: r.gen() })?;
        let rep = complexity_report(&m, CountMode::Exact)?;
        let mut ok = rep.pack_complexity <= rep.cover_complexity && rep.cover_complexity <= 2.0 * rep.pack_complexity;
        for (idx, &eps) in rep.breakpoints.iter().enumerate() {
            let half = packing_number(&m, eps / 2.0, CountMode::Exact)?;
            let cover = covering_number(&m, eps, CountMode::Exact)?;
            ok &= rep.pack_nums[idx] <= cover && cover <= half;
        }
        if !ok {
            failures.push(json!({"k": k, "coverComplexity": rep.cover_complexity, "packComplexity": rep.pack_complexity}));
        }
    }
    Ok((failures.is_empty(), json!({"metrics": count, "failures": failures})))
}

fn lipschitz(opts: &SuiteOptions) -> anyhow::Result<(bool, Value)> {
    let mut r = rng::stream(opts.seed, "verify/lipschitz");
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let k = r.gen_range(2..=opts.max_metric_k.max(2));
        let m = make_metric(MetricFamily::Random { k, seed: r.gen() })?;
        let spec = AdversarySpec::DriftTarget { start: None, period: r.gen_range(0..20), step: r.gen() };
        let o = LossOracle::new(&spec, r.gen(), &m, 200)?;
        worst = worst.max(o.lipschitz_excess(&m, &(1..=200).collect::<Vec<_>>()));
    }
    Ok((worst <= 1e-12, json!({"oracles": 10, "worstExcess": worst})))
}

/// Two points at distance one whose tree distance is only 1/8.
fn faulty_tree() -> anyhow::Result<CheckResult> {
    let m = make_metric(MetricFamily::Uniform { k: 2 })?;
    let tree = HstTree::from_parts(
        4,
        vec![0, 0, 1, 2, 3, 4],
        vec![Some(2), Some(2), Some(3), Some(4), Some(5), None],
        vec![0, 1],
    )?;
    let rep = verify_dominance(&m, &tree)?;
    Ok(CheckResult { name: "injected-tree".into(), ok: rep.holds(), details: serde_json::to_value(rep)? })
}
