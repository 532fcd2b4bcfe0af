//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use movebandit::harness::{
    discretization, discretize_and_run, enumerate_estimator_moments, loglog_slope, marginal_check,
    mc_movement_check, run, run_general, AdversarySpec, ContinuousSpace, GeneralOptions, LipschitzOracle,
    LossOracle, MomentsReport, DRIFT_PERIOD, DRIFT_STEP,
};
use movebandit::hst::{
    build_hst, check_conditions, reshape_traced, verify_dominance, HstTree, ReshapeStep,
};
use movebandit::metric::{
    complexity_report, covering_complexity, covering_number, make_metric, packing_number, CountMode, MetricFamily,
    MetricSpace,
};
use movebandit::rng;
use movebandit::smb::Exp3;

const SEED: u64 = 20_240_601;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

fn random_distribution<R: Rng>(k: usize, r: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| (-4.0 * r.gen::<f64>()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// The 50 enumerated instances shared by criteria 1 to 3.
fn estimator_instances() -> (Vec<MomentsReport>, Duration) {
    let start = Instant::now();
    let mut r = rng::stream(SEED, "acceptance/estimator");
    let reports = (0..50)
        .map(|_| {
            let k = r.gen_range(2..=16);
            let depth = r.gen_range(1..=4);
            let tree = HstTree::random(k, depth, &mut r).unwrap();
            let p = random_distribution(k, &mut r);
            let loss: Vec<f64> = (0..k).map(|_| r.gen()).collect();
            let eta = if r.gen::<bool>() { 1e-4 } else { 1e-2 };
            enumerate_estimator_moments(&tree, &p, eta, &loss).unwrap()
        })
        .collect();
    (reports, start.elapsed())
}

fn c1_bias(reps: &[MomentsReport], took: Duration) -> Verdict {
    let worst = reps.iter().flat_map(|r| r.gap.iter()).map(|g| -g).fold(f64::NEG_INFINITY, f64::max);
    let ok = worst <= 1e-9 && took < Duration::from_secs(10);
    verdict(ok, format!("max E[est]-loss = {worst:.3e} over 50 instances, {took:.2?}"))
}

fn c2_second_moment(reps: &[MomentsReport], took: Duration) -> Verdict {
    let over = reps.iter().filter(|r| r.second_moment > r.second_moment_bound + 1e-9).count();
    let ratio = reps.iter().map(|r| r.second_moment / r.second_moment_bound).fold(0.0, f64::max);
    let ok = over == 0 && took < Duration::from_secs(10);
    verdict(ok, format!("{over} instances above bound, max moment/bound = {ratio:.3e}, {took:.2?}"))
}

fn c3_importance(reps: &[MomentsReport]) -> Verdict {
    let weights: Vec<f64> = reps.iter().flat_map(|r| r.importance.iter().map(|w| w.expectation)).collect();
    let worst = weights.iter().map(|e| (e - 1.0).abs()).fold(0.0, f64::max);
    verdict(worst <= 1e-12, format!("{} subtrees, max |E - 1| = {worst:.3e}", weights.len()))
}

fn c4_marginals() -> Verdict {
    let tree = HstTree::complete_binary(3).unwrap();
    let rep = marginal_check(&tree, SEED, 10_000, 0.01).unwrap();
    verdict(
        rep.max_deviation <= 1e-10 && rep.checked_rounds > 0,
        format!(
            "{} checked rounds ({} truncated), max deviation {:.3e}",
            rep.checked_rounds, rep.truncated_rounds, rep.max_deviation
        ),
    )
}

fn c5_movement() -> Verdict {
    let start = Instant::now();
    let tree = HstTree::complete_binary(3).unwrap();
    let rep = mc_movement_check(&tree, SEED, 1000, 100_000, None).unwrap();
    let took = start.elapsed();
    let levels: Vec<String> = rep
        .levels
        .iter()
        .map(|l| format!("h{}: {:.4} <= {:.4}+{:.4}", l.level, l.estimate, l.bound, l.margin))
        .collect();
    verdict(
        rep.ok() && rep.samples >= 100_000 && took < Duration::from_secs(60),
        format!(
            "{}; move {:.4} <= {:.4}+{:.4}; {} samples, {took:.2?}",
            levels.join(", "),
            rep.mean_tree_move,
            rep.move_bound,
            rep.move_margin,
            rep.samples
        ),
    )
}

fn c6_dominance() -> Verdict {
    let mut r = rng::stream(SEED, "acceptance/dominance");
    let mut metrics: Vec<MetricSpace> = (0..50)
        .map(|_| {
            let k = r.gen_range(2..=32);
            make_metric(MetricFamily::Random { k, seed: r.gen() }).unwrap()
        })
        .collect();
    for k in [2, 3, 5, 8, 13, 16, 20, 32] {
        metrics.push(make_metric(MetricFamily::Uniform { k }).unwrap());
        metrics.push(make_metric(MetricFamily::Grid1d { k }).unwrap());
    }
    let mut violations = 0;
    let mut ratios = Vec::new();
    for m in &metrics {
        let tree = build_hst(m).unwrap();
        violations += verify_dominance(m, &tree).unwrap().violations.len();
        if m.len() <= 20 {
            let cc = covering_complexity(m, CountMode::Exact).unwrap();
            ratios.push(tree.complexity().value / (cc * (m.len() as f64).ln()));
        }
    }
    ratios.sort_by(f64::total_cmp);
    let (lo, hi) = (ratios[0], ratios[ratios.len() - 1]);
    let median = ratios[ratios.len() / 2];
    verdict(
        violations == 0 && hi <= 2.0,
        format!(
            "{} metrics, {violations} violating pairs; c = dim/(C_c ln k) on {} metrics: min {lo:.3}, median {median:.3}, max {hi:.3}",
            metrics.len(),
            ratios.len()
        ),
    )
}

fn c7_reshape() -> Verdict {
    let mut r = rng::stream(SEED, "acceptance/reshape");
    let mut failures = 0;
    for _ in 0..100 {
        let k = r.gen_range(1..=32);
        let depth = r.gen_range(1..=6);
        let tree = HstTree::random(k, depth, &mut r).unwrap();
        for horizon in [1_000u64, 1_000_000] {
            let (out, _) = reshape_traced(&tree, horizon).unwrap();
            let grows = (0..k).all(|i| (0..k).all(|j| out.distance(i, j).unwrap() >= tree.distance(i, j).unwrap()));
            let same_dim = out.complexity().value == tree.complexity().value;
            if !(check_conditions(&out, horizon).well_behaved && grows && same_dim) {
                failures += 1;
            }
        }
    }
    let (star, steps) = reshape_traced(&HstTree::star(2).unwrap(), 1_000_000).unwrap();
    let cond = check_conditions(&star, 1_000_000);
    let worked = star.depth() == 7
        && steps == vec![ReshapeStep::Deepen; 6]
        && cond.well_behaved
        && star.distance(0, 1).unwrap() == 1.0;
    verdict(
        failures == 0 && worked,
        format!("{failures}/200 failing reshapes; star(2) at T=1e6 -> H={} via {} deepenings", star.depth(), steps.len()),
    )
}

fn c8_complexity() -> Verdict {
    let mut r = rng::stream(SEED, "acceptance/complexity");
    let mut failures = 0;
    let mut breakpoints = 0;
    for _ in 0..25 {
        let k = r.gen_range(1..=12);
        let m = make_metric(MetricFamily::Random { k, seed: r.gen() }).unwrap();
        let rep = complexity_report(&m, CountMode::Exact).unwrap();
        let mut ok = rep.pack_complexity <= rep.cover_complexity && rep.cover_complexity <= 2.0 * rep.pack_complexity;
        for &eps in &rep.breakpoints {
            let pack = packing_number(&m, eps, CountMode::Exact).unwrap();
            let cover = covering_number(&m, eps, CountMode::Exact).unwrap();
            let half = packing_number(&m, eps / 2.0, CountMode::Exact).unwrap();
            ok &= pack <= cover && cover <= half;
            breakpoints += 1;
        }
        failures += usize::from(!ok);
    }
    verdict(failures == 0, format!("25 metrics, {breakpoints} breakpoints, {failures} failures"))
}

fn c9_regret_scaling() -> Verdict {
    let start = Instant::now();
    let m = make_metric(MetricFamily::Uniform { k: 8 }).unwrap();
    let spec = AdversarySpec::EpochAdversary { epoch_len: None, gap: None };
    let seeds = 1..=5u64;
    let cells: Vec<(usize, u64)> = (10..=17).flat_map(|e| seeds.clone().map(move |s| (1usize << e, s))).collect();
    let smb: Vec<(usize, f64, f64)> = cells
        .par_iter()
        .map(|&(t, s)| {
            let o = LossOracle::new(&spec, s, &m, t).unwrap();
            let (tr, _) = run_general(&m, &o, t, s, &GeneralOptions::default()).unwrap();
            let b = tr.breakdown(o.comparator().1);
            (t, b.movement_regret, b.total_move)
        })
        .collect();
    let top = 1usize << 17;
    let exp3_move: f64 = seeds
        .clone()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&s| {
            let o = LossOracle::new(&spec, s, &m, top).unwrap();
            let mut p = Exp3::new(8, Exp3::default_eta(8, top as u64), 0.0).unwrap();
            run(&mut p, &o, &m, top, s).unwrap().total_move()
        })
        .sum();
    let points: Vec<(f64, f64)> = (10..=17)
        .map(|e| {
            let t = 1usize << e;
            let rs: Vec<f64> = smb.iter().filter(|c| c.0 == t).map(|c| c.1).collect();
            (t as f64, rs.iter().sum::<f64>() / rs.len() as f64)
        })
        .collect();
    let slope = loglog_slope(&points).unwrap_or(f64::NAN);
    let smb_move: f64 = smb.iter().filter(|c| c.0 == top).map(|c| c.2).sum();
    let took = start.elapsed();
    verdict(
        (0.55..=0.85).contains(&slope) && smb_move <= 0.5 * exp3_move && took < Duration::from_secs(300),
        format!(
            "slope {slope:.3}; movement at T=2^17 (5 seeds) smb {smb_move:.1} vs exp3 {exp3_move:.1} (ratio {:.3}); {took:.2?}",
            smb_move / exp3_move
        ),
    )
}

fn c10_discretization() -> Verdict {
    let d1 = discretization(ContinuousSpace::Interval, 1000).unwrap();
    let centers: Vec<f64> = d1.centers.iter().map(|c| c[0]).collect();
    let shown: Vec<String> = centers.iter().map(|c| format!("{c:.3}")).collect();
    let grid_ok = (d1.eps - 0.1).abs() < 1e-12
        && centers.len() == 3
        && centers.iter().zip([0.2, 0.6, 1.0]).all(|(a, b)| (a - b).abs() < 1e-12);
    let d2 = discretization(ContinuousSpace::Hypercube { d: 2 }, 10_000).unwrap();
    let square_ok = d2.centers.len() == 9 && (d2.eps - 0.1).abs() < 1e-12;

    let horizons: Vec<usize> = (0..9).map(|j| 10f64.powf(3.0 + j as f64 / 4.0).round() as usize).collect();
    let cells: Vec<(usize, u64)> = horizons.iter().flat_map(|&t| (1..=5u64).map(move |s| (t, s))).collect();
    let regrets: Vec<(usize, f64)> = cells
        .par_iter()
        .map(|&(t, s)| {
            let o = LipschitzOracle::drift_target(1, t, s, None, DRIFT_PERIOD, DRIFT_STEP).unwrap();
            let (_, rep) =
                discretize_and_run(ContinuousSpace::Interval, Arc::new(o), t, s, &GeneralOptions::default()).unwrap();
            (t, rep.continuous_regret)
        })
        .collect();
    let points: Vec<(f64, f64)> = horizons
        .iter()
        .map(|&t| {
            let rs: Vec<f64> = regrets.iter().filter(|c| c.0 == t).map(|c| c.1).collect();
            (t as f64, rs.iter().sum::<f64>() / rs.len() as f64)
        })
        .collect();
    let slope = loglog_slope(&points).unwrap_or(f64::NAN);
    verdict(
        grid_ok && square_ok && (0.55..=0.85).contains(&slope),
        format!(
            "T=1000: eps {:.3}, centers [{}]; d=2, T=1e4: {} centers; interval drift slope {slope:.3}",
            d1.eps,
            shown.join(", "),
            d2.centers.len()
        ),
    )
}

fn c11_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_movebandit");
    let commands: [&[&str]; 4] = [
        &["run", "--metric", "uniform:8", "--horizon", "5000", "--seed", "7"],
        &["run", "--metric", "grid1d:10", "--algorithm", "exp3", "--adversary", "gap:gap=0.2", "--horizon", "3000", "--seed", "3"],
        &["run", "--metric", "interval", "--horizon", "2000", "--seed", "11"],
        &["run", "--metric", "cube:2", "--horizon", "2000", "--seed", "5"],
    ];
    let mut differing = Vec::new();
    for (n, args) in commands.iter().enumerate() {
        let outputs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let o = Command::new(bin).current_dir(dir.path()).env_remove("MOVEBANDIT_SEED").args(*args).output().unwrap();
                assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
                (
                    std::fs::read(dir.path().join("trace.csv")).unwrap(),
                    std::fs::read(dir.path().join("summary.json")).unwrap(),
                    o.stdout,
                )
            })
            .collect();
        if outputs[0] != outputs[1] {
            differing.push(n);
        }
    }
    let sweep: Vec<Vec<u8>> = [1, 4]
        .iter()
        .map(|jobs| {
            let jobs = jobs.to_string();
            let args = ["sweep", "--metric", "uniform:4", "--horizons", "512,2048", "--seeds", "1,2,3", "--jobs", &jobs];
            Command::new(bin).env_remove("MOVEBANDIT_SEED").args(args).output().unwrap().stdout
        })
        .collect();
    let sweep_ok = sweep[0] == sweep[1] && !sweep[0].is_empty();
    verdict(
        differing.is_empty() && sweep_ok,
        format!(
            "{} run commands twice each, differing: {differing:?}; sweep with 1 vs 4 jobs identical: {sweep_ok}",
            commands.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut all_ok = true;
    let mut report = |id: usize, name: &str, v: Verdict| {
        all_ok &= v.ok;
        println!("{} {id:>2} {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
    };
    let (reps, took) = estimator_instances();
    report(1, "estimator bias", c1_bias(&reps, took));
    report(2, "second moment", c2_second_moment(&reps, took));
    report(3, "importance weights", c3_importance(&reps));
    report(4, "marginal preservation", c4_marginals());
    report(5, "movement probability", c5_movement());
    report(6, "dominance", c6_dominance());
    report(7, "reshaping", c7_reshape());
    report(8, "complexity inequalities", c8_complexity());
    report(9, "regret scaling", c9_regret_scaling());
    report(10, "discretization", c10_discretization());
    report(11, "determinism", c11_determinism());
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
