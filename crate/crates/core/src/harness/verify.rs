//! Independent checks of the estimator and movement properties of the tree
//! policy: exact enumeration of one round, Monte Carlo switching rates, and
//! subtree-mass preservation.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hst::HstTree;
use crate::rng;
use crate::smb::{default_eta, Smb};

/// Largest number of `(action, signs)` outcomes enumerated.
pub const ENUMERATION_LIMIT: usize = 1 << 20;

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImportanceWeight {
    pub level: usize,
    pub actions: Vec<usize>,
    pub expectation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MomentsReport {
    pub outcomes: usize,
    pub expected_estimate: Vec<f64>,
    /// `loss(i) - E[estimate(i)]`; non-negative up to rounding when unbiased or optimistic.
    pub gap: Vec<f64>,
    pub second_moment: f64,
    pub second_moment_bound: f64,
    pub truncation_prob: f64,
    pub importance: Vec<ImportanceWeight>,
}

/// Every `(played action, signs)` outcome of a single round from the state
/// `(p, eta)` with losses `loss`, weighted by its exact probability.
///
/// The estimates are recomputed here from their definition on dense vectors,
/// with the level sets taken from tree distances, so this shares no code with
/// the policy update.
pub fn enumerate_estimator_moments(tree: &HstTree, p: &[f64], eta: f64, loss: &[f64]) -> Result<MomentsReport> {
    let k = tree.num_actions();
    let depth = tree.depth();
    if p.len() != k || loss.len() != k {
        return Err(Error::LengthMismatch { p: p.len(), c: loss.len() });
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::BadEta(eta));
    }
    let outcomes = k.saturating_mul(1usize.checked_shl(depth as u32).unwrap_or(usize::MAX));
    if depth >= 40 || outcomes > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { outcomes: outcomes as u64, limit: ENUMERATION_LIMIT as u64 });
    }

    // sets[h][i] = actions within tree distance 2^(h - depth) of i
    let dist = tree.distance_matrix();
    let sets: Vec<Vec<Vec<usize>>> = (0..=depth)
        .map(|h| {
            let r = 2f64.powi(h as i32 - depth as i32);
            (0..k).map(|i| (0..k).filter(|&j| dist[i][j] <= r).collect()).collect()
        })
        .collect();
    let mass = |s: &[usize]| -> f64 {
        let mut a = Accumulator::default();
        s.iter().for_each(|&j| a.add(p[j]));
        a.value()
    };
    let set_mass: Vec<Vec<f64>> = sets.iter().map(|lv| lv.iter().map(|s| mass(s)).collect()).collect();
    let in_trunc: Vec<bool> = (0..k)
        .map(|i| (0..depth).any(|h| set_mass[h][i] < 2f64.powi(h as i32) * eta))
        .collect();

    let mut subtrees: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    for h in 0..=depth {
        for i in 0..k {
            if set_mass[h][i] > 0.0 {
                subtrees.insert((h, sets[h][i].clone()));
            }
        }
    }
    let subtrees: Vec<(usize, Vec<usize>, f64)> =
        subtrees.into_iter().map(|(h, s)| { let m = mass(&s); (h, s, m) }).collect();

    let mut exp_est = vec![Accumulator::default(); k];
    let mut second = Accumulator::default();
    let mut trunc = Accumulator::default();
    let mut importance = vec![Accumulator::default(); subtrees.len()];
    let sign_patterns = 1usize << depth;
    let mut bars = vec![vec![0.0; k]; depth];

    for played in 0..k {
        if p[played] <= 0.0 {
            continue;
        }
        let w = p[played] / sign_patterns as f64;
        for (s, (_, set, m)) in importance.iter_mut().zip(&subtrees) {
            if set.contains(&played) {
                s.add(p[played] / m);
            }
        }
        if in_trunc[played] {
            trunc.add(p[played]);
            continue;
        }
        for pattern in 0..sign_patterns {
            let sigma: Vec<f64> = (0..depth).map(|h| if pattern >> h & 1 == 1 { 1.0 } else { -1.0 }).collect();
            bars[0].iter_mut().for_each(|v| *v = 0.0);
            bars[0][played] = loss[played] / p[played];
            for h in 1..depth {
                let scale = 1.0 + sigma[h - 1];
                for i in 0..k {
                    let set = &sets[h][i];
                    let total = set_mass[h][i];
                    let exps: Vec<f64> = set
                        .iter()
                        .filter(|&&j| p[j] > 0.0)
                        .map(|&j| (p[j] / total).ln() - eta * scale * bars[h - 1][j])
                        .collect();
                    bars[h][i] = if exps.is_empty() {
                        0.0
                    } else {
                        let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse = m + exps.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                        -lse / eta
                    };
                }
            }
            let mut sq = Accumulator::default();
            for i in 0..k {
                let mut est = bars[0][i];
                for h in 0..depth {
                    est += sigma[h] * bars[h][i];
                }
                exp_est[i].add(w * est);
                sq.add(p[i] * est * est);
            }
            second.add(w * sq.value());
        }
    }

    let expected_estimate: Vec<f64> = exp_est.iter().map(Accumulator::value).collect();
    let gap = loss.iter().zip(&expected_estimate).map(|(l, e)| l - e).collect();
    let dim = tree.complexity().value;
    Ok(MomentsReport {
        outcomes,
        expected_estimate,
        gap,
        second_moment: second.value(),
        second_moment_bound: 2.0 * depth as f64 * 2f64.powi(depth as i32) * dim,
        truncation_prob: trunc.value(),
        importance: subtrees
            .iter()
            .zip(&importance)
            .map(|((h, s, _), acc)| ImportanceWeight { level: *h, actions: s.clone(), expectation: acc.value() })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelSwitch {
    pub level: usize,
    pub switches: u64,
    pub estimate: f64,
    pub bound: f64,
    pub margin: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MovementReport {
    pub samples: u64,
    pub eta: f64,
    pub levels: Vec<LevelSwitch>,
    pub mean_tree_move: f64,
    pub move_bound: f64,
    pub move_margin: f64,
    pub move_ok: bool,
}

impl MovementReport {
    pub fn ok(&self) -> bool {
        self.move_ok && self.levels.iter().all(|l| l.ok)
    }
}

/// Monte Carlo switching rates of the tree policy on i.i.d. uniform losses.
///
/// Independent replicas of `rounds` rounds are run until at least `samples`
/// consecutive pairs `(i_{t-1}, i_t)` have been observed. `eta` defaults to
/// the learning rate for `rounds`.
pub fn mc_movement_check(
    tree: &HstTree,
    seed: u64,
    rounds: usize,
    samples: u64,
    eta: Option<f64>,
) -> Result<MovementReport> {
    if rounds < 2 {
        return Err(Error::BadSpec("need at least two rounds per replica".into()));
    }
    let depth = tree.depth();
    let eta = eta.unwrap_or_else(|| default_eta(depth, tree.complexity().value, rounds as u64));
    let tree = Arc::new(tree.clone());
    let mut switches = vec![0u64; depth];
    let mut moves = Accumulator::default();
    let mut moves_sq = Accumulator::default();
    let mut n = 0u64;
    let mut replica = 0u64;
    while n < samples {
        let mut smb = Smb::new(Arc::clone(&tree), eta)?;
        let mut r = rng::stream(seed, &format!("mc/{replica}"));
        let key = rng::derive_seed(seed, &format!("mc-loss/{replica}"));
        let mut prev: Option<usize> = None;
        for t in 1..=rounds {
            let a = smb.select_action(&mut r)?;
            smb.observe_loss(rng::counter_uniform(key, t as u64, a as u64), &mut r)?;
            if let Some(b) = prev {
                for (h, s) in switches.iter_mut().enumerate() {
                    if tree.ancestor(a, h) != tree.ancestor(b, h) {
                        *s += 1;
                    }
                }
                let d = tree.distance(a, b)?;
                moves.add(d);
                moves_sq.add(d * d);
                n += 1;
            }
            prev = Some(a);
        }
        replica += 1;
    }
    let nf = n as f64;
    let levels = switches
        .iter()
        .enumerate()
        .map(|(h, &s)| {
            let bound = 2f64.powi(-(h as i32 + 1));
            let margin = 3.0 * (bound * (1.0 - bound) / nf).sqrt();
            let estimate = s as f64 / nf;
            LevelSwitch { level: h, switches: s, estimate, bound, margin, ok: estimate <= bound + margin }
        })
        .collect();
    let mean = moves.value() / nf;
    let var = (moves_sq.value() / nf - mean * mean).max(0.0);
    let move_margin = 3.0 * (var / nf).sqrt();
    let move_bound = depth as f64 * 2f64.powi(-(depth as i32 + 1));
    Ok(MovementReport {
        samples: n,
        eta,
        levels,
        mean_tree_move: mean,
        move_bound,
        move_margin,
        move_ok: mean <= move_bound + move_margin,
    })
}

/// Per-level switching probabilities when the distribution stays uniform.
///
/// The previous level `h'` has probability `2^-(h'+1)` below the depth and
/// `2^-depth` at it; given `h'` the next action is uniform on the level-`h'`
/// subtree of a uniform previous action.
pub fn uniform_switch_probabilities(tree: &HstTree) -> Vec<f64> {
    let depth = tree.depth();
    let k = tree.num_actions() as f64;
    let level_prob = |h: usize| if h < depth { 2f64.powi(-(h as i32 + 1)) } else { 2f64.powi(-(depth as i32)) };
    (0..depth)
        .map(|h| {
            (h + 1..=depth)
                .map(|hp| {
                    let leave: f64 = (0..tree.num_actions())
                        .map(|i| {
                            let small = tree.subtree_actions(i, h).len() as f64;
                            let big = tree.subtree_actions(i, hp).len() as f64;
                            1.0 - small / big
                        })
                        .sum::<f64>()
                        / k;
                    level_prob(hp) * leave
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarginalReport {
    pub rounds: usize,
    pub checked_rounds: usize,
    pub truncated_rounds: usize,
    /// Largest change of a level-`h_t` subtree mass over checked rounds.
    pub max_deviation: f64,
}

/// Run the policy on i.i.d. uniform losses and measure how much the mass of
/// each subtree at the chosen level moves in non-truncated rounds.
pub fn marginal_check(tree: &HstTree, seed: u64, rounds: usize, eta: f64) -> Result<MarginalReport> {
    let tree = Arc::new(tree.clone());
    let mut smb = Smb::new(Arc::clone(&tree), eta)?;
    let mut r = rng::stream(seed, "marginal");
    let key = rng::derive_seed(seed, "marginal-loss");
    let mut report = MarginalReport { rounds, checked_rounds: 0, truncated_rounds: 0, max_deviation: 0.0 };
    for t in 1..=rounds {
        let a = smb.select_action(&mut r)?;
        let before = smb.masses().to_vec();
        let est = smb.observe_loss(rng::counter_uniform(key, t as u64, a as u64), &mut r)?;
        if est.truncated {
            report.truncated_rounds += 1;
            continue;
        }
        report.checked_rounds += 1;
        let after = smb.masses();
        for v in tree.nodes_at(est.chosen_level) {
            report.max_deviation = report.max_deviation.max((after[v] - before[v]).abs());
        }
    }
    Ok(report)
}

/// Least-squares slope of `ln y` against `ln x`. `None` with fewer than two
/// distinct positive points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_arm_enumeration() {
        let t = HstTree::star(2).unwrap();
        let r = enumerate_estimator_moments(&t, &[0.5, 0.5], 0.01, &[1.0, 0.0]).unwrap();
        assert!((r.expected_estimate[0] - 1.0).abs() < 1e-12);
        assert!(r.expected_estimate[1].abs() < 1e-12);
        assert_eq!(r.truncation_prob, 0.0);
        assert_eq!(r.outcomes, 4);
        for w in &r.importance {
            assert!((w.expectation - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_truncated_state_is_zero() {
        let t = HstTree::complete_binary(2).unwrap();
        let r = enumerate_estimator_moments(&t, &[0.25; 4], 0.9, &[0.3, 0.1, 0.7, 1.0]).unwrap();
        assert_eq!(r.truncation_prob, 1.0);
        assert!(r.expected_estimate.iter().all(|&v| v == 0.0));
        assert_eq!(r.second_moment, 0.0);
    }

    #[test]
    fn binary_tree_is_optimistic() {
        let t = HstTree::complete_binary(3).unwrap();
        let loss = [0.9, 0.1, 0.5, 0.0, 1.0, 0.3, 0.7, 0.2];
        let r = enumerate_estimator_moments(&t, &[0.125; 8], 1e-4, &loss).unwrap();
        for g in &r.gap {
            assert!(*g >= -1e-9);
        }
        assert!(r.second_moment <= r.second_moment_bound);
    }

    #[test]
    fn too_large() {
        let mut big = HstTree::star(3).unwrap();
        for _ in 0..20 {
            big = big.deepen();
        }
        assert!(matches!(
            enumerate_estimator_moments(&big, &[1.0 / 3.0; 3], 0.1, &[0.0; 3]),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn frozen_uniform_matches_closed_form() {
        let t = HstTree::complete_binary(3).unwrap();
        let rep = mc_movement_check(&t, 11, 50, 20_000, Some(1e-12)).unwrap();
        let want = uniform_switch_probabilities(&t);
        for (lv, w) in rep.levels.iter().zip(&want) {
            let sd = (w * (1.0 - w) / rep.samples as f64).sqrt();
            assert!((lv.estimate - w).abs() <= 4.0 * sd, "{lv:?} vs {w}");
        }
        assert!(rep.ok());
    }

    #[test]
    fn marginals_preserved() {
        let t = HstTree::complete_binary(3).unwrap();
        let rep = marginal_check(&t, 4, 2000, 0.01).unwrap();
        assert!(rep.checked_rounds > 1000);
        assert!(rep.max_deviation < 1e-10);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (2f64.powi(i), 3.0 * 2f64.powf(0.7 * i as f64))).collect();
        assert!((loglog_slope(&pts).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(1.0, 1.0)]), None);
    }
}
