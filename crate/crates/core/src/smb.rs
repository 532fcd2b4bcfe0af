//! The slowly-moving bandit policy on an HST, and an Exp3 baseline.
//!
//! Each round the slowly-moving policy draws a random level `h_t` (the first
//! level whose fair coin comes up negative) and builds a loss estimate that
//! leaves the probability mass of every level-`h_t` subtree unchanged. The next
//! action is then drawn only inside the level-`h_t` subtree of the current one,
//! so the action moves far only when the drawn level is high.

use std::sync::Arc;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hst::HstTree;
use crate::rng::StreamRng;

/// Floor applied to probabilities before dividing by them.
const PROB_FLOOR: f64 = 1e-300;

/// Bandit policy contract shared by every algorithm driven by the harness.
pub trait Policy: Send {
    fn name(&self) -> &'static str;
    fn num_actions(&self) -> usize;
    fn select(&mut self, round: u64, rng: &mut StreamRng) -> Result<usize>;
    fn observe(&mut self, round: u64, loss: f64, rng: &mut StreamRng) -> Result<()>;
}

/// `sqrt(2^-H ln(max(dim, 2)) / (dim T))`.
pub fn default_eta(depth: usize, dim: f64, horizon: u64) -> f64 {
    let log_dim = dim.max(2.0).ln();
    (2f64.powi(-(depth as i32)) * log_dim / (dim * horizon.max(1) as f64)).sqrt()
}

/// Exponential-weights step `p'(i) ∝ p(i) exp(-eta c(i))`, shifted by the
/// largest exponent before exponentiating. Costs must satisfy `c(i) >= -1/eta`.
pub fn mw_update(p: &[f64], c: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::BadEta(eta));
    }
    if p.len() != c.len() {
        return Err(Error::LengthMismatch { p: p.len(), c: c.len() });
    }
    let floor = -1.0 / eta;
    for (i, &v) in c.iter().enumerate() {
        if v < floor * (1.0 + 1e-12) - 1e-12 {
            return Err(Error::EstimateTooNegative { i, value: v, floor });
        }
    }
    let shift = c.iter().map(|&v| -eta * v).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = p.iter().zip(c).map(|(&pi, &ci)| pi * (-eta * ci - shift).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

/// `ln(exp(a) + exp(b))`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-round loss estimates.
///
/// The level estimates `bar_h` are constant on the level-`h` subtree of the
/// played action and zero elsewhere, so only their value on that subtree is
/// stored (`path[h]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimates {
    pub played: usize,
    pub loss: f64,
    /// Signs `sigma_0 .. sigma_{H-1}`.
    pub sigma: Vec<i8>,
    /// First level with a negative sign, `H` if none.
    pub chosen_level: usize,
    /// Value of `bar_h` on the level-`h` subtree of the played action.
    pub path: Vec<f64>,
    /// Whether the played action fell in the truncation set.
    pub truncated: bool,
    /// Final estimate for every action.
    pub tilde: Vec<f64>,
}

impl LevelEstimates {
    /// `bar_h(i)`.
    pub fn bar(&self, tree: &HstTree, h: usize, i: usize) -> f64 {
        if h == 0 {
            return if i == self.played { self.path[0] } else { 0.0 };
        }
        if tree.ancestor(i, h) == tree.ancestor(self.played, h) {
            self.path[h]
        } else {
            0.0
        }
    }

    /// The estimate rewritten as `bar_0 - bar_{h_t} + sum_{j < h_t} bar_j`,
    /// with `bar_H` read as zero.
    pub fn tilde_by_identity(&self, tree: &HstTree) -> Vec<f64> {
        let k = tree.num_actions();
        if self.truncated {
            return vec![0.0; k];
        }
        let depth = tree.depth();
        (0..k)
            .map(|i| {
                let top = if self.chosen_level < depth { self.bar(tree, self.chosen_level, i) } else { 0.0 };
                let below: f64 = (0..self.chosen_level).map(|j| self.bar(tree, j, i)).sum();
                self.bar(tree, 0, i) - top + below
            })
            .collect()
    }
}

/// Compute the estimates of one round from the sampling distribution `p`, its
/// subtree masses `mass` (indexed by node), the played action and the signs.
pub fn level_estimates(
    tree: &HstTree,
    p: &[f64],
    mass: &[f64],
    eta: f64,
    played: usize,
    loss: f64,
    sigma: &[i8],
) -> LevelEstimates {
    let depth = tree.depth();
    debug_assert_eq!(sigma.len(), depth);
    let chosen_level = sigma.iter().position(|&s| s < 0).unwrap_or(depth);

    let mut path = vec![0.0; depth];
    let p_played = if p[played] > 0.0 {
        p[played]
    } else {
        warn!("clamping zero probability of action {played}");
        PROB_FLOOR
    };
    path[0] = loss / p_played;
    for h in 1..depth {
        let prev = path[h - 1] * f64::from(1 + sigma[h - 1]);
        if prev == 0.0 {
            continue;
        }
        let node = tree.ancestor(played, h);
        let child = tree.ancestor(played, h - 1);
        let total = mass[node].max(PROB_FLOOR);
        let inside = (mass[child] / total).min(1.0);
        let outside = ((total - mass[child]) / total).max(0.0);
        let log_mean = log_add_exp(inside.ln() - eta * prev, outside.ln());
        path[h] = (-log_mean / eta).max(0.0);
    }

    let truncated =
        (0..depth).any(|h| mass[tree.ancestor(played, h)] < 2f64.powi(h as i32) * eta);

    let mut tilde = vec![0.0; tree.num_actions()];
    if !truncated {
        tilde[played] += path[0];
        for h in 0..depth {
            let v = f64::from(sigma[h]) * path[h];
            if v != 0.0 {
                for &j in tree.subtree_actions(played, h) {
                    tilde[j] += v;
                }
            }
        }
    }

    LevelEstimates { played, loss, sigma: sigma.to_vec(), chosen_level, path, truncated, tilde }
}

/// Subtree masses of `p`, summed bottom-up.
pub fn subtree_masses(tree: &HstTree, by_level: &[Vec<usize>], p: &[f64]) -> Vec<f64> {
    let mut mass = vec![0.0; tree.num_nodes()];
    for (a, &pa) in p.iter().enumerate() {
        mass[tree.leaf_of(a)] = pa;
    }
    for nodes in by_level.iter().skip(1) {
        for &v in nodes {
            mass[v] = tree.children(v).iter().map(|&c| mass[c]).sum();
        }
    }
    mass
}

fn nodes_by_level(tree: &HstTree) -> Vec<Vec<usize>> {
    (0..=tree.depth()).map(|h| tree.nodes_at(h).collect()).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SmbStats {
    pub truncated_rounds: u64,
    pub zero_mass_fallbacks: u64,
}

/// State of the slowly-moving bandit.
#[derive(Debug, Clone)]
pub struct Smb {
    tree: Arc<HstTree>,
    by_level: Vec<Vec<usize>>,
    eta: f64,
    p: Vec<f64>,
    mass: Vec<f64>,
    prev_action: Option<usize>,
    prev_level: usize,
    round: u64,
    pending: Option<usize>,
    stats: SmbStats,
}

impl Smb {
    pub fn new(tree: Arc<HstTree>, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::BadEta(eta));
        }
        let k = tree.num_actions();
        let p = vec![1.0 / k as f64; k];
        let by_level = nodes_by_level(&tree);
        let mass = subtree_masses(&tree, &by_level, &p);
        let prev_level = tree.depth();
        Ok(Smb {
            tree,
            by_level,
            eta,
            p,
            mass,
            prev_action: None,
            prev_level,
            round: 1,
            pending: None,
            stats: SmbStats::default(),
        })
    }

    pub fn tree(&self) -> &HstTree {
        &self.tree
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Probability mass of every node.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn prev_action(&self) -> Option<usize> {
        self.prev_action
    }

    pub fn prev_level(&self) -> usize {
        self.prev_level
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn stats(&self) -> &SmbStats {
        &self.stats
    }

    /// Replace the sampling distribution; used by verification code that
    /// studies a single round from a chosen state.
    pub fn set_probabilities(&mut self, p: Vec<f64>) -> Result<()> {
        if p.len() != self.p.len() {
            return Err(Error::LengthMismatch { p: p.len(), c: self.p.len() });
        }
        self.mass = subtree_masses(&self.tree, &self.by_level, &p);
        self.p = p;
        Ok(())
    }

    /// Force the conditioning state of the next draw.
    pub fn set_previous(&mut self, action: usize, level: usize) {
        self.prev_action = Some(action);
        self.prev_level = level.min(self.tree.depth());
    }

    /// Draw the next action from `p` restricted to the subtree of the previous
    /// action at the previously chosen level.
    pub fn select_action(&mut self, rng: &mut StreamRng) -> Result<usize> {
        let node = match self.prev_action {
            Some(a) => self.tree.ancestor(a, self.prev_level),
            None => self.tree.root(),
        };
        let total = self.mass[node];
        let action = if total > 0.0 && total.is_finite() {
            sample_from(self.tree.leaves(node), &self.p, total, rng)
        } else {
            warn!("conditioning subtree has zero mass; sampling from the full distribution");
            self.stats.zero_mass_fallbacks += 1;
            let all = self.tree.leaves(self.tree.root());
            sample_from(all, &self.p, self.p.iter().sum(), rng)
        };
        self.pending = Some(action);
        Ok(action)
    }

    /// Draw the signs for this round and apply the update.
    pub fn observe_loss(&mut self, loss: f64, rng: &mut StreamRng) -> Result<LevelEstimates> {
        let sigma: Vec<i8> = (0..self.tree.depth()).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        self.observe_with_signs(loss, &sigma)
    }

    /// Apply the update with explicit signs `sigma_0 .. sigma_{H-1}`.
    pub fn observe_with_signs(&mut self, loss: f64, sigma: &[i8]) -> Result<LevelEstimates> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(Error::OutOfRangeLoss(loss));
        }
        let played = self.pending.take().ok_or(Error::NotSelected)?;
        if sigma.len() != self.tree.depth() || sigma.iter().any(|s| s.abs() != 1) {
            self.pending = Some(played);
            return Err(Error::BadSpec(format!("expected {} signs of +-1", self.tree.depth())));
        }
        let est = level_estimates(&self.tree, &self.p, &self.mass, self.eta, played, loss, sigma);
        if est.truncated {
            self.stats.truncated_rounds += 1;
        } else if est.tilde.iter().any(|&v| v != 0.0) {
            self.p = mw_update(&self.p, &est.tilde, self.eta)?;
            self.mass = subtree_masses(&self.tree, &self.by_level, &self.p);
        }
        self.prev_action = Some(played);
        self.prev_level = est.chosen_level;
        self.round += 1;
        Ok(est)
    }
}

fn sample_from(actions: &[usize], p: &[f64], total: f64, rng: &mut StreamRng) -> usize {
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = actions[0];
    for &a in actions {
        if p[a] <= 0.0 {
            continue;
        }
        acc += p[a];
        last = a;
        if u < acc {
            return a;
        }
    }
    last
}

impl Policy for Smb {
    fn name(&self) -> &'static str {
        "smb"
    }

    fn num_actions(&self) -> usize {
        self.tree.num_actions()
    }

    fn select(&mut self, _round: u64, rng: &mut StreamRng) -> Result<usize> {
        self.select_action(rng)
    }

    fn observe(&mut self, _round: u64, loss: f64, rng: &mut StreamRng) -> Result<()> {
        self.observe_loss(loss, rng).map(|_| ())
    }
}

/// Importance-weighted exponential weights with a uniform exploration mix.
#[derive(Debug, Clone)]
pub struct Exp3 {
    eta: f64,
    gamma: f64,
    log_w: Vec<f64>,
    probs: Vec<f64>,
    pending: Option<usize>,
}

impl Exp3 {
    pub fn new(k: usize, eta: f64, gamma: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::BadEta(eta));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::BadGamma(gamma));
        }
        if k == 0 {
            return Err(Error::BadSpec("Exp3 needs at least one arm".into()));
        }
        Ok(Exp3 { eta, gamma, log_w: vec![0.0; k], probs: vec![1.0 / k as f64; k], pending: None })
    }

    /// `eta = sqrt(2 ln k / (k T))`.
    pub fn default_eta(k: usize, horizon: u64) -> f64 {
        (2.0 * (k.max(2) as f64).ln() / (k as f64 * horizon.max(1) as f64)).sqrt()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    fn refresh(&mut self) {
        let k = self.log_w.len() as f64;
        let m = self.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = self.log_w.iter().map(|w| (w - m).exp()).sum();
        for (p, w) in self.probs.iter_mut().zip(&self.log_w) {
            *p = (1.0 - self.gamma) * (w - m).exp() / z + self.gamma / k;
        }
    }
}

impl Policy for Exp3 {
    fn name(&self) -> &'static str {
        "exp3"
    }

    fn num_actions(&self) -> usize {
        self.log_w.len()
    }

    fn select(&mut self, _round: u64, rng: &mut StreamRng) -> Result<usize> {
        let actions: Vec<usize> = (0..self.probs.len()).collect();
        let a = sample_from(&actions, &self.probs, self.probs.iter().sum(), rng);
        self.pending = Some(a);
        Ok(a)
    }

    fn observe(&mut self, _round: u64, loss: f64, _rng: &mut StreamRng) -> Result<()> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(Error::OutOfRangeLoss(loss));
        }
        let a = self.pending.take().ok_or(Error::NotSelected)?;
        self.log_w[a] -= self.eta * loss / self.probs[a].max(PROB_FLOOR);
        let m = self.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.log_w.iter_mut().for_each(|w| *w -= m);
        self.refresh();
        Ok(())
    }
}
