//! Oblivious loss sequences. Every oracle is a fixed function of
//! `(round, action)` determined by its spec and seed before play begins.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::MetricSpace;
use crate::rng;

/// Loss sequence families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum AdversarySpec {
    /// Bernoulli losses: the best arm has mean `bestMean`, every other arm
    /// `bestMean + gap`. The best arm is drawn from the seed unless given.
    #[serde(rename_all = "camelCase")]
    StochasticGap {
        gap: f64,
        #[serde(default)]
        best_mean: Option<f64>,
        #[serde(default)]
        best: Option<usize>,
    },
    /// `loss_t(i) = min(1, d(i, x_t))` for a target `x_t` that, every `period`
    /// rounds, jumps to a random point within `step` of its position.
    /// `period = 0` keeps the target fixed.
    #[serde(rename_all = "camelCase")]
    DriftTarget {
        #[serde(default)]
        start: Option<usize>,
        #[serde(default)]
        period: usize,
        #[serde(default = "default_step")]
        step: f64,
    },
    /// Deterministic losses with a piecewise-constant best arm. A fixed anchor
    /// arm has loss 1/2, ordinary arms 1/2 + gap/2, and during each epoch of
    /// `epochLen` rounds one leader arm (redrawn every epoch, never the anchor
    /// when k > 2) has loss 1/2 - gap/2. Epochs default to `round(T^(2/3))`
    /// rounds and the gap to `min(1, T^(-1/3))`.
    #[serde(rename_all = "camelCase")]
    EpochAdversary {
        #[serde(default)]
        epoch_len: Option<usize>,
        #[serde(default)]
        gap: Option<f64>,
    },
    /// Explicit T x k loss matrix in a CSV file, one row per round.
    FromFile { path: PathBuf },
}

fn default_step() -> f64 {
    0.25
}

impl FromStr for AdversarySpec {
    type Err = Error;

    /// Parses `KIND[:key=value,...]` with kinds `gap`, `drift`, `epoch`, `file`
    /// (or their long names).
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::BadSpec(format!("{s}: expected key=value, got {part:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let float = |key: &str| -> Result<Option<f64>> {
            kv.get(key)
                .map(|v| v.parse::<f64>().map_err(|_| Error::BadSpec(format!("{s}: bad {key}"))))
                .transpose()
        };
        let int = |key: &str| -> Result<Option<usize>> {
            kv.get(key)
                .map(|v| v.parse::<usize>().map_err(|_| Error::BadSpec(format!("{s}: bad {key}"))))
                .transpose()
        };
        let allowed: &[&str] = match kind {
            "gap" | "stochasticGap" => &["gap", "bestMean", "best"],
            "drift" | "driftTarget" => &["start", "period", "step"],
            "epoch" | "epochAdversary" => &["len", "epochLen", "gap"],
            "file" | "fromFile" => &["path"],
            _ => return Err(Error::BadSpec(format!("unknown adversary {kind:?}"))),
        };
        if let Some(k) = kv.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::BadSpec(format!("{s}: unknown key {k:?}")));
        }
        let spec = match kind {
            "gap" | "stochasticGap" => AdversarySpec::StochasticGap {
                gap: float("gap")?.unwrap_or(0.3),
                best_mean: float("bestMean")?,
                best: int("best")?,
            },
            "drift" | "driftTarget" => AdversarySpec::DriftTarget {
                start: int("start")?,
                period: int("period")?.unwrap_or(0),
                step: float("step")?.unwrap_or_else(default_step),
            },
            "epoch" | "epochAdversary" => AdversarySpec::EpochAdversary {
                epoch_len: int("len")?.or(int("epochLen")?),
                gap: float("gap")?,
            },
            _ => AdversarySpec::FromFile {
                path: kv
                    .get("path")
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::BadSpec(format!("{s}: missing path")))?,
            },
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
enum Table {
    Gap { key: u64, best: usize, best_mean: f64, gap: f64 },
    Drift { metric: Arc<MetricSpace>, targets: Vec<usize> },
    Epoch { anchor: usize, leaders: Vec<usize>, len: usize, gap: f64 },
    Matrix { k: usize, losses: Vec<f64> },
    Points { oracle: Arc<LipschitzOracle>, points: Arc<Vec<Vec<f64>>> },
}

/// A fixed loss sequence over `horizon` rounds and `k` actions.
#[derive(Debug, Clone)]
pub struct LossOracle {
    horizon: usize,
    k: usize,
    table: Table,
}

pub fn make_loss_oracle(
    spec: &AdversarySpec,
    seed: u64,
    metric: &MetricSpace,
    horizon: usize,
) -> Result<LossOracle> {
    LossOracle::new(spec, seed, metric, horizon)
}

impl LossOracle {
    pub fn new(spec: &AdversarySpec, seed: u64, metric: &MetricSpace, horizon: usize) -> Result<Self> {
        let k = metric.len();
        if horizon == 0 {
            return Err(Error::BadSpec("horizon must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, "oracle");
        let table = match spec {
            AdversarySpec::StochasticGap { gap, best_mean, best } => {
                let best_mean = best_mean.unwrap_or((1.0 - gap) / 2.0);
                if !(0.0..=1.0).contains(gap) || best_mean < 0.0 || best_mean + gap > 1.0 {
                    return Err(Error::BadSpec(format!(
                        "stochastic gap needs 0 <= bestMean <= bestMean + gap <= 1, got {best_mean} and {gap}"
                    )));
                }
                let best = match best {
                    Some(b) if *b >= k => return Err(Error::BadSpec(format!("best arm {b} out of range"))),
                    Some(b) => *b,
                    None => rng.gen_range(0..k),
                };
                Table::Gap { key: rng.gen(), best, best_mean, gap: *gap }
            }
            AdversarySpec::DriftTarget { start, period, step } => {
                let mut cur = match start {
                    Some(s) if *s >= k => return Err(Error::BadSpec(format!("start {s} out of range"))),
                    Some(s) => *s,
                    None => rng.gen_range(0..k),
                };
                let mut targets = Vec::with_capacity(horizon);
                for t in 0..horizon {
                    if *period > 0 && t > 0 && t % period == 0 {
                        let near: Vec<usize> =
                            (0..k).filter(|&j| j != cur && metric.dist(cur, j) <= *step).collect();
                        if let Some(&j) = near.choose(&mut rng) {
                            cur = j;
                        }
                    }
                    targets.push(cur);
                }
                Table::Drift { metric: Arc::new(metric.clone()), targets }
            }
            AdversarySpec::EpochAdversary { epoch_len, gap } => {
                let gap = gap.unwrap_or_else(|| (horizon as f64).powf(-1.0 / 3.0).min(1.0));
                if !(0.0..=1.0).contains(&gap) {
                    return Err(Error::BadSpec(format!("epoch gap {gap} outside [0, 1]")));
                }
                let len = epoch_len
                    .unwrap_or_else(|| (horizon as f64).powf(2.0 / 3.0).round() as usize)
                    .max(1);
                let anchor = rng.gen_range(0..k);
                let epochs = horizon.div_ceil(len);
                let leaders = (0..epochs)
                    .map(|_| {
                        if k > 2 {
                            let j = rng.gen_range(0..k - 1);
                            if j >= anchor { j + 1 } else { j }
                        } else {
                            rng.gen_range(0..k)
                        }
                    })
                    .collect();
                Table::Epoch { anchor, leaders, len, gap }
            }
            AdversarySpec::FromFile { path } => {
                let losses = load_loss_matrix(path)?;
                let rows = losses.len();
                let cols = losses.first().map_or(0, Vec::len);
                if rows != horizon || cols != k || losses.iter().any(|r| r.len() != k) {
                    return Err(Error::FileShapeMismatch { rows, cols, want_rows: horizon, want_cols: k });
                }
                if let Some(v) = losses.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::OutOfRangeLoss(*v));
                }
                Table::Matrix { k, losses: losses.into_iter().flatten().collect() }
            }
        };
        Ok(LossOracle { horizon, k, table })
    }

    /// Restrict a Lipschitz oracle on a continuous space to a finite point set.
    pub fn on_points(oracle: Arc<LipschitzOracle>, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.iter().any(|p| p.len() != oracle.dim()) {
            return Err(Error::BadSpec("point dimension does not match the oracle".into()));
        }
        Ok(LossOracle {
            horizon: oracle.horizon(),
            k: points.len(),
            table: Table::Points { oracle, points: Arc::new(points) },
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_actions(&self) -> usize {
        self.k
    }

    /// Loss of action `i` at round `t` (1-based).
    pub fn loss(&self, t: usize, i: usize) -> f64 {
        debug_assert!(t >= 1 && t <= self.horizon && i < self.k);
        match &self.table {
            Table::Gap { key, best, best_mean, gap } => {
                let mean = if i == *best { *best_mean } else { best_mean + gap };
                if rng::counter_uniform(*key, t as u64, i as u64) < mean { 1.0 } else { 0.0 }
            }
            Table::Drift { metric, targets } => metric.dist(i, targets[t - 1]).min(1.0),
            Table::Epoch { anchor, leaders, len, gap } => {
                let leader = leaders[(t - 1) / len];
                if i == leader {
                    0.5 - gap / 2.0
                } else if i == *anchor {
                    0.5
                } else {
                    0.5 + gap / 2.0
                }
            }
            Table::Matrix { k, losses } => losses[(t - 1) * k + i],
            Table::Points { oracle, points } => oracle.loss(t, &points[i]),
        }
    }

    /// Target of a drift oracle at round `t`.
    pub fn target(&self, t: usize) -> Option<usize> {
        match &self.table {
            Table::Drift { targets, .. } => Some(targets[t - 1]),
            _ => None,
        }
    }

    /// Cumulative loss of every action over the whole horizon.
    pub fn cumulative_losses(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.k];
        for t in 1..=self.horizon {
            for (i, s) in total.iter_mut().enumerate() {
                *s += self.loss(t, i);
            }
        }
        total
    }

    /// Best fixed action in hindsight and its cumulative loss (lowest index on ties).
    pub fn comparator(&self) -> (usize, f64) {
        let totals = self.cumulative_losses();
        let mut best = (0, totals[0]);
        for (i, &v) in totals.iter().enumerate() {
            if v < best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Largest `|loss_t(i) - loss_t(j)| - d(i, j)` over the checked rounds and
    /// pairs; non-positive means the oracle is 1-Lipschitz there.
    pub fn lipschitz_excess(&self, metric: &MetricSpace, rounds: &[usize]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &t in rounds {
            let row: Vec<f64> = (0..self.k).map(|i| self.loss(t, i)).collect();
            for i in 0..self.k {
                for j in (i + 1)..self.k {
                    worst = worst.max((row[i] - row[j]).abs() - metric.dist(i, j));
                }
            }
        }
        worst
    }
}

/// Read a CSV loss matrix, one row per round.
pub fn load_loss_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            rec?.iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad number {s:?}", row + 1))))
                .collect()
        })
        .collect()
}

/// Default rounds between moves of a continuous drifting target.
pub const DRIFT_PERIOD: usize = 10;
/// Default largest per-axis move of a continuous drifting target.
pub const DRIFT_STEP: f64 = 0.05;

/// Parameters of a drifting target on a continuous cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DriftParams {
    pub period: usize,
    pub step: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams { period: DRIFT_PERIOD, step: DRIFT_STEP }
    }
}

impl FromStr for DriftParams {
    type Err = Error;

    /// `drift[:period=P,step=S]`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if kind != "drift" && kind != "driftTarget" {
            return Err(Error::BadSpec(format!("continuous spaces only support drift targets, got {kind:?}")));
        }
        let mut out = DriftParams::default();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let bad = || Error::BadSpec(format!("{s}: bad entry {part:?}"));
            match part.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("period", v)) => out.period = v.parse().map_err(|_| bad())?,
                Some(("step", v)) => out.step = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        if !(out.step >= 0.0 && out.step.is_finite()) {
            return Err(Error::BadSpec(format!("{s}: step must be a finite non-negative number")));
        }
        Ok(out)
    }
}

/// A 1-Lipschitz loss sequence on `[0, 1]^d` under the max-norm:
/// `loss_t(x) = min(1, |x - x_t|_inf)` for a slowly drifting target `x_t`.
#[derive(Debug, Clone)]
pub struct LipschitzOracle {
    dim: usize,
    targets: Vec<f64>,
}

impl LipschitzOracle {
    /// Target starts at `start` (or a seeded uniform point) and every `period`
    /// rounds moves by a uniform step in `[-step, step]^d`, reflected into the cube.
    pub fn drift_target(
        dim: usize,
        horizon: usize,
        seed: u64,
        start: Option<Vec<f64>>,
        period: usize,
        step: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadSpec("dimension must be at least 1".into()));
        }
        if horizon == 0 {
            return Err(Error::BadSpec("horizon must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, "oracle/continuous");
        let mut cur = match start {
            Some(s) if s.len() != dim || s.iter().any(|x| !(0.0..=1.0).contains(x)) => {
                return Err(Error::BadSpec("start must be a point of the unit cube".into()))
            }
            Some(s) => s,
            None => (0..dim).map(|_| rng.gen::<f64>()).collect(),
        };
        let mut targets = Vec::with_capacity(horizon * dim);
        for t in 0..horizon {
            if period > 0 && t > 0 && t % period == 0 {
                for x in cur.iter_mut() {
                    let mut y = *x + rng.gen_range(-step..=step);
                    if y < 0.0 {
                        y = -y;
                    }
                    if y > 1.0 {
                        y = 2.0 - y;
                    }
                    *x = y.clamp(0.0, 1.0);
                }
            }
            targets.extend_from_slice(&cur);
        }
        Ok(LipschitzOracle { dim, targets })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.targets.len() / self.dim
    }

    pub fn target(&self, t: usize) -> &[f64] {
        &self.targets[(t - 1) * self.dim..t * self.dim]
    }

    pub fn loss(&self, t: usize, x: &[f64]) -> f64 {
        self.target(t)
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            .min(1.0)
    }

    /// Best fixed point of the cube, searched over a grid with `resolution`
    /// steps per axis plus every target position.
    pub fn best_fixed_loss(&self, resolution: usize) -> (Vec<f64>, f64) {
        let mut candidates = crate::metric::grid_points(self.dim, resolution + 1);
        let mut seen: Vec<&[f64]> = Vec::new();
        for t in 1..=self.horizon() {
            let x = self.target(t);
            if !seen.contains(&x) && seen.len() < 256 {
                seen.push(x);
            }
        }
        candidates.extend(seen.into_iter().map(<[f64]>::to_vec));
        let mut best = (candidates[0].clone(), f64::INFINITY);
        for c in candidates {
            let total: f64 = (1..=self.horizon()).map(|t| self.loss(t, &c)).sum();
            if total < best.1 {
                best = (c, total);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{make_metric, MetricFamily};

    #[test]
    fn drift_examples() {
        let g = make_metric(MetricFamily::Grid1d { k: 5 }).unwrap();
        let o = LossOracle::new(
            &AdversarySpec::DriftTarget { start: Some(2), period: 0, step: 0.25 },
            1,
            &g,
            10,
        )
        .unwrap();
        for t in 1..=10 {
            let row: Vec<f64> = (0..5).map(|i| o.loss(t, i)).collect();
            assert_eq!(row, vec![0.5, 0.25, 0.0, 0.25, 0.5]);
        }
        let moving = LossOracle::new(
            &AdversarySpec::DriftTarget { start: None, period: 3, step: 0.25 },
            4,
            &g,
            300,
        )
        .unwrap();
        assert!(moving.lipschitz_excess(&g, &(1..=300).collect::<Vec<_>>()) <= 0.0);
        for t in 2..=300 {
            let (a, b) = (moving.target(t - 1).unwrap(), moving.target(t).unwrap());
            assert!(g.dist(a, b) <= 0.25);
        }
    }

    #[test]
    fn gap_oracle_means() {
        let u = make_metric(MetricFamily::Uniform { k: 4 }).unwrap();
        let spec = AdversarySpec::StochasticGap { gap: 0.3, best_mean: Some(0.2), best: Some(1) };
        let o = LossOracle::new(&spec, 3, &u, 20_000).unwrap();
        let totals = o.cumulative_losses();
        assert!((totals[1] / 20_000.0 - 0.2).abs() < 0.02);
        assert!((totals[0] / 20_000.0 - 0.5).abs() < 0.02);
        assert_eq!(o.comparator().0, 1);
        let zero = AdversarySpec::StochasticGap { gap: 0.0, best_mean: Some(0.5), best: None };
        let o = LossOracle::new(&zero, 3, &u, 20_000).unwrap();
        for v in o.cumulative_losses() {
            assert!((v / 20_000.0 - 0.5).abs() < 0.02);
        }
        let bad = AdversarySpec::StochasticGap { gap: 0.8, best_mean: Some(0.5), best: None };
        assert!(LossOracle::new(&bad, 3, &u, 10).is_err());
    }

    #[test]
    fn epoch_oracle_structure() {
        let u = make_metric(MetricFamily::Uniform { k: 8 }).unwrap();
        let spec = AdversarySpec::EpochAdversary { epoch_len: Some(10), gap: Some(0.4) };
        let o = LossOracle::new(&spec, 5, &u, 100).unwrap();
        for t in 1..=100 {
            let row: Vec<f64> = (0..8).map(|i| o.loss(t, i)).collect();
            let best = row.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(best, 0.3);
            assert_eq!(row.iter().filter(|&&v| v == 0.5).count(), 1);
            if t % 10 != 0 {
                assert_eq!(row, (0..8).map(|i| o.loss(t + 1, i)).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn spec_strings() {
        assert_eq!(
            "drift:period=5,step=0.5".parse::<AdversarySpec>().unwrap(),
            AdversarySpec::DriftTarget { start: None, period: 5, step: 0.5 }
        );
        assert_eq!(
            "epoch".parse::<AdversarySpec>().unwrap(),
            AdversarySpec::EpochAdversary { epoch_len: None, gap: None }
        );
        assert!("epoch:foo=1".parse::<AdversarySpec>().is_err());
        assert!("nope".parse::<AdversarySpec>().is_err());
        assert!("file".parse::<AdversarySpec>().is_err());
    }

    #[test]
    fn file_oracle_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "0,1\n0.5,0.25\n1,0\n").unwrap();
        let u = make_metric(MetricFamily::Uniform { k: 2 }).unwrap();
        let spec = AdversarySpec::FromFile { path: path.clone() };
        let o = LossOracle::new(&spec, 0, &u, 3).unwrap();
        assert_eq!(o.loss(2, 1), 0.25);
        assert_eq!(o.comparator(), (1, 1.25));
        assert!(matches!(LossOracle::new(&spec, 0, &u, 4), Err(Error::FileShapeMismatch { rows: 3, .. })));
    }

    #[test]
    fn continuous_drift_is_lipschitz_and_bounded() {
        let o = LipschitzOracle::drift_target(2, 200, 3, None, 10, 0.2).unwrap();
        for t in 1..=200 {
            assert!(o.target(t).iter().all(|x| (0.0..=1.0).contains(x)));
            let a = [0.1, 0.9];
            let b = [0.3, 0.85];
            assert!((o.loss(t, &a) - o.loss(t, &b)).abs() <= 0.2 + 1e-15);
        }
        assert_eq!("drift".parse::<DriftParams>().unwrap(), DriftParams::default());
        assert_eq!(
            "drift:period=3,step=0.5".parse::<DriftParams>().unwrap(),
            DriftParams { period: 3, step: 0.5 }
        );
        assert!("gap".parse::<DriftParams>().is_err());
        let fixed = LipschitzOracle::drift_target(1, 50, 3, Some(vec![0.37]), 0, 0.1).unwrap();
        let (x, v) = fixed.best_fixed_loss(100);
        assert_eq!((x, v), (vec![0.37], 0.0));
    }
}
