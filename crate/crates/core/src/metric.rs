//! Finite metric spaces, covering and packing numbers, and their complexities.
//!
//! Balls are closed: `B(i, eps) = { j : d(i, j) <= eps }`, and covering centers
//! are points of the space itself. Two balls of a packing are disjoint when they
//! share no point of the space.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Slack allowed in the triangle inequality.
pub const TRIANGLE_TOL: f64 = 1e-9;

/// Largest space for which exact covering/packing numbers are computed.
pub const EXACT_LIMIT: usize = 20;

/// A finite metric space with diameter at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpace {
    labels: Vec<String>,
    k: usize,
    dist: Vec<f64>,
}

/// Validate a distance matrix. With `normalize`, the matrix is first divided by
/// its diameter (when positive).
pub fn validate_metric(
    matrix: &[Vec<f64>],
    labels: Vec<String>,
    normalize: bool,
) -> Result<MetricSpace> {
    let k = matrix.len();
    if k == 0 {
        return Err(Error::EmptyMetric);
    }
    for (row, r) in matrix.iter().enumerate() {
        if r.len() != k {
            return Err(Error::NotSquare { rows: k, row, cols: r.len() });
        }
    }
    if labels.len() != k {
        return Err(Error::LabelCount { expected: k, got: labels.len() });
    }
    let mut dist: Vec<f64> = matrix.iter().flatten().copied().collect();
    for (idx, &v) in dist.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::EntryOutOfRange { i: idx / k, j: idx % k, value: v });
        }
    }
    if normalize {
        let diam = dist.iter().copied().fold(0.0, f64::max);
        if diam > 0.0 {
            dist.iter_mut().for_each(|v| *v /= diam);
        }
    }
    let at = |i: usize, j: usize| dist[i * k + j];
    for i in 0..k {
        if at(i, i) != 0.0 {
            return Err(Error::NonzeroDiagonal { i, value: at(i, i) });
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if at(i, j) != at(j, i) {
                return Err(Error::AsymmetricMatrix { i, j, dij: at(i, j), dji: at(j, i) });
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            let v = at(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::EntryOutOfRange { i, j, value: v });
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            for via in 0..k {
                let detour = at(i, via) + at(via, j);
                if at(i, j) > detour + TRIANGLE_TOL {
                    return Err(Error::TriangleViolation { i, j, via, dij: at(i, j), detour });
                }
            }
        }
    }
    Ok(MetricSpace { labels, k, dist })
}

impl MetricSpace {
    /// Validate `matrix` with default labels `0..k`.
    pub fn from_matrix(matrix: &[Vec<f64>]) -> Result<Self> {
        let labels = (0..matrix.len()).map(|i| i.to_string()).collect();
        validate_metric(matrix, labels, false)
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.k..(i + 1) * self.k]
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest positive distance, if any pair is at positive distance.
    pub fn min_positive_distance(&self) -> Option<f64> {
        self.dist.iter().copied().filter(|&d| d > 0.0).reduce(f64::min)
    }

    /// Sorted distinct positive distances.
    pub fn distinct_distances(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.dist.iter().copied().filter(|&d| d > 0.0).collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }

    /// Points of the closed ball of radius `eps` around `i`.
    pub fn ball(&self, i: usize, eps: f64) -> Vec<usize> {
        (0..self.k).filter(|&j| self.dist(i, j) <= eps).collect()
    }

    /// Read a CSV file whose first row holds the labels and whose next rows hold
    /// the distance matrix.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let labels: Vec<String> = match records.next() {
            Some(r) => r?.iter().map(str::to_string).collect(),
            None => return Err(Error::EmptyMetric),
        };
        let mut matrix = Vec::with_capacity(labels.len());
        for (row, rec) in records.enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {}: bad number {s:?}", row + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            matrix.push(vals);
        }
        if matrix.len() != labels.len() {
            return Err(Error::NotSquare {
                rows: matrix.len(),
                row: matrix.len(),
                cols: labels.len(),
            });
        }
        validate_metric(&matrix, labels, false)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.labels)?;
        for i in 0..self.k {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Standard metric families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "camelCase")]
pub enum MetricFamily {
    /// All distinct points at distance one.
    Uniform { k: usize },
    /// `k` equally spaced points of `[0, 1]`.
    Grid1d { k: usize },
    /// `m^d` grid points of `[0, 1]^d` under the max-norm.
    GridLinf { d: usize, m: usize },
    /// Random symmetric weights closed under shortest paths.
    Random { k: usize, seed: u64 },
}

impl FromStr for MetricFamily {
    type Err = Error;

    /// Parses `uniform:K`, `grid1d:K`, `gridlinf:D:M` and `random:K:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |idx: usize| -> Result<u64> {
            parts
                .get(idx)
                .ok_or_else(|| Error::BadSpec(format!("{s}: missing argument")))?
                .parse::<u64>()
                .map_err(|_| Error::BadSpec(format!("{s}: bad integer")))
        };
        let family = match (parts[0].to_ascii_lowercase().as_str(), parts.len()) {
            ("uniform", 2) => MetricFamily::Uniform { k: num(1)? as usize },
            ("grid1d", 2) => MetricFamily::Grid1d { k: num(1)? as usize },
            ("gridlinf", 3) => MetricFamily::GridLinf { d: num(1)? as usize, m: num(2)? as usize },
            ("random", 3) => MetricFamily::Random { k: num(1)? as usize, seed: num(2)? },
            _ => return Err(Error::BadSpec(s.to_string())),
        };
        Ok(family)
    }
}

impl fmt::Display for MetricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricFamily::Uniform { k } => write!(f, "uniform:{k}"),
            MetricFamily::Grid1d { k } => write!(f, "grid1d:{k}"),
            MetricFamily::GridLinf { d, m } => write!(f, "gridlinf:{d}:{m}"),
            MetricFamily::Random { k, seed } => write!(f, "random:{k}:{seed}"),
        }
    }
}

/// Lattice coordinates `x / (m - 1)` of the `m^d` grid, in row-major order.
pub fn grid_points(d: usize, m: usize) -> Vec<Vec<f64>> {
    let coord = |x: usize| if m > 1 { x as f64 / (m - 1) as f64 } else { 0.0 };
    let n = m.pow(d as u32);
    (0..n)
        .map(|mut idx| {
            let mut p = vec![0.0; d];
            for c in (0..d).rev() {
                p[c] = coord(idx % m);
                idx /= m;
            }
            p
        })
        .collect()
}

/// Max-norm distance matrix of a point set.
pub fn linf_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                .collect()
        })
        .collect()
}

fn point_label(p: &[f64]) -> String {
    p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn make_metric(family: MetricFamily) -> Result<MetricSpace> {
    match family {
        MetricFamily::Uniform { k } => {
            if k == 0 {
                return Err(Error::BadSpec("uniform needs k >= 1".into()));
            }
            let m: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                .collect();
            MetricSpace::from_matrix(&m)
        }
        MetricFamily::Grid1d { k } => {
            if k == 0 {
                return Err(Error::BadSpec("grid1d needs k >= 1".into()));
            }
            let pts = grid_points(1, k);
            let labels = pts.iter().map(|p| point_label(p)).collect();
            validate_metric(&linf_matrix(&pts), labels, false)
        }
        MetricFamily::GridLinf { d, m } => {
            if d == 0 || m == 0 {
                return Err(Error::BadSpec("gridlinf needs d >= 1 and m >= 1".into()));
            }
            if (m as f64).powi(d as i32) > 4096.0 {
                return Err(Error::BadSpec(format!("gridlinf:{d}:{m} has too many points")));
            }
            let pts = grid_points(d, m);
            let labels = pts.iter().map(|p| point_label(p)).collect();
            validate_metric(&linf_matrix(&pts), labels, false)
        }
        MetricFamily::Random { k, seed } => {
            if k == 0 {
                return Err(Error::BadSpec("random needs k >= 1".into()));
            }
            let mut rng = rng::stream(seed, "metric/random");
            let mut m = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in (i + 1)..k {
                    let w = rng.gen_range(0.01..=1.0);
                    m[i][j] = w;
                    m[j][i] = w;
                }
            }
            // Floyd-Warshall closure restores the triangle inequality.
            for via in 0..k {
                for i in 0..k {
                    for j in 0..k {
                        let alt = m[i][via] + m[via][j];
                        if alt < m[i][j] {
                            m[i][j] = alt;
                        }
                    }
                }
            }
            let labels = (0..k).map(|i| format!("p{i}")).collect();
            validate_metric(&m, labels, false)
        }
    }
}

/// How covering and packing numbers are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    #[default]
    Exact,
    Greedy,
}

impl FromStr for CountMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(CountMode::Exact),
            "greedy" => Ok(CountMode::Greedy),
            _ => Err(Error::BadSpec(format!("unknown mode {s}"))),
        }
    }
}

/// Greedy set cover by closed balls of radius `eps`: repeatedly takes the ball
/// covering the most uncovered points, breaking ties by lowest center index.
/// Returns the chosen centers in selection order.
pub fn greedy_cover(m: &MetricSpace, eps: f64) -> Vec<usize> {
    let k = m.len();
    let mut covered = vec![false; k];
    let mut left = k;
    let mut centers = Vec::new();
    while left > 0 {
        let mut best = (0usize, 0usize);
        for c in 0..k {
            let gain = (0..k).filter(|&j| !covered[j] && m.dist(c, j) <= eps).count();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        for j in 0..k {
            if !covered[j] && m.dist(c, j) <= eps {
                covered[j] = true;
                left -= 1;
            }
        }
        centers.push(c);
    }
    centers
}

/// Maximal packing built by scanning points in index order.
pub fn greedy_packing(m: &MetricSpace, eps: f64) -> Vec<usize> {
    let k = m.len();
    let mut chosen: Vec<usize> = Vec::new();
    for i in 0..k {
        if chosen.iter().all(|&c| !balls_intersect(m, i, c, eps)) {
            chosen.push(i);
        }
    }
    chosen
}

fn balls_intersect(m: &MetricSpace, a: usize, b: usize, eps: f64) -> bool {
    (0..m.len()).any(|l| m.dist(a, l) <= eps && m.dist(b, l) <= eps)
}

fn ball_masks(m: &MetricSpace, eps: f64) -> Vec<u32> {
    (0..m.len())
        .map(|i| {
            (0..m.len())
                .filter(|&j| m.dist(i, j) <= eps)
                .fold(0u32, |acc, j| acc | (1 << j))
        })
        .collect()
}

fn exact_cover(m: &MetricSpace, eps: f64) -> usize {
    let k = m.len();
    let balls = ball_masks(m, eps);
    let full: u32 = if k == 32 { u32::MAX } else { (1u32 << k) - 1 };
    let max_ball = balls.iter().map(|b| b.count_ones()).max().unwrap_or(1).max(1);

    fn search(uncovered: u32, depth: usize, best: &mut usize, balls: &[u32], max_ball: u32) {
        if uncovered == 0 {
            *best = (*best).min(depth);
            return;
        }
        let lower = depth + uncovered.count_ones().div_ceil(max_ball) as usize;
        if lower >= *best {
            return;
        }
        let u = uncovered.trailing_zeros() as usize;
        // Centers whose ball contains u, largest new coverage first.
        let mut options: Vec<(u32, usize)> = balls
            .iter()
            .enumerate()
            .filter(|(_, b)| *b & (1 << u) != 0)
            .map(|(c, b)| ((b & uncovered).count_ones(), c))
            .collect();
        options.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, c) in options {
            search(uncovered & !balls[c], depth + 1, best, balls, max_ball);
        }
    }

    let mut best = greedy_cover(m, eps).len();
    search(full, 0, &mut best, &balls, max_ball);
    best
}

fn exact_packing(m: &MetricSpace, eps: f64) -> usize {
    let k = m.len();
    let balls = ball_masks(m, eps);
    let conflict: Vec<u32> = (0..k)
        .map(|i| (0..k).filter(|&j| balls[i] & balls[j] != 0).fold(0u32, |acc, j| acc | (1 << j)))
        .collect();

    fn search(cand: u32, size: usize, best: &mut usize, conflict: &[u32]) {
        if cand == 0 {
            *best = (*best).max(size);
            return;
        }
        if size + cand.count_ones() as usize <= *best {
            return;
        }
        let v = cand.trailing_zeros() as usize;
        search(cand & !conflict[v], size + 1, best, conflict);
        search(cand & !(1 << v), size, best, conflict);
    }

    let full: u32 = if k == 32 { u32::MAX } else { (1u32 << k) - 1 };
    let mut best = greedy_packing(m, eps).len();
    search(full, 0, &mut best, &conflict);
    best
}

fn check_exact(m: &MetricSpace, mode: CountMode) -> Result<()> {
    if mode == CountMode::Exact && m.len() > EXACT_LIMIT {
        return Err(Error::ExactTooLarge { k: m.len(), max: EXACT_LIMIT });
    }
    Ok(())
}

/// Minimum number of closed `eps`-balls centered in the space that cover it.
/// Greedy mode returns the greedy set-cover size instead.
pub fn covering_number(m: &MetricSpace, eps: f64, mode: CountMode) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::BadRadius(eps));
    }
    check_exact(m, mode)?;
    Ok(match mode {
        CountMode::Exact => exact_cover(m, eps),
        CountMode::Greedy => greedy_cover(m, eps).len(),
    })
}

/// Maximum number of points whose closed `eps`-balls are pairwise disjoint.
/// Greedy mode returns the size of a maximal packing, a lower bound.
pub fn packing_number(m: &MetricSpace, eps: f64, mode: CountMode) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::BadRadius(eps));
    }
    check_exact(m, mode)?;
    Ok(match mode {
        CountMode::Exact => exact_packing(m, eps),
        CountMode::Greedy => greedy_packing(m, eps).len(),
    })
}

/// Evaluates `sup_{0 < eps < 1} eps * N(eps)` for a counting function that is
/// constant between consecutive pairwise distances. On each interval `[a, b)`
/// the supremum is `b * N(a)`, approached from the left.
fn step_supremum(
    m: &MetricSpace,
    mut count: impl FnMut(f64) -> Result<usize>,
) -> Result<f64> {
    let d = m.distinct_distances();
    if d.is_empty() {
        return Ok(count(0.5)? as f64);
    }
    let mut sup = 0.0f64;
    // [0, d_1)
    let first_end = d[0].min(1.0);
    sup = sup.max(first_end * count(d[0] / 2.0)? as f64);
    for (idx, &a) in d.iter().enumerate() {
        if a >= 1.0 {
            break;
        }
        let b = d.get(idx + 1).copied().unwrap_or(1.0).min(1.0);
        sup = sup.max(b * count(a)? as f64);
    }
    Ok(sup)
}

pub fn covering_complexity(m: &MetricSpace, mode: CountMode) -> Result<f64> {
    check_exact(m, mode)?;
    step_supremum(m, |eps| covering_number(m, eps, mode))
}

pub fn packing_complexity(m: &MetricSpace, mode: CountMode) -> Result<f64> {
    check_exact(m, mode)?;
    step_supremum(m, |eps| packing_number(m, eps, mode))
}

/// Covering and packing numbers at every candidate radius, plus both complexities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComplexityReport {
    pub breakpoints: Vec<f64>,
    pub cover_nums: Vec<usize>,
    pub pack_nums: Vec<usize>,
    pub cover_complexity: f64,
    pub pack_complexity: f64,
    pub mode: CountMode,
}

/// Candidate radii: the distinct positive distances together with the dyadic
/// radii `1/2, 1/4, ...` down to the first one below the minimum distance.
pub fn breakpoints(m: &MetricSpace) -> Vec<f64> {
    let mut b = m.distinct_distances();
    let min = m.min_positive_distance().unwrap_or(0.5);
    let mut r = 0.5;
    loop {
        b.push(r);
        if r < min {
            break;
        }
        r /= 2.0;
    }
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

pub fn complexity_report(m: &MetricSpace, mode: CountMode) -> Result<ComplexityReport> {
    check_exact(m, mode)?;
    let breakpoints = breakpoints(m);
    let cover_nums = breakpoints
        .iter()
        .map(|&e| covering_number(m, e, mode))
        .collect::<Result<Vec<_>>>()?;
    let pack_nums = breakpoints
        .iter()
        .map(|&e| packing_number(m, e, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexityReport {
        cover_complexity: covering_complexity(m, mode)?,
        pack_complexity: packing_complexity(m, mode)?,
        breakpoints,
        cover_nums,
        pack_nums,
        mode,
    })
}
