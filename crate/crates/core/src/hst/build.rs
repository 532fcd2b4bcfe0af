//! Dominating trees for arbitrary finite metrics.
//!
//! Leaves are the points. Level `l` holds the balls of a greedy cover at radius
//! `2^(l - depth)`; each node hangs from the lowest-indexed cover ball at the
//! next radius that contains its own center. A pair whose lowest common
//! ancestor sits at level `r` is then joined by two center chains of total
//! length below `2^(r - depth + 2)`, so four times the tree metric dominates
//! the input metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tree::HstTree;
use crate::error::{Error, Result};
use crate::metric::{greedy_cover, MetricSpace};

/// Smallest `depth >= 1` with `2^-depth` strictly below the minimum positive distance.
pub fn build_depth(m: &MetricSpace) -> usize {
    let min = match m.min_positive_distance() {
        Some(d) => d,
        None => return 1,
    };
    let mut depth = 1;
    while 2f64.powi(-(depth as i32)) >= min {
        depth += 1;
    }
    depth
}

pub fn build_hst(m: &MetricSpace) -> Result<HstTree> {
    let k = m.len();
    if k == 0 {
        return Err(Error::EmptyMetric);
    }
    let depth = build_depth(m);

    let mut level = vec![0usize; k];
    let mut parent: Vec<Option<usize>> = vec![None; k];
    // Center point of every node on the current level, keyed by node id.
    let mut frontier: Vec<(usize, usize)> = (0..k).map(|i| (i, i)).collect();

    for l in 1..depth {
        let radius = 2f64.powi(l as i32 - depth as i32);
        let mut centers = greedy_cover(m, radius);
        centers.sort_unstable();
        let mut node_of_center: BTreeMap<usize, usize> = BTreeMap::new();
        let mut next = Vec::new();
        for &(node, point) in &frontier {
            let chosen = *centers
                .iter()
                .find(|&&c| m.dist(c, point) <= radius)
                .expect("greedy cover covers every point");
            let id = *node_of_center.entry(chosen).or_insert_with(|| {
                let id = level.len();
                level.push(l);
                parent.push(None);
                next.push((id, chosen));
                id
            });
            parent[node] = Some(id);
        }
        frontier = next;
    }

    let root = level.len();
    level.push(depth);
    parent.push(None);
    for &(node, _) in &frontier {
        parent[node] = Some(root);
    }

    let tree = HstTree::from_parts(depth, level, parent, (0..k).collect())?;
    let report = verify_dominance(m, &tree)?;
    if let Some(v) = report.violations.first() {
        return Err(Error::DominanceViolation { i: v.i, j: v.j, scaled: 4.0 * v.tree, dist: v.dist });
    }
    Ok(tree)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
    pub tree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DominanceReport {
    pub violations: Vec<Violation>,
    /// Largest `d(i, j) / tree(i, j)` over distinct pairs.
    pub max_ratio: f64,
}

impl DominanceReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check `d(i, j) <= 4 * tree(i, j)` on every pair.
pub fn verify_dominance(m: &MetricSpace, t: &HstTree) -> Result<DominanceReport> {
    if m.len() != t.num_actions() {
        return Err(Error::ActionMismatch { tree: t.num_actions(), metric: m.len() });
    }
    let mut violations = Vec::new();
    let mut max_ratio = 0.0f64;
    for i in 0..m.len() {
        for j in (i + 1)..m.len() {
            let d = m.dist(i, j);
            let dt = t.distance(i, j)?;
            max_ratio = max_ratio.max(d / dt);
            if 4.0 * dt < d {
                violations.push(Violation { i, j, dist: d, tree: dt });
            }
        }
    }
    Ok(DominanceReport { violations, max_ratio })
}
