//! Depth/complexity balance conditions and the deepen/collapse reshaping loop.

use serde::{Deserialize, Serialize};

use super::tree::HstTree;
use crate::error::{Error, Result};

/// Which form of the well-behaved conditions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum ConditionSet {
    /// `2^-H T <= sqrt(2^H dim T)`, then `2^(H-1) dim <= k` or
    /// `2^-(H-1) T >= sqrt(2^(H-1) dim T)`.
    #[default]
    Appendix,
    /// Variant carrying extra factors of `H`:
    /// `2^-H H T <= sqrt(2^H H dim T)`, then `2^H dim <= k` or
    /// `2^-(H-1) (H-1) T >= sqrt(2^(H-1) (H-1) dim T)`.
    MainText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConditionReport {
    pub depth: usize,
    pub dim: f64,
    pub k: usize,
    pub horizon: u64,
    pub set: ConditionSet,
    pub cond1: bool,
    pub cond2a: bool,
    pub cond2b: bool,
    pub well_behaved: bool,
}

pub fn check_conditions(t: &HstTree, horizon: u64) -> ConditionReport {
    check_conditions_with(t, horizon, ConditionSet::Appendix)
}

pub fn check_conditions_with(t: &HstTree, horizon: u64, set: ConditionSet) -> ConditionReport {
    let depth = t.depth();
    let dim = t.complexity().value;
    let k = t.num_actions();
    let horizon_f = horizon as f64;
    let h = depth as f64;
    let p = |e: f64| 2f64.powf(e);
    let (cond1, cond2a, cond2b) = match set {
        ConditionSet::Appendix => (
            p(-h) * horizon_f <= (p(h) * dim * horizon_f).sqrt(),
            p(h - 1.0) * dim <= k as f64,
            p(-(h - 1.0)) * horizon_f >= (p(h - 1.0) * dim * horizon_f).sqrt(),
        ),
        ConditionSet::MainText => (
            p(-h) * h * horizon_f <= (p(h) * h * dim * horizon_f).sqrt(),
            p(h) * dim <= k as f64,
            p(-(h - 1.0)) * (h - 1.0) * horizon_f
                >= (p(h - 1.0) * (h - 1.0) * dim * horizon_f).sqrt(),
        ),
    };
    ConditionReport {
        depth,
        dim,
        k,
        horizon,
        set,
        cond1,
        cond2a,
        cond2b,
        well_behaved: cond1 && (cond2a || cond2b),
    }
}

/// What happened while reshaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ReshapeStep {
    Deepen,
    Collapse,
}

/// Reshape `t` until it is well-behaved for `horizon`, recording each step.
///
/// First deepen until the depth condition holds, then collapse while the tree
/// is not well-behaved and the collapsed tree would still satisfy the depth
/// condition. Collapsing happens only while `2^(H-1) dim > k`, where it keeps
/// the complexity unchanged.
pub fn reshape_traced(t: &HstTree, horizon: u64) -> Result<(HstTree, Vec<ReshapeStep>)> {
    let horizon = horizon.max(1);
    let cap = 64 + (horizon as f64).log2().ceil() as usize;
    let mut steps = Vec::new();
    let mut cur = t.clone();
    while !check_conditions(&cur, horizon).cond1 {
        if steps.len() >= cap {
            return Err(Error::NonTermination(steps.len()));
        }
        cur = cur.deepen();
        steps.push(ReshapeStep::Deepen);
    }
    while !check_conditions(&cur, horizon).well_behaved {
        if steps.len() >= cap {
            return Err(Error::NonTermination(steps.len()));
        }
        if cur.depth() < 2 {
            break;
        }
        let next = cur.collapse()?;
        if !check_conditions(&next, horizon).cond1 {
            break;
        }
        cur = next;
        steps.push(ReshapeStep::Collapse);
    }
    Ok((cur, steps))
}

pub fn reshape_well_behaved(t: &HstTree, horizon: u64) -> Result<HstTree> {
    reshape_traced(t, horizon).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_examples() {
        let b = HstTree::complete_binary(3).unwrap();
        let r = check_conditions(&b, 1_000_000);
        assert!(!r.cond1);

        let mut deep = b.clone();
        for _ in 0..4 {
            deep = deep.deepen();
        }
        let r = check_conditions(&deep, 1_000_000);
        assert_eq!(r.depth, 7);
        assert!(r.cond1 && !r.cond2a && r.cond2b && r.well_behaved);

        let s = HstTree::star(2).unwrap();
        let r = check_conditions(&s, 4);
        assert!(r.cond1 && r.cond2a && r.well_behaved);
    }

    #[test]
    fn main_text_variant_differs() {
        let s = HstTree::star(2).unwrap();
        let r = check_conditions_with(&s, 4, ConditionSet::MainText);
        // 2^1 * dim = 2 <= 2 still holds; cond1: 2 <= sqrt(2*4) holds.
        assert!(r.cond1 && r.cond2a);
        let b = HstTree::complete_binary(3).unwrap().deepen().deepen().deepen().deepen();
        let r = check_conditions_with(&b, 1_000_000, ConditionSet::MainText);
        // 2^-7 * 7 * 1e6 = 54687.5 > sqrt(2^7 * 7 * 1e6) = 29933.3
        assert!(!r.cond1);
    }

    #[test]
    fn reshape_examples() {
        let (t, steps) = reshape_traced(&HstTree::star(2).unwrap(), 1_000_000).unwrap();
        assert_eq!(t.depth(), 7);
        assert_eq!(steps, vec![ReshapeStep::Deepen; 6]);
        assert!(check_conditions(&t, 1_000_000).well_behaved);

        let b = HstTree::complete_binary(3).unwrap();
        let t = reshape_well_behaved(&b, 1_000_000).unwrap();
        assert_eq!(t.depth(), 7);
        assert_eq!(t.complexity().value, 1.0);

        let s = HstTree::star(2).unwrap();
        assert_eq!(reshape_well_behaved(&s, 4).unwrap(), s);
    }

    #[test]
    fn reshape_collapses_deep_chains() {
        // A very deep binary tree for a short horizon must be collapsed.
        let mut t = HstTree::complete_binary(2).unwrap();
        for _ in 0..8 {
            t = t.deepen();
        }
        let (out, steps) = reshape_traced(&t, 16).unwrap();
        assert!(steps.contains(&ReshapeStep::Collapse));
        assert!(check_conditions(&out, 16).well_behaved);
        assert!(out.depth() < t.depth());
        assert_eq!(out.complexity().value, t.complexity().value);
    }
}
