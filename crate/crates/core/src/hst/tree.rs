use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A leveled rooted tree whose leaves all sit at level 0 and are in bijection
/// with the actions `0..k`. The root sits at level `depth`.
///
/// The induced metric is `d(i, j) = 2^level(lca(i, j)) / 2^depth` for `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HstTree {
    depth: usize,
    level: Vec<usize>,
    parent: Vec<Option<usize>>,
    leaf_of: Vec<usize>,
    // derived
    root: usize,
    children: Vec<Vec<usize>>,
    /// `anc[h][i]` is the level-`h` ancestor of action `i`.
    anc: Vec<Vec<usize>>,
    /// Actions in depth-first order; every node's leaves form a contiguous run.
    order: Vec<usize>,
    span: Vec<(usize, usize)>,
}

impl HstTree {
    /// Assemble a tree from per-node levels and parents, and the leaf node of
    /// each action.
    pub fn from_parts(
        depth: usize,
        level: Vec<usize>,
        parent: Vec<Option<usize>>,
        leaf_of: Vec<usize>,
    ) -> Result<Self> {
        let n = level.len();
        let bad = |msg: String| Err(Error::MalformedTree(msg));
        if depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if parent.len() != n {
            return bad("level and parent lists differ in length".into());
        }
        if leaf_of.is_empty() {
            return bad("tree has no actions".into());
        }
        let mut root = None;
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            if level[v] > depth {
                return bad(format!("node {v} has level {} above depth {depth}", level[v]));
            }
            match parent[v] {
                None => {
                    if level[v] != depth {
                        return bad(format!("node {v} has no parent but is not at the root level"));
                    }
                    if root.replace(v).is_some() {
                        return bad("more than one root".into());
                    }
                }
                Some(p) => {
                    if p >= n {
                        return bad(format!("node {v} has unknown parent {p}"));
                    }
                    if level[p] != level[v] + 1 {
                        return bad(format!(
                            "node {v} at level {} has parent {p} at level {}",
                            level[v], level[p]
                        ));
                    }
                    children[p].push(v);
                }
            }
        }
        let root = match root {
            Some(r) => r,
            None => return bad("no root".into()),
        };
        for v in 0..n {
            if level[v] > 0 && children[v].is_empty() {
                return bad(format!("internal node {v} has no children"));
            }
        }
        let mut action_of = vec![None; n];
        for (a, &leaf) in leaf_of.iter().enumerate() {
            if leaf >= n || level[leaf] != 0 {
                return bad(format!("action {a} is mapped to non-leaf node {leaf}"));
            }
            if action_of[leaf].replace(a).is_some() {
                return bad(format!("leaf {leaf} carries two actions"));
            }
        }
        if let Some(v) = (0..n).find(|&v| level[v] == 0 && action_of[v].is_none()) {
            return bad(format!("leaf {v} carries no action"));
        }

        let k = leaf_of.len();
        let mut anc = vec![vec![0usize; k]; depth + 1];
        for a in 0..k {
            let mut v = leaf_of[a];
            anc[0][a] = v;
            for row in anc.iter_mut().skip(1) {
                v = parent[v].expect("levels are consistent");
                row[a] = v;
            }
        }

        let mut order = Vec::with_capacity(k);
        let mut span = vec![(0, 0); n];
        let mut stack = vec![(root, false)];
        let mut start = vec![0usize; n];
        while let Some((v, done)) = stack.pop() {
            if done {
                span[v] = (start[v], order.len());
                continue;
            }
            start[v] = order.len();
            if let Some(a) = action_of[v] {
                order.push(a);
                span[v] = (start[v], order.len());
                continue;
            }
            stack.push((v, true));
            for &c in children[v].iter().rev() {
                stack.push((c, false));
            }
        }
        if order.len() != k {
            return bad("tree is not connected".into());
        }

        Ok(HstTree { depth, level, parent, leaf_of, root, children, anc, order, span })
    }

    /// Every action hangs directly below the root: the uniform metric.
    pub fn star(k: usize) -> Result<Self> {
        let mut level = vec![0; k];
        level.push(1);
        let parent = (0..k).map(|_| Some(k)).chain(std::iter::once(None)).collect();
        Self::from_parts(1, level, parent, (0..k).collect())
    }

    /// Complete binary tree with `2^depth` leaves.
    pub fn complete_binary(depth: usize) -> Result<Self> {
        let mut level = Vec::new();
        let mut parent = Vec::new();
        let mut prev: Vec<usize> = (0..1usize << depth).collect();
        level.extend(std::iter::repeat(0).take(prev.len()));
        parent.extend(std::iter::repeat(None).take(prev.len()));
        for h in 1..=depth {
            let mut cur = Vec::new();
            for pair in prev.chunks(2) {
                let id = level.len();
                level.push(h);
                parent.push(None);
                for &c in pair {
                    parent[c] = Some(id);
                }
                cur.push(id);
            }
            prev = cur;
        }
        let k = 1usize << depth;
        Self::from_parts(depth, level, parent, (0..k).collect())
    }

    /// A single action at the bottom of a unary chain.
    pub fn chain(depth: usize) -> Result<Self> {
        let level: Vec<usize> = (0..=depth).collect();
        let parent = (0..=depth).map(|v| if v < depth { Some(v + 1) } else { None }).collect();
        Self::from_parts(depth, level, parent, vec![0])
    }

    /// Random tree over `k` actions with the given depth: at each level the
    /// nodes below are split into contiguous groups of random size.
    pub fn random<R: Rng + ?Sized>(k: usize, depth: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::MalformedTree("tree has no actions".into()));
        }
        let mut level = vec![0; k];
        let mut parent: Vec<Option<usize>> = vec![None; k];
        let mut prev: Vec<usize> = (0..k).collect();
        for h in 1..=depth {
            let mut cur = Vec::new();
            let mut idx = 0;
            while idx < prev.len() {
                let remaining = prev.len() - idx;
                let size = if h == depth { remaining } else { rng.gen_range(1..=remaining.min(4)) };
                let id = level.len();
                level.push(h);
                parent.push(None);
                for &c in &prev[idx..idx + size] {
                    parent[c] = Some(id);
                }
                cur.push(id);
                idx += size;
            }
            prev = cur;
        }
        Self::from_parts(depth, level, parent, (0..k).collect())
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of actions.
    pub fn num_actions(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.level.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn level(&self, node: usize) -> usize {
        self.level[node]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn leaf_of(&self, action: usize) -> usize {
        self.leaf_of[action]
    }

    /// Level-`h` ancestor of `action`.
    #[inline]
    pub fn ancestor(&self, action: usize, h: usize) -> usize {
        self.anc[h][action]
    }

    /// Actions below `node`.
    pub fn leaves(&self, node: usize) -> &[usize] {
        let (a, b) = self.span[node];
        &self.order[a..b]
    }

    /// `A_h(i)`: actions sharing `i`'s level-`h` ancestor.
    pub fn subtree_actions(&self, action: usize, h: usize) -> &[usize] {
        self.leaves(self.ancestor(action, h))
    }

    /// Nodes at level `h`.
    pub fn nodes_at(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.level.len()).filter(move |&v| self.level[v] == h)
    }

    /// Node counts per level `0..=depth`.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.depth + 1];
        for &l in &self.level {
            n[l] += 1;
        }
        n
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a < self.num_actions() {
            Ok(())
        } else {
            Err(Error::UnknownAction(a))
        }
    }

    /// Level of the lowest common ancestor of two actions.
    pub fn lca_level(&self, i: usize, j: usize) -> Result<usize> {
        self.check_action(i)?;
        self.check_action(j)?;
        Ok((0..=self.depth).find(|&h| self.anc[h][i] == self.anc[h][j]).unwrap_or(self.depth))
    }

    /// Tree distance; zero on the diagonal.
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let h = self.lca_level(i, j)?;
        if i == j {
            return Ok(0.0);
        }
        Ok(level_scale(h, self.depth))
    }

    /// Pairwise tree distances.
    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.num_actions();
        (0..k)
            .map(|i| (0..k).map(|j| self.distance(i, j).expect("valid actions")).collect())
            .collect()
    }

    /// Complexity of the tree metric, evaluated at the dyadic radii `2^(h - depth)`.
    pub fn complexity(&self) -> TreeComplexity {
        let counts = self.level_counts();
        let per_level: Vec<LevelTerm> = (0..self.depth)
            .map(|h| LevelTerm {
                level: h,
                nodes: counts[h],
                term: level_scale(h, self.depth) * counts[h] as f64,
            })
            .collect();
        let value = per_level.iter().map(|t| t.term).fold(0.0, f64::max);
        TreeComplexity { per_level, value }
    }

    /// Give every leaf a single child which becomes the new leaf of the same
    /// action. Tree distances do not change.
    pub fn deepen(&self) -> HstTree {
        let k = self.num_actions();
        let n = self.num_nodes();
        let mut level: Vec<usize> = self.level.iter().map(|l| l + 1).collect();
        let mut parent = self.parent.clone();
        let mut leaf_of = Vec::with_capacity(k);
        for a in 0..k {
            level.push(0);
            parent.push(Some(self.leaf_of[a]));
            leaf_of.push(n + a);
        }
        HstTree::from_parts(self.depth + 1, level, parent, leaf_of).expect("deepen keeps a valid tree")
    }

    /// Hang every leaf from its grandparent and drop the level-1 nodes.
    /// Tree distances never decrease.
    pub fn collapse(&self) -> Result<HstTree> {
        if self.depth < 2 {
            return Err(Error::TooShallow(self.depth));
        }
        let mut remap = vec![usize::MAX; self.num_nodes()];
        let mut level = Vec::new();
        for v in 0..self.num_nodes() {
            if self.level[v] != 1 {
                remap[v] = level.len();
                level.push(self.level[v].saturating_sub(1));
            }
        }
        let mut parent = vec![None; level.len()];
        for v in 0..self.num_nodes() {
            if self.level[v] == 1 {
                continue;
            }
            parent[remap[v]] = match self.parent[v] {
                None => None,
                Some(p) if self.level[v] == 0 => {
                    Some(remap[self.parent[p].expect("level-1 node has a parent")])
                }
                Some(p) => Some(remap[p]),
            };
        }
        let leaf_of = self.leaf_of.iter().map(|&l| remap[l]).collect();
        HstTree::from_parts(self.depth - 1, level, parent, leaf_of)
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            depth: self.depth,
            nodes: (0..self.num_nodes())
                .map(|id| TreeFileNode { id, level: self.level[id], parent: self.parent[id] })
                .collect(),
            leaf_action: self.leaf_of.iter().enumerate().map(|(a, &leaf)| (leaf, a)).collect(),
        }
    }

    pub fn from_file(file: &TreeFile) -> Result<Self> {
        let n = file.nodes.len();
        let mut level = vec![usize::MAX; n];
        let mut parent = vec![None; n];
        for node in &file.nodes {
            if node.id >= n || level[node.id] != usize::MAX {
                return Err(Error::MalformedTree(format!("bad or duplicate node id {}", node.id)));
            }
            level[node.id] = node.level;
            parent[node.id] = node.parent;
        }
        let k = file.leaf_action.len();
        let mut leaf_of = vec![usize::MAX; k];
        for (&leaf, &a) in &file.leaf_action {
            if a >= k || leaf_of[a] != usize::MAX {
                return Err(Error::MalformedTree(format!("bad or duplicate action {a}")));
            }
            leaf_of[a] = leaf;
        }
        HstTree::from_parts(file.depth, level, parent, leaf_of)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// `2^h / 2^depth`, exact in binary floating point.
#[inline]
pub fn level_scale(h: usize, depth: usize) -> f64 {
    2f64.powi(h as i32 - depth as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTerm {
    pub level: usize,
    pub nodes: usize,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeComplexity {
    pub per_level: Vec<LevelTerm>,
    pub value: f64,
}

/// On-disk tree layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeFile {
    pub depth: usize,
    pub nodes: Vec<TreeFileNode>,
    /// Leaf node id to action.
    pub leaf_action: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFileNode {
    pub id: usize,
    pub level: usize,
    pub parent: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn distances_on_binary_tree() {
        let t = HstTree::complete_binary(2).unwrap();
        assert_eq!(t.distance(0, 1).unwrap(), 0.5);
        assert_eq!(t.distance(0, 2).unwrap(), 1.0);
        assert_eq!(t.distance(3, 3).unwrap(), 0.0);
        assert!(matches!(t.distance(0, 4), Err(Error::UnknownAction(4))));
    }

    #[test]
    fn complexity_examples() {
        let t = HstTree::complete_binary(3).unwrap();
        let c = t.complexity();
        assert_eq!(c.per_level.iter().map(|l| l.term).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
        assert_eq!(c.value, 1.0);
        assert_eq!(HstTree::star(6).unwrap().complexity().value, 3.0);
        for depth in 1..6 {
            let c = HstTree::chain(depth).unwrap().complexity();
            assert_eq!(c.value, 0.5);
            assert_eq!(c.per_level[0].term, level_scale(0, depth));
        }
    }

    #[test]
    fn deepen_and_collapse_examples() {
        let s = HstTree::star(2).unwrap().deepen();
        assert_eq!(s.depth(), 2);
        assert_eq!(s.distance(0, 1).unwrap(), 1.0);

        let b = HstTree::complete_binary(3).unwrap().deepen();
        assert_eq!(b.depth(), 4);
        assert_eq!(b.complexity().value, 1.0);

        let b4 = HstTree::complete_binary(2).unwrap();
        let c = b4.collapse().unwrap();
        assert_eq!(c.depth(), 1);
        assert_eq!(c.level_counts(), vec![4, 1]);
        assert_eq!(b4.distance(0, 1).unwrap(), 0.5);
        assert_eq!(c.distance(0, 1).unwrap(), 1.0);

        let ch = HstTree::chain(4).unwrap().collapse().unwrap();
        assert_eq!(ch.depth(), 3);
        assert_eq!(ch.num_actions(), 1);

        assert!(matches!(HstTree::star(3).unwrap().collapse(), Err(Error::TooShallow(1))));
    }

    #[test]
    fn deepen_then_collapse_restores_metric() {
        let mut r = rng::stream(5, "test");
        for _ in 0..20 {
            let t = HstTree::random(9, 3, &mut r).unwrap();
            let back = t.deepen().collapse().unwrap();
            assert_eq!(back.distance_matrix(), t.distance_matrix());
            assert_eq!(back.complexity(), t.complexity());
        }
    }

    #[test]
    fn rejects_malformed() {
        // level gap between child and parent
        assert!(HstTree::from_parts(2, vec![0, 2], vec![Some(1), None], vec![0]).is_err());
        // two roots
        assert!(HstTree::from_parts(1, vec![0, 1, 1], vec![Some(1), None, None], vec![0]).is_err());
        // leaf with no action
        assert!(HstTree::from_parts(1, vec![0, 0, 1], vec![Some(2), Some(2), None], vec![0]).is_err());
        // childless internal node
        assert!(HstTree::from_parts(2, vec![0, 1, 1, 2], vec![Some(1), Some(3), Some(3), None], vec![0])
            .is_err());
    }

    #[test]
    fn json_roundtrip() {
        let t = HstTree::random(7, 3, &mut rng::stream(1, "t")).unwrap();
        let back = HstTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let js = t.to_json().unwrap();
        assert!(js.contains("\"leafAction\""));
    }

    #[test]
    fn subtree_sets_are_contiguous_and_nested() {
        let t = HstTree::random(12, 4, &mut rng::stream(2, "t")).unwrap();
        for a in 0..12 {
            for h in 0..t.depth() {
                let lower = t.subtree_actions(a, h);
                let upper = t.subtree_actions(a, h + 1);
                assert!(lower.contains(&a));
                assert!(lower.iter().all(|x| upper.contains(x)));
            }
            assert_eq!(t.subtree_actions(a, t.depth()).len(), 12);
        }
    }
}
