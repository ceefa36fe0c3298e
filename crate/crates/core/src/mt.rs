//! Hierarchical hypothesis trees: Simes combination of child p-values,
//! the inheritance procedure (FWER) and a tree-structured selective FDR
//! procedure.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub label: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub p_value: Option<f64>,
    pub critical: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTree {
    nodes: Vec<TreeNode>,
}

/// Flat JSON row for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub path: String,
    pub p: Option<f64>,
    pub critical: Option<f64>,
    pub rejected: bool,
}

/// Simes combination `min_i m p_(i) / i`.
pub fn simes(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::MalformedTree("Simes combination of an empty family".into()));
    }
    check_p(p)?;
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    Ok(s.iter().enumerate().map(|(i, v)| m * v / (i + 1) as f64).fold(1.0, f64::min))
}

fn check_p(p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid_arg(format!("p-value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Benjamini-Hochberg at level `q`: rejection flags and the threshold
/// `k q / m` in force (`q / m` when nothing is rejected).
pub fn benjamini_hochberg(p: &[f64], q: f64) -> (Vec<bool>, f64) {
    let m = p.len();
    if m == 0 {
        return (Vec::new(), 0.0);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let k = (1..=m).rev().find(|&k| p[order[k - 1]] <= k as f64 * q / m as f64).unwrap_or(0);
    let threshold = k.max(1) as f64 * q / m as f64;
    let mut flags = vec![false; m];
    for &i in &order[..k] {
        flags[i] = true;
    }
    (flags, threshold)
}

impl HypothesisTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_root(&mut self, label: impl Into<String>, p_value: Option<f64>) -> usize {
        self.push(label.into(), None, p_value)
    }

    pub fn add_child(&mut self, parent: usize, label: impl Into<String>, p_value: Option<f64>) -> Result<usize> {
        if parent >= self.nodes.len() {
            return Err(Error::MalformedTree(format!("parent {parent} does not exist")));
        }
        let id = self.push(label.into(), Some(parent), p_value);
        self.nodes[parent].children.push(id);
        Ok(id)
    }

    fn push(&mut self, label: String, parent: Option<usize>, p_value: Option<f64>) -> usize {
        self.nodes.push(TreeNode { label, parent, children: Vec::new(), p_value, critical: None, rejected: false });
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].parent.is_none()).collect()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Labels from the root down, joined by `/`.
    pub fn path(&self, id: usize) -> String {
        let mut parts = vec![self.nodes[id].label.as_str()];
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            parts.push(&self.nodes[p].label);
            cur = self.nodes[p].parent;
        }
        parts.reverse();
        parts.join("/")
    }

    pub fn find(&self, path: &str) -> Option<usize> {
        (0..self.nodes.len()).find(|&i| self.path(i) == path)
    }

    /// Node ids below `id` (inclusive) that are leaves.
    pub fn leaves_under(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.is_leaf(n) {
                out.push(n);
            } else {
                stack.extend(self.nodes[n].children.iter().rev());
            }
        }
        out
    }

    /// Checks that every leaf carries a valid p-value and that the tree is
    /// non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::MalformedTree("tree has no nodes".into()));
        }
        for id in self.leaves() {
            match self.nodes[id].p_value {
                None => return Err(Error::MalformedTree(format!("leaf {} has no p-value", self.path(id)))),
                Some(p) if !(0.0..=1.0).contains(&p) => {
                    return Err(Error::MalformedTree(format!("leaf {} has p-value {p}", self.path(id))))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Fills every internal p-value with the Simes combination of its
    /// children, bottom-up.
    pub fn combine_simes(&mut self) -> Result<()> {
        self.validate()?;
        // Children always have larger ids than their parents.
        for id in (0..self.nodes.len()).rev() {
            if !self.is_leaf(id) {
                let ps: Vec<f64> =
                    self.nodes[id].children.iter().map(|&c| self.nodes[c].p_value.expect("children filled")).collect();
                self.nodes[id].p_value = Some(simes(&ps)?);
            }
        }
        Ok(())
    }

    fn ready(&self) -> Result<HypothesisTree> {
        let mut t = self.clone();
        if t.nodes.iter().any(|n| n.p_value.is_none()) {
            t.combine_simes()?;
        } else {
            t.validate()?;
        }
        for n in &mut t.nodes {
            n.critical = None;
            n.rejected = false;
        }
        Ok(t)
    }

    pub fn records(&self) -> Vec<NodeRecord> {
        (0..self.nodes.len())
            .map(|i| NodeRecord {
                path: self.path(i),
                p: self.nodes[i].p_value,
                critical: self.nodes[i].critical,
                rejected: self.nodes[i].rejected,
            })
            .collect()
    }

    pub fn rejected_leaves(&self) -> Vec<usize> {
        self.leaves().into_iter().filter(|&i| self.nodes[i].rejected).collect()
    }
}

/// Initial allocation of the error budget over the leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Every leaf gets the same share.
    #[default]
    LeafCount,
    /// Every branching splits its share equally among its children.
    Equal,
}

/// Inheritance procedure at FWER level `alpha`.
///
/// A node is tested once its parent is rejected (roots always), at
/// `alpha` times the summed weight of the leaves below it. The weight of a
/// rejected leaf moves to the remaining leaves of the nearest ancestor that
/// still has some, proportionally to their weights. Testing repeats until
/// nothing changes. Each tested node reports the critical value at which it
/// was rejected, or the last one it was compared with.
pub fn inheritance_reject(tree: &HypothesisTree, alpha: f64, scheme: WeightScheme) -> Result<HypothesisTree> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid_arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut t = tree.ready()?;
    let n = t.nodes.len();
    let mut weight = vec![0.0; n];
    let leaves = t.leaves();
    match scheme {
        WeightScheme::LeafCount => {
            for &l in &leaves {
                weight[l] = 1.0 / leaves.len() as f64;
            }
        }
        WeightScheme::Equal => {
            let roots = t.roots();
            let mut share = vec![0.0; n];
            for &r in &roots {
                share[r] = 1.0 / roots.len() as f64;
            }
            for id in 0..n {
                let k = t.nodes[id].children.len();
                for &c in &t.nodes[id].children {
                    share[c] = share[id] / k as f64;
                }
                if k == 0 {
                    weight[id] = share[id];
                }
            }
        }
    }
    let subtree_leaves: Vec<Vec<usize>> = (0..n).map(|i| t.leaves_under(i)).collect();
    let mut leaf_rejected = vec![false; n];
    loop {
        let testable: Vec<usize> = (0..n)
            .filter(|&i| !t.nodes[i].rejected && t.nodes[i].parent.is_none_or(|p| t.nodes[p].rejected))
            .collect();
        let mut newly = Vec::new();
        for &i in &testable {
            let crit = alpha * subtree_leaves[i].iter().filter(|&&l| !leaf_rejected[l]).map(|&l| weight[l]).sum::<f64>();
            t.nodes[i].critical = Some(crit);
            if t.nodes[i].p_value.expect("filled") <= crit {
                newly.push(i);
            }
        }
        if newly.is_empty() {
            break;
        }
        for &i in &newly {
            t.nodes[i].rejected = true;
        }
        for &i in &newly {
            if !t.is_leaf(i) {
                continue;
            }
            leaf_rejected[i] = true;
            let w = std::mem::take(&mut weight[i]);
            let mut cur = t.nodes[i].parent;
            loop {
                let pool: Vec<usize> = match cur {
                    Some(a) => subtree_leaves[a].iter().copied().filter(|&l| !leaf_rejected[l]).collect(),
                    None => leaves.iter().copied().filter(|&l| !leaf_rejected[l]).collect(),
                };
                let total: f64 = pool.iter().map(|&l| weight[l]).sum();
                if !pool.is_empty() && total > 0.0 {
                    for &l in &pool {
                        weight[l] += w * weight[l] / total;
                    }
                    break;
                }
                match cur {
                    Some(a) => cur = t.nodes[a].parent,
                    None => break,
                }
            }
        }
    }
    Ok(t)
}

/// Tree-structured selective FDR at level `q`: BH over the roots at `q`;
/// the children of each rejected node form a family tested by BH at
/// `q_parent * R / m`, where `R` of the `m` hypotheses in the parent's
/// family were rejected.
pub fn tree_selective_fdr(tree: &HypothesisTree, q: f64) -> Result<HypothesisTree> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid_arg(format!("q must lie in (0, 1), got {q}")));
    }
    let mut t = tree.ready()?;
    let mut families: Vec<(Vec<usize>, f64)> = vec![(t.roots(), q)];
    while let Some((family, level)) = families.pop() {
        let p: Vec<f64> = family.iter().map(|&i| t.nodes[i].p_value.expect("filled")).collect();
        let (flags, threshold) = benjamini_hochberg(&p, level);
        let r = flags.iter().filter(|&&f| f).count();
        let child_level = level * r as f64 / family.len() as f64;
        for (&i, &f) in family.iter().zip(&flags) {
            t.nodes[i].critical = Some(threshold);
            t.nodes[i].rejected = f;
            if f && !t.is_leaf(i) {
                families.push((t.nodes[i].children.clone(), child_level));
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simes_examples() {
        assert!((simes(&[0.01, 1.0]).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(simes(&[0.3]).unwrap(), 0.3);
        assert!(simes(&[]).is_err());
        assert!(simes(&[1.5]).is_err());
    }

    #[test]
    fn bh_step_up() {
        let (f, thr) = benjamini_hochberg(&[0.01, 0.04, 0.03, 0.5], 0.05);
        assert_eq!(f, vec![true, false, false, false]);
        assert!((thr - 0.0125).abs() < 1e-15);
        let (f, _) = benjamini_hochberg(&[0.01, 0.02, 0.03], 0.05);
        assert_eq!(f, vec![true, true, true]);
    }

    #[test]
    fn single_node_is_plain_test() {
        let mut t = HypothesisTree::new();
        t.add_root("h", Some(0.04));
        let r = inheritance_reject(&t, 0.05, WeightScheme::LeafCount).unwrap();
        assert!(r.node(0).rejected);
        assert_eq!(r.node(0).critical, Some(0.05));
        let r = tree_selective_fdr(&t, 0.05).unwrap();
        assert!(r.node(0).rejected);
    }

    #[test]
    fn redistribution_within_family() {
        let mut t = HypothesisTree::new();
        let root = t.add_root("r", None);
        for (k, p) in [0.001, 0.02, 0.2].iter().enumerate() {
            t.add_child(root, format!("l{k}"), Some(*p)).unwrap();
        }
        let r = inheritance_reject(&t, 0.05, WeightScheme::LeafCount).unwrap();
        assert!(r.node(0).rejected);
        assert!(r.node(1).rejected);
        // After l0 falls, l1 and l2 share the full budget.
        assert!((r.node(2).critical.unwrap() - 0.025).abs() < 1e-15);
        assert!(r.node(2).rejected);
        assert!(!r.node(3).rejected);
        assert!((r.node(3).critical.unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn malformed_trees_error() {
        let mut t = HypothesisTree::new();
        let r = t.add_root("r", None);
        t.add_child(r, "a", None).unwrap();
        assert!(matches!(inheritance_reject(&t, 0.05, WeightScheme::Equal), Err(Error::MalformedTree(_))));
        assert!(HypothesisTree::new().validate().is_err());
        assert!(t.add_child(9, "x", Some(0.1)).is_err());
    }

    #[test]
    fn consonance_holds() {
        let mut t = HypothesisTree::new();
        let r = t.add_root("r", Some(0.9));
        t.add_child(r, "a", Some(0.0)).unwrap();
        for out in [
            inheritance_reject(&t, 0.05, WeightScheme::LeafCount).unwrap(),
            tree_selective_fdr(&t, 0.05).unwrap(),
        ] {
            assert!(!out.node(1).rejected);
            assert_eq!(out.node(1).critical, None);
        }
    }
}
