//! Scenario trees: finitely supported type laws on the N-step path space,
//! stored through their conditional kernels.
//!
//! Node ids are dense (`0..len`). The first layer (depth 1) carries the
//! marginal of the first type coordinate; every deeper node stores the
//! conditional probability of its value given the path to its parent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on every conditional probability sum.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    #[serde(default)]
    pub parent: Option<usize>,
    pub depth: usize,
    pub x: f64,
    pub p: f64,
}

/// One root-to-leaf chain with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath {
    pub leaf: usize,
    pub path: Vec<f64>,
    pub weight: f64,
}

/// Immutable scenario tree. Construct with [`ScenarioTree::new`] or one of the
/// helpers; all invariants are checked at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeDocument", into = "TreeDocument")]
pub struct ScenarioTree {
    horizon: usize,
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
    /// Product of conditional probabilities from the first layer to the node.
    path_weight: Vec<f64>,
    by_depth: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeDocument {
    horizon: usize,
    nodes: Vec<TreeNode>,
}

impl TryFrom<TreeDocument> for ScenarioTree {
    type Error = Error;

    fn try_from(doc: TreeDocument) -> Result<Self> {
        ScenarioTree::new(doc.horizon, doc.nodes)
    }
}

impl From<ScenarioTree> for TreeDocument {
    fn from(tree: ScenarioTree) -> Self {
        TreeDocument { horizon: tree.horizon, nodes: tree.nodes }
    }
}

impl ScenarioTree {
    pub fn new(horizon: usize, mut nodes: Vec<TreeNode>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Structure("horizon must be positive".into()));
        }
        if nodes.is_empty() {
            return Err(Error::Structure("tree has no nodes".into()));
        }
        nodes.sort_by_key(|n| n.id);
        for (expected, node) in nodes.iter().enumerate() {
            if node.id != expected {
                return Err(Error::Structure(format!(
                    "node ids must be dense 0..{}; node {} is duplicated or out of range",
                    nodes.len(),
                    node.id
                )));
            }
        }

        let len = nodes.len();
        let mut children = vec![Vec::new(); len];
        let mut roots = Vec::new();
        for node in &nodes {
            if node.depth == 0 || node.depth > horizon {
                return Err(Error::Structure(format!("node {}: depth {} outside 1..={horizon}", node.id, node.depth)));
            }
            if !node.x.is_finite() {
                return Err(Error::Structure(format!("node {}: non-finite value x", node.id)));
            }
            if !(node.p > 0.0 && node.p <= 1.0) {
                return Err(Error::Structure(format!(
                    "node {}: conditional probability {} outside (0, 1]",
                    node.id, node.p
                )));
            }
            match node.parent {
                None => {
                    if node.depth != 1 {
                        return Err(Error::Structure(format!(
                            "node {}: only depth-1 nodes may omit a parent",
                            node.id
                        )));
                    }
                    roots.push(node.id);
                }
                Some(parent) => {
                    let Some(parent_node) = nodes.get(parent) else {
                        return Err(Error::Structure(format!("node {}: parent {parent} does not exist", node.id)));
                    };
                    if parent_node.depth + 1 != node.depth {
                        return Err(Error::Structure(format!(
                            "node {}: depth {} does not follow parent {parent} at depth {}",
                            node.id, node.depth, parent_node.depth
                        )));
                    }
                    children[parent].push(node.id);
                }
            }
        }

        check_sum("first layer", roots.iter().map(|&r| nodes[r].p))?;
        for node in &nodes {
            let kids = &children[node.id];
            if node.depth < horizon {
                if kids.is_empty() {
                    return Err(Error::Structure(format!(
                        "node {}: internal node at depth {} has no children",
                        node.id, node.depth
                    )));
                }
                check_sum(&format!("children of node {}", node.id), kids.iter().map(|&c| nodes[c].p))?;
            }
        }

        let mut path_weight = vec![0.0; len];
        let mut by_depth = vec![Vec::new(); horizon];
        // Parents always sit one layer above, so a layer sweep visits them first.
        let mut frontier = roots.clone();
        for &r in &roots {
            path_weight[r] = nodes[r].p;
        }
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &id in &frontier {
                by_depth[nodes[id].depth - 1].push(id);
                for &c in &children[id] {
                    path_weight[c] = path_weight[id] * nodes[c].p;
                    next.push(c);
                }
            }
            frontier = next;
        }

        let tree = ScenarioTree { horizon, nodes, children, roots, path_weight, by_depth };
        let total: f64 = tree.leaves().map(|l| tree.path_weight[l]).sum();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::Structure(format!("leaf path weights sum to {total}, expected 1")));
        }
        Ok(tree)
    }

    /// Independent coordinates: `marginals[t]` lists `(value, probability)`
    /// pairs for step `t + 1`.
    pub fn product(marginals: &[Vec<(f64, f64)>]) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut layer: Vec<Option<usize>> = vec![None];
        for (t, marginal) in marginals.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.len() * marginal.len());
            for parent in &layer {
                for &(x, p) in marginal {
                    let id = nodes.len();
                    nodes.push(TreeNode { id, parent: *parent, depth: t + 1, x, p });
                    next.push(Some(id));
                }
            }
            layer = next;
        }
        ScenarioTree::new(marginals.len(), nodes)
    }

    /// A deterministic path: one node per step with probability one.
    pub fn chain(values: &[f64]) -> Result<Self> {
        let marginals: Vec<_> = values.iter().map(|&x| vec![(x, 1.0)]).collect();
        ScenarioTree::product(&marginals)
    }

    /// Two-step tree with independent fair coin flips on `{0, 1}`.
    pub fn bernoulli(horizon: usize) -> Result<Self> {
        let coin = vec![(0.0, 0.5), (1.0, 0.5)];
        ScenarioTree::product(&vec![coin; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    /// Depth-1 nodes; their probabilities form the first marginal.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn nodes_at_depth(&self, depth: usize) -> &[usize] {
        &self.by_depth[depth - 1]
    }

    pub fn path_weight(&self, id: usize) -> f64 {
        self.path_weight[id]
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].depth == self.horizon
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_depth[self.horizon - 1].iter().copied()
    }

    /// Node ids from depth 1 down to `id` inclusive.
    pub fn ancestry(&self, id: usize) -> Vec<usize> {
        let mut chain = Vec::with_capacity(self.nodes[id].depth);
        let mut cur = Some(id);
        while let Some(n) = cur {
            chain.push(n);
            cur = self.nodes[n].parent;
        }
        chain.reverse();
        chain
    }

    /// Type values `x_{1:t}` along the chain ending at `id`.
    pub fn path_values(&self, id: usize) -> Vec<f64> {
        self.ancestry(id).into_iter().map(|n| self.nodes[n].x).collect()
    }

    pub fn max_branching(&self) -> usize {
        self.children.iter().map(Vec::len).chain(std::iter::once(self.roots.len())).max().unwrap_or(0)
    }

    pub fn leaf_paths(&self) -> Vec<LeafPath> {
        self.leaves()
            .map(|leaf| LeafPath { leaf, path: self.path_values(leaf), weight: self.path_weight[leaf] })
            .collect()
    }

    /// The kernel `eta^{x_{1:t}}` below node `id` as `(value, probability)` pairs.
    pub fn conditional(&self, id: usize) -> Result<Vec<(f64, f64)>> {
        if id >= self.nodes.len() {
            return Err(Error::Structure(format!("node {id} does not exist")));
        }
        if self.is_leaf(id) {
            return Err(Error::Domain(format!("node {id} is a leaf and has no conditional kernel")));
        }
        Ok(self.children[id].iter().map(|&c| (self.nodes[c].x, self.nodes[c].p)).collect())
    }

    /// Mean of each type coordinate.
    pub fn marginal_means(&self) -> Vec<f64> {
        (1..=self.horizon)
            .map(|t| self.nodes_at_depth(t).iter().map(|&n| self.path_weight[n] * self.nodes[n].x).sum())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_str(text).map_err(|e| Error::Structure(format!("tree JSON: {e}")))?;
        ScenarioTree::try_from(doc)
    }
}

fn check_sum(what: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let total: f64 = probs.sum();
    if (total - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::Structure(format!("{what}: probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split_tree() -> ScenarioTree {
        let nodes = vec![
            TreeNode { id: 0, parent: None, depth: 1, x: 0.0, p: 0.3 },
            TreeNode { id: 1, parent: None, depth: 1, x: 1.0, p: 0.7 },
            TreeNode { id: 2, parent: Some(0), depth: 2, x: 2.0, p: 1.0 },
            TreeNode { id: 3, parent: Some(1), depth: 2, x: 3.0, p: 1.0 },
        ];
        ScenarioTree::new(2, nodes).unwrap()
    }

    #[test]
    fn chain_has_single_path() {
        let tree = ScenarioTree::chain(&[0.0, 1.0]).unwrap();
        let paths = tree.leaf_paths();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].path, vec![0.0, 1.0]);
        assert_eq!(paths[0].weight, 1.0);
    }

    #[test]
    fn bernoulli_paths_are_the_four_corners() {
        let tree = ScenarioTree::bernoulli(2).unwrap();
        let mut paths: Vec<_> = tree.leaf_paths().into_iter().map(|p| (p.path, p.weight)).collect();
        paths.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert_eq!(
            paths,
            vec![(vec![0.0, 0.0], 0.25), (vec![0.0, 1.0], 0.25), (vec![1.0, 0.0], 0.25), (vec![1.0, 1.0], 0.25)]
        );
    }

    #[test]
    fn split_weights_are_products() {
        let tree = split_tree();
        let weights: Vec<_> = tree.leaf_paths().iter().map(|p| p.weight).collect();
        assert_eq!(weights, vec![0.3, 0.7]);
    }

    #[test]
    fn conditional_kernels() {
        let tree = ScenarioTree::bernoulli(2).unwrap();
        assert_eq!(tree.conditional(tree.roots()[0]).unwrap(), vec![(0.0, 0.5), (1.0, 0.5)]);

        let chain = ScenarioTree::chain(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(chain.conditional(0).unwrap(), vec![(2.0, 1.0)]);
        assert_eq!(chain.conditional(1).unwrap(), vec![(3.0, 1.0)]);

        let nodes = vec![
            TreeNode { id: 0, parent: None, depth: 1, x: 0.0, p: 1.0 },
            TreeNode { id: 1, parent: Some(0), depth: 2, x: -1.0, p: 0.3 },
            TreeNode { id: 2, parent: Some(0), depth: 2, x: 1.0, p: 0.7 },
        ];
        let tree = ScenarioTree::new(2, nodes).unwrap();
        assert_eq!(tree.conditional(0).unwrap(), vec![(-1.0, 0.3), (1.0, 0.7)]);
    }

    #[test]
    fn conditional_of_leaf_is_domain_error() {
        let tree = split_tree();
        assert!(matches!(tree.conditional(2), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_probabilities_and_names_node() {
        let nodes = vec![
            TreeNode { id: 0, parent: None, depth: 1, x: 0.0, p: 1.0 },
            TreeNode { id: 1, parent: Some(0), depth: 2, x: 0.0, p: 0.4 },
            TreeNode { id: 2, parent: Some(0), depth: 2, x: 1.0, p: 0.4 },
        ];
        let err = ScenarioTree::new(2, nodes).unwrap_err();
        assert!(err.to_string().contains("node 0"), "{err}");
    }

    #[test]
    fn rejects_missing_children_and_bad_parents() {
        let nodes = vec![
            TreeNode { id: 0, parent: None, depth: 1, x: 0.0, p: 0.5 },
            TreeNode { id: 1, parent: None, depth: 1, x: 1.0, p: 0.5 },
            TreeNode { id: 2, parent: Some(0), depth: 2, x: 0.0, p: 1.0 },
        ];
        let err = ScenarioTree::new(2, nodes).unwrap_err();
        assert!(err.to_string().contains("node 1"), "{err}");

        let nodes = vec![
            TreeNode { id: 0, parent: None, depth: 1, x: 0.0, p: 1.0 },
            TreeNode { id: 1, parent: Some(7), depth: 2, x: 0.0, p: 1.0 },
        ];
        assert!(ScenarioTree::new(2, nodes).is_err());

        let nodes = vec![
            TreeNode { id: 0, parent: None, depth: 1, x: 0.0, p: 1.0 },
            TreeNode { id: 0, parent: Some(0), depth: 2, x: 0.0, p: 1.0 },
        ];
        assert!(ScenarioTree::new(2, nodes).is_err());
    }

    #[test]
    fn json_round_trip_uses_documented_fields() {
        let tree = split_tree();
        let text = tree.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["horizon"], 2);
        assert_eq!(value["nodes"][2]["parent"], 0);
        assert!(value["nodes"][0]["parent"].is_null());
        assert_eq!(ScenarioTree::from_json(&text).unwrap(), tree);
    }

    #[test]
    fn marginal_means_of_bernoulli() {
        let tree = ScenarioTree::bernoulli(3).unwrap();
        assert_eq!(tree.marginal_means(), vec![0.5, 0.5, 0.5]);
    }
}
