//! Deterministic fixtures for the benchmarks.

use cournot_core::measures::TreeNode;
use cournot_core::{price_impact_cost, Atom, DiscreteMeasure, PriceImpactParams, QuadraticMeanFieldCost, ScenarioTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full tree of the given horizon where every node splits into `branching`
/// equally likely children with values `0, 1, ..., branching - 1`.
pub fn uniform_tree(horizon: usize, branching: usize) -> ScenarioTree {
    let split: Vec<(f64, f64)> = (0..branching).map(|i| (i as f64, 1.0 / branching as f64)).collect();
    ScenarioTree::product(&vec![split; horizon]).expect("uniform tree is valid")
}

/// A random tree whose nodes branch into one to `max_branching` children.
pub fn random_tree(seed: u64, horizon: usize, max_branching: usize) -> ScenarioTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut parents: Vec<Option<usize>> = vec![None];
    for depth in 1..=horizon {
        let mut next = Vec::new();
        for parent in parents {
            let count = rng.gen_range(1..=max_branching);
            for _ in 0..count {
                let id = nodes.len();
                nodes.push(TreeNode { id, parent, depth, x: rng.gen_range(-1.0..1.0), p: 1.0 / count as f64 });
                next.push(Some(id));
            }
        }
        parents = next;
    }
    ScenarioTree::new(horizon, nodes).expect("generated tree is valid")
}

pub fn price_impact(horizon: usize) -> QuadraticMeanFieldCost {
    price_impact_cost(&PriceImpactParams { k: 10.0, a: 0.1, s0: 0.0, q0: 1.0, n: horizon }).expect("convex parameters")
}

pub fn random_measure(seed: u64, dim: usize, atoms: usize) -> DiscreteMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = (0..atoms)
        .map(|_| Atom { point: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(), weight: 1.0 / atoms as f64 })
        .collect();
    DiscreteMeasure::new(dim, atoms).expect("uniform weights")
}
