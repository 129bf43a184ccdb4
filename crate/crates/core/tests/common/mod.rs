//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use cournot_core::best_response::stage_convexity;
use cournot_core::measures::TreeNode;
use cournot_core::{Atom, DiscreteMeasure, QuadraticMeanFieldCost, ScenarioTree};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Tree with horizon `n`, every node branching into 1..=`max_branching`
/// children with values in `[-1, 1]`.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize, max_branching: usize) -> ScenarioTree {
    fn split(rng: &mut ChaCha8Rng, max_branching: usize) -> Vec<(f64, f64)> {
        let count = rng.gen_range(1..=max_branching);
        let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| (rng.gen_range(-1.0..1.0), w / total)).collect()
    }

    let mut nodes = Vec::new();
    let mut frontier = Vec::new();
    for (x, p) in split(rng, max_branching) {
        frontier.push(nodes.len());
        nodes.push(TreeNode { id: nodes.len(), parent: None, depth: 1, x, p });
    }
    for depth in 2..=n {
        let mut next = Vec::new();
        for &parent in &frontier {
            for (x, p) in split(rng, max_branching) {
                next.push(nodes.len());
                nodes.push(TreeNode { id: nodes.len(), parent: Some(parent), depth, x, p });
            }
        }
        frontier = next;
    }
    ScenarioTree::new(n, nodes).expect("generated tree is valid")
}

/// Quadratic cost with a well-conditioned Hessian whose stage problems stay
/// strictly convex. Resamples until the stage bounds allow it.
pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize) -> QuadraticMeanFieldCost {
    loop {
        let shift = rng.gen_range(0.2..2.0);
        let spread = 0.1 / n as f64;
        let mut q = DMatrix::identity(n, n) * shift;
        for i in 0..n {
            for j in 0..=i {
                let e = rng.gen_range(-spread..spread);
                q[(i, j)] += e;
                if i != j {
                    q[(j, i)] += e;
                }
            }
        }
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        let c0 = rng.gen_range(-1.0..1.0);
        let cost = QuadraticMeanFieldCost::new(q, b, m, c0).expect("symmetric by construction");
        if stage_convexity(&cost, n).is_ok() {
            return cost;
        }
    }
}

pub fn random_measure(rng: &mut ChaCha8Rng, dim: usize, atoms: usize, spread: f64) -> DiscreteMeasure {
    let raw: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let atoms = raw
        .into_iter()
        .map(|w| Atom { point: (0..dim).map(|_| rng.gen_range(-spread..spread)).collect(), weight: w / total })
        .collect();
    DiscreteMeasure::new(dim, atoms).expect("normalized")
}

/// Relative gap with a unit floor on the scale.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
