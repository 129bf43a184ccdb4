//! Closed-form best response for quadratic costs.
//!
//! With `V[nu](y) = 1/2 y'Qy + (b + M m)'y + c0`, every backward value
//! function `V_t` is quadratic in `y_{1:t}` with a Hessian shared by all
//! nodes at depth `t` and a linear term affine in `m`. Eliminating the stage
//! variable from the first-order condition yields per-node affine rules
//!
//! ```text
//! y_t = alpha * x_t + beta . y_{1:t-1} + gamma . m + delta
//! ```
//!
//! and, after a forward sweep, the affine action `m -> P m + c` of the
//! best-response map on marginal means.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::best_response::AdaptedMap;
use crate::costs::QuadraticMeanFieldCost;
use crate::error::{Error, Result};
use crate::measures::ScenarioTree;

/// Stage rule at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRule {
    pub alpha: f64,
    /// Loads on ancestor actions `y_1..y_{t-1}`.
    pub beta: Vec<f64>,
    /// Loads on the means vector `m[nu]`.
    pub gamma: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    horizon: usize,
    rules: Vec<NodeRule>,
}

impl AffinePolicy {
    pub fn rule(&self, node: usize) -> &NodeRule {
        &self.rules[node]
    }

    pub fn rules(&self) -> &[NodeRule] {
        &self.rules
    }

    /// The adapted map obtained at a concrete means vector.
    pub fn evaluate(&self, tree: &ScenarioTree, means: &[f64]) -> Result<AdaptedMap> {
        if means.len() != self.horizon {
            return Err(Error::DimensionMismatch { expected: self.horizon, got: means.len() });
        }
        let mut actions = vec![0.0; tree.len()];
        for depth in 1..=tree.horizon() {
            for &node in tree.nodes_at_depth(depth) {
                let rule = &self.rules[node];
                let ancestors = tree.ancestry(node);
                let mut y = rule.alpha * tree.node(node).x + rule.delta;
                y += rule.beta.iter().zip(&ancestors).map(|(b, &a)| b * actions[a]).sum::<f64>();
                y += rule.gamma.iter().zip(means).map(|(g, m)| g * m).sum::<f64>();
                actions[node] = y;
            }
        }
        Ok(AdaptedMap::new(actions))
    }

    /// Coefficient table, header `node_id,alpha,beta_1..beta_{N-1},gamma_1..gamma_N,delta`.
    /// Loads on ancestors a node does not have are written as zero.
    pub fn to_csv(&self) -> String {
        let n = self.horizon;
        let mut out = String::from("node_id,alpha");
        for k in 1..n {
            let _ = write!(out, ",beta_{k}");
        }
        for k in 1..=n {
            let _ = write!(out, ",gamma_{k}");
        }
        out.push_str(",delta\n");
        for (id, rule) in self.rules.iter().enumerate() {
            let _ = write!(out, "{id},{}", rule.alpha);
            for k in 0..n.saturating_sub(1) {
                let _ = write!(out, ",{}", rule.beta.get(k).copied().unwrap_or(0.0));
            }
            for g in &rule.gamma {
                let _ = write!(out, ",{g}");
            }
            let _ = writeln!(out, ",{}", rule.delta);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineResponse {
    pub policy: AffinePolicy,
    /// `m[Psi(nu)] = psi_matrix * m[nu] + psi_offset`.
    pub psi_matrix: DMatrix<f64>,
    pub psi_offset: DVector<f64>,
    /// The policy evaluated at the requested means.
    pub map: AdaptedMap,
}

/// Linear term of `V_t` at one node: `l0 + lm * m`, length `t`.
struct LinearTerm {
    l0: DVector<f64>,
    lm: DMatrix<f64>,
}

/// `-v / pivot`, with zero loads kept as `+0` so tables print cleanly.
fn neg_ratio(v: f64, pivot: f64) -> f64 {
    -v / pivot + 0.0
}

pub fn best_response_affine(
    tree: &ScenarioTree,
    cost: &QuadraticMeanFieldCost,
    means: &[f64],
) -> Result<AffineResponse> {
    let n = tree.horizon();
    if cost.q().nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cost.q().nrows() });
    }
    if means.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: means.len() });
    }

    let mut rules: Vec<Option<NodeRule>> = vec![None; tree.len()];
    let mut terms: Vec<Option<LinearTerm>> = (0..tree.len()).map(|_| None).collect();
    for leaf in tree.leaves() {
        terms[leaf] = Some(LinearTerm { l0: cost.b().clone(), lm: cost.coupling().clone() });
    }

    let mut hess = cost.q().clone();
    for depth in (1..=n).rev() {
        let s = depth - 1;
        let pivot = 1.0 + hess[(s, s)];
        if !(pivot > 0.0) {
            return Err(Error::Domain(format!("stage {depth} pivot 1 + {} is not positive", hess[(s, s)])));
        }
        let cross = hess.view((0, s), (s, 1)).clone_owned();

        for &node in tree.nodes_at_depth(depth) {
            let term = terms[node].take().expect("children are processed before parents");
            rules[node] = Some(NodeRule {
                alpha: 1.0 / pivot,
                beta: cross.iter().map(|&h| neg_ratio(h, pivot)).collect(),
                gamma: term.lm.row(s).iter().map(|&v| neg_ratio(v, pivot)).collect(),
                delta: neg_ratio(term.l0[s], pivot),
            });

            if let Some(parent) = tree.node(node).parent {
                let p = tree.node(node).p;
                let x = tree.node(node).x;
                let shift = (term.l0[s] - x) / pivot;
                let l0 = (term.l0.rows(0, s) - &cross * shift) * p;
                let lm = (term.lm.rows(0, s) - &cross * term.lm.row(s) / pivot) * p;
                match &mut terms[parent] {
                    Some(acc) => {
                        acc.l0 += l0;
                        acc.lm += lm;
                    }
                    slot @ None => *slot = Some(LinearTerm { l0, lm }),
                }
            }
        }
        hess = hess.view((0, 0), (s, s)) - &cross * cross.transpose() / pivot;
    }

    let policy =
        AffinePolicy { horizon: n, rules: rules.into_iter().map(|r| r.expect("every node has a rule")).collect() };

    // Forward sweep: each action is u + G m.
    let mut offset = vec![0.0; tree.len()];
    let mut loads: Vec<DVector<f64>> = vec![DVector::zeros(n); tree.len()];
    let mut psi_matrix = DMatrix::zeros(n, n);
    let mut psi_offset = DVector::zeros(n);
    for depth in 1..=n {
        for &node in tree.nodes_at_depth(depth) {
            let rule = policy.rule(node);
            let mut u = rule.alpha * tree.node(node).x + rule.delta;
            let mut g = DVector::from_column_slice(&rule.gamma);
            for (b, a) in rule.beta.iter().zip(tree.ancestry(node)) {
                u += b * offset[a];
                g += &loads[a] * *b;
            }
            let w = tree.path_weight(node);
            psi_offset[depth - 1] += w * u;
            for k in 0..n {
                psi_matrix[(depth - 1, k)] += w * g[k];
            }
            offset[node] = u;
            loads[node] = g;
        }
    }

    let map = policy.evaluate(tree, means)?;
    Ok(AffineResponse { policy, psi_matrix, psi_offset, map })
}
