//! Causal best response to a fixed action law by backward recursion.
//!
//! For a node at depth `t` with realized prefix `y_{1:t-1}` the stage problem is
//!
//! ```text
//! min_ybar 1/2 |x_t - ybar|^2 + V_t(x_{1:t}, y_{1:t-1}, ybar)
//! ```
//!
//! where `V_N = V[nu]` and `V_{t-1}` averages the children's optimal values.
//! The generic solver never materializes `V_t`: each evaluation of the stage
//! derivative solves every descendant stage and reads the gradient of `V`
//! off the leaves (envelope identity). Curvature is propagated alongside as a
//! Schur complement, which gives exact Newton steps.
//!
//! Cost is exponential in the horizon; [`SolverOptions`] carries a guard.
//! The quadratic family has a closed-form path in [`affine`].

pub mod affine;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contraction::stage_bounds;
use crate::costs::{total_cost_with_stats, MeanFieldCost};
use crate::error::{Error, Result};
use crate::measures::{pushforward, DiscreteMeasure, ScenarioTree};

pub use affine::{best_response_affine, AffinePolicy, AffineResponse, NodeRule};

/// One action per tree node. Since a node encodes exactly the type prefix
/// `x_{1:t}`, any such table is an adapted map.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedMap {
    actions: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NodeAction {
    id: usize,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct MapDocument {
    node_actions: Vec<NodeAction>,
}

impl Serialize for AdaptedMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MapDocument { node_actions: self.actions.iter().enumerate().map(|(id, &y)| NodeAction { id, y }).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AdaptedMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut doc = MapDocument::deserialize(d)?;
        doc.node_actions.sort_by_key(|a| a.id);
        for (i, a) in doc.node_actions.iter().enumerate() {
            if a.id != i {
                return Err(serde::de::Error::custom(format!(
                    "node action ids must be dense; missing or repeated id near {}",
                    a.id
                )));
            }
        }
        Ok(AdaptedMap::new(doc.node_actions.into_iter().map(|a| a.y).collect()))
    }
}

impl AdaptedMap {
    pub fn new(actions: Vec<f64>) -> Self {
        AdaptedMap { actions }
    }

    /// `y = x` at every node.
    pub fn identity(tree: &ScenarioTree) -> Self {
        AdaptedMap::new(tree.nodes().iter().map(|n| n.x).collect())
    }

    pub fn action(&self, node: usize) -> f64 {
        self.actions[node]
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Actions `y_{1:t}` along the chain ending at `node`.
    pub fn path_actions(&self, tree: &ScenarioTree, node: usize) -> Vec<f64> {
        tree.ancestry(node).into_iter().map(|n| self.actions[n]).collect()
    }

    pub fn max_abs_diff(&self, other: &AdaptedMap) -> f64 {
        self.actions.iter().zip(&other.actions).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Budget and guards for the nested solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_horizon: usize,
    pub max_branching: usize,
    /// Stop once the stage derivative is this small.
    pub derivative_tol: f64,
    pub max_iter: usize,
    /// Half-width of the first bracket around `x_t`.
    pub initial_radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_horizon: 6, max_branching: 4, derivative_tol: 1e-12, max_iter: 100, initial_radius: 1.0 }
    }
}

/// Minimizer and minimum of one stage problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub y_star: f64,
    pub opt_value: f64,
    pub iterations: usize,
}

/// Stage objective with its first two derivatives at a trial action.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEval {
    pub value: f64,
    pub derivative: f64,
    pub curvature: f64,
}

/// `V_t` at a node for a full prefix `y_{1:t}`, with its gradient and Hessian
/// in `y_{1:t}`. `grad` keeps length `N`; entries past `t` are leaf averages
/// with no meaning for the caller.
struct Continuation {
    value: f64,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

struct Recursion<'a, C: MeanFieldCost> {
    cost: &'a C,
    stats: &'a C::Stats,
    tree: &'a ScenarioTree,
    opts: SolverOptions,
}

impl<C: MeanFieldCost> Recursion<'_, C> {
    fn continuation(&self, node: usize, prefix: &mut Vec<f64>) -> Result<Continuation> {
        let t = prefix.len();
        if self.tree.is_leaf(node) {
            return Ok(Continuation {
                value: self.cost.value(prefix, self.stats),
                grad: self.cost.gradient(prefix, self.stats),
                hess: self.cost.hessian(prefix, self.stats),
            });
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; self.tree.horizon()];
        let mut hess = DMatrix::zeros(t, t);
        for &child in self.tree.children(node) {
            let p = self.tree.node(child).p;
            let (sol, cont) = self.solve(child, prefix)?;
            value += p * sol.opt_value;
            for (g, c) in grad.iter_mut().zip(&cont.grad) {
                *g += p * c;
            }
            // Eliminating y_{t+1} = T(y_{1:t}) leaves the Schur complement.
            let pivot = 1.0 + cont.hess[(t, t)];
            let cross = cont.hess.view((0, t), (t, 1)).clone_owned();
            let schur = cont.hess.view((0, 0), (t, t)) - &cross * cross.transpose() / pivot;
            hess += schur * p;
        }
        Ok(Continuation { value, grad, hess })
    }

    fn evaluate(&self, node: usize, prefix: &mut Vec<f64>, y: f64) -> Result<(StageEval, Continuation)> {
        let x = self.tree.node(node).x;
        let t = prefix.len();
        prefix.push(y);
        let cont = self.continuation(node, prefix);
        prefix.pop();
        let cont = cont?;
        let eval = StageEval {
            value: 0.5 * (x - y) * (x - y) + cont.value,
            derivative: (y - x) + cont.grad[t],
            curvature: 1.0 + cont.hess[(t, t)],
        };
        Ok((eval, cont))
    }

    /// Safeguarded Newton on the stage derivative.
    fn solve(&self, node: usize, prefix: &mut Vec<f64>) -> Result<(StageSolution, Continuation)> {
        let x = self.tree.node(node).x;
        let tol = self.opts.derivative_tol;
        let (mut eval, mut cont) = self.evaluate(node, prefix, x)?;
        let mut y = x;
        let mut iterations = 0;
        if eval.derivative.abs() <= tol {
            return Ok((StageSolution { y_star: y, opt_value: eval.value, iterations }, cont));
        }

        let mut radius = self.opts.initial_radius;
        let (mut lo, mut hi);
        loop {
            lo = x - radius;
            hi = x + radius;
            let d_lo = self.evaluate(node, prefix, lo)?.0.derivative;
            let d_hi = self.evaluate(node, prefix, hi)?.0.derivative;
            if d_lo <= 0.0 && d_hi >= 0.0 {
                break;
            }
            radius *= 2.0;
            iterations += 1;
            if iterations > self.opts.max_iter || !radius.is_finite() {
                return Err(Error::Numerical { iterations, lo, hi });
            }
        }

        loop {
            if eval.derivative > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let newton = y - eval.derivative / eval.curvature;
            let next = if eval.curvature > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            iterations += 1;
            let (e, c) = self.evaluate(node, prefix, next)?;
            y = next;
            eval = e;
            cont = c;
            let floor = 4.0 * f64::EPSILON * y.abs().max(1.0);
            if eval.derivative.abs() <= tol || hi - lo <= floor {
                return Ok((StageSolution { y_star: y, opt_value: eval.value, iterations }, cont));
            }
            if iterations >= self.opts.max_iter {
                return Err(Error::Numerical { iterations, lo, hi });
            }
        }
    }
}

fn check_problem<C: MeanFieldCost>(tree: &ScenarioTree, cost: &C, opts: &SolverOptions) -> Result<()> {
    let n = tree.horizon();
    if cost.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cost.dim() });
    }
    if n > opts.max_horizon {
        return Err(Error::Domain(format!("horizon {n} exceeds the nested solver guard {}", opts.max_horizon)));
    }
    if tree.max_branching() > opts.max_branching {
        return Err(Error::Domain(format!(
            "branching {} exceeds the nested solver guard {}",
            tree.max_branching(),
            opts.max_branching
        )));
    }
    stage_convexity(cost, n)
}

/// Refuse costs whose certified stage bounds allow `1 + lambda_k <= 0`.
pub fn stage_convexity<C: MeanFieldCost>(cost: &C, n: usize) -> Result<()> {
    let (lambda, kappa) = cost.hessian_bounds();
    let (lambda_k, _) = stage_bounds(lambda, kappa, n)?;
    match lambda_k.iter().position(|&l| !(l > -1.0)) {
        Some(k) => Err(Error::Domain(format!(
            "stage {} bound lambda_k = {} <= -1; stage problems may be non-convex",
            k + 1,
            lambda_k[k]
        ))),
        None => Ok(()),
    }
}

/// Solve the stage problem at `node` given the actions already taken on the
/// path above it.
pub fn stage_minimize<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    stats: &C::Stats,
    node: usize,
    y_prefix: &[f64],
    opts: &SolverOptions,
) -> Result<StageSolution> {
    check_stage_call(tree, node, y_prefix)?;
    check_problem(tree, cost, opts)?;
    let rec = Recursion { cost, stats, tree, opts: *opts };
    Ok(rec.solve(node, &mut y_prefix.to_vec())?.0)
}

/// Stage objective and its derivatives at action `y`. The derivative is the
/// envelope-theorem expression the solver iterates on.
pub fn stage_objective<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    stats: &C::Stats,
    node: usize,
    y_prefix: &[f64],
    y: f64,
    opts: &SolverOptions,
) -> Result<StageEval> {
    check_stage_call(tree, node, y_prefix)?;
    let rec = Recursion { cost, stats, tree, opts: *opts };
    Ok(rec.evaluate(node, &mut y_prefix.to_vec(), y)?.0)
}

fn check_stage_call(tree: &ScenarioTree, node: usize, y_prefix: &[f64]) -> Result<()> {
    if node >= tree.len() {
        return Err(Error::Structure(format!("node {node} does not exist")));
    }
    let depth = tree.node(node).depth;
    if y_prefix.len() + 1 != depth {
        return Err(Error::DimensionMismatch { expected: depth - 1, got: y_prefix.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub map: AdaptedMap,
    /// Expected total cost of the response, from the backward recursion.
    pub value: f64,
    pub response_measure: DiscreteMeasure,
}

pub fn best_response<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    nu: &DiscreteMeasure,
    opts: &SolverOptions,
) -> Result<BestResponse> {
    if nu.dim() != tree.horizon() {
        return Err(Error::DimensionMismatch { expected: tree.horizon(), got: nu.dim() });
    }
    let stats = cost.measure_stats(nu);
    best_response_with_stats(tree, cost, &stats, opts)
}

/// Best response when the cost summary of `nu` is already at hand.
pub fn best_response_with_stats<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    stats: &C::Stats,
    opts: &SolverOptions,
) -> Result<BestResponse> {
    check_problem(tree, cost, opts)?;
    let rec = Recursion { cost, stats, tree, opts: *opts };
    let mut actions = vec![f64::NAN; tree.len()];
    let mut value = 0.0;
    let mut prefix = Vec::with_capacity(tree.horizon());
    for &root in tree.roots() {
        let (sol, _) = rec.solve(root, &mut prefix)?;
        value += tree.node(root).p * sol.opt_value;
        actions[root] = sol.y_star;
        prefix.push(sol.y_star);
        descend(&rec, root, &mut prefix, &mut actions)?;
        prefix.pop();
    }
    let map = AdaptedMap::new(actions);
    let response_measure = pushforward(tree, &map)?;
    Ok(BestResponse { map, value, response_measure })
}

/// Fill in actions below `node`, whose own action ends `prefix`.
fn descend<C: MeanFieldCost>(
    rec: &Recursion<'_, C>,
    node: usize,
    prefix: &mut Vec<f64>,
    actions: &mut [f64],
) -> Result<()> {
    for &child in rec.tree.children(node) {
        let (sol, _) = rec.solve(child, prefix)?;
        actions[child] = sol.y_star;
        prefix.push(sol.y_star);
        descend(rec, child, prefix, actions)?;
        prefix.pop();
    }
    Ok(())
}

/// Expected total cost of `map` against the summary `stats`, path by path.
pub fn expected_cost<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    stats: &C::Stats,
    map: &AdaptedMap,
) -> Result<f64> {
    tree.leaf_paths().into_iter().try_fold(0.0, |acc, leaf| {
        let y = map.path_actions(tree, leaf.leaf);
        Ok(acc + leaf.weight * total_cost_with_stats(cost, &leaf.path, &y, stats)?)
    })
}
