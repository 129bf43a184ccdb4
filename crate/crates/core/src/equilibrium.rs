//! Equilibrium search: fixed-point iteration on the best-response map and
//! the exact linear solve for the quadratic family.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::best_response::{
    best_response_affine, best_response_with_stats, expected_cost, stage_objective, AdaptedMap, BestResponse,
    SolverOptions,
};
use crate::costs::{MeanFieldCost, QuadraticMeanFieldCost};
use crate::error::{Error, Result};
use crate::measures::{
    l1_distance, pushforward, wasserstein1_with_cap, DiscreteMeasure, ScenarioTree, DEFAULT_SUPPORT_CAP,
};

/// Residual under which a linear-system solution counts as a fixed point.
pub const LINEAR_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Iteration,
    LinearSystem,
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub gap: f64,
    pub means: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub nu_hat: DiscreteMeasure,
    /// Best response to `nu_hat`.
    pub map: AdaptedMap,
    pub iterations: usize,
    /// `W1(nu_{m+1}, nu_m)` for every step taken.
    pub gaps: Vec<f64>,
    pub converged: bool,
    pub method: Method,
    /// Expected cost of `map` against `nu_hat`.
    pub value: f64,
    pub trace: Vec<TraceRow>,
}

impl EquilibriumResult {
    pub fn means(&self) -> Vec<f64> {
        self.nu_hat.marginal_means()
    }

    /// `iter,gap,m_1..m_N,value`.
    pub fn trace_csv(&self) -> String {
        let n = self.nu_hat.dim();
        let mut out = String::from("iter,gap");
        for k in 1..=n {
            out.push_str(&format!(",m_{k}"));
        }
        out.push_str(",value\n");
        for row in &self.trace {
            out.push_str(&format!("{},{:e}", row.iter, row.gap));
            for m in &row.means {
                out.push_str(&format!(",{m}"));
            }
            out.push_str(&format!(",{}\n", row.value));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the previous means, in `[0, 1)`.
    pub damping: f64,
    /// Exact W1 is used while `|supp| * |supp'|` stays under this cap.
    pub support_cap: usize,
    pub solver: SolverOptions,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.0,
            support_cap: DEFAULT_SUPPORT_CAP,
            solver: SolverOptions::default(),
        }
    }
}

/// Exact W1 when affordable, otherwise the l1 distance of the means vectors
/// (a lower bound on W1 under the l1 ground metric).
pub fn gap_metric(a: &DiscreteMeasure, b: &DiscreteMeasure, cap: usize) -> Result<f64> {
    match wasserstein1_with_cap(a, b, cap) {
        Err(Error::Size { .. }) => Ok(l1_distance(&a.marginal_means(), &b.marginal_means())),
        other => other,
    }
}

/// Steps over which sustained growth counts as divergence.
const DIVERGENCE_WINDOW: usize = 5;
const DIVERGENCE_FACTOR: f64 = 10.0;

fn diverging(gaps: &[f64]) -> bool {
    let n = gaps.len();
    if n <= DIVERGENCE_WINDOW {
        return false;
    }
    let window = &gaps[n - DIVERGENCE_WINDOW - 1..];
    window.windows(2).all(|w| w[1] > w[0]) && window[DIVERGENCE_WINDOW] > DIVERGENCE_FACTOR * window[0]
}

/// Iterate `nu <- Psi(nu)` until `W1(Psi(nu), nu) <= tol`.
///
/// Returns the last iterate `nu_m` whose response is within `tol`, together
/// with the best response to it. Damping mixes the cost summaries
/// (marginal means for the quadratic family), not the measures.
pub fn solve_by_iteration<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    nu0: &DiscreteMeasure,
    opts: &IterationOptions,
) -> Result<EquilibriumResult> {
    if nu0.dim() != tree.horizon() {
        return Err(Error::DimensionMismatch { expected: tree.horizon(), got: nu0.dim() });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {} must be positive", opts.tol)));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::Domain(format!("damping {} outside [0, 1)", opts.damping)));
    }

    let mut current = nu0.clone();
    let mut stats = cost.measure_stats(&current);
    let mut gaps = Vec::new();
    let mut trace = Vec::new();
    let mut last: Option<BestResponse> = None;

    for m in 0..=opts.max_iter {
        let response = best_response_with_stats(tree, cost, &stats, &opts.solver)?;
        let gap = gap_metric(&response.response_measure, &current, opts.support_cap)?;
        gaps.push(gap);
        trace.push(TraceRow { iter: m, gap, means: current.marginal_means(), value: response.value });
        if gap <= opts.tol {
            return Ok(EquilibriumResult {
                nu_hat: current,
                value: response.value,
                map: response.map,
                iterations: m,
                gaps,
                converged: true,
                method: Method::Iteration,
                trace,
            });
        }
        if diverging(&gaps) {
            return Err(Error::Divergence { gaps });
        }
        if m == opts.max_iter {
            last = Some(response);
            break;
        }
        let fresh = cost.measure_stats(&response.response_measure);
        stats = if opts.damping > 0.0 {
            cost.blend_stats(&fresh, &stats, opts.damping)
                .ok_or_else(|| Error::Domain("damping needs a cost whose measure summary can be averaged".into()))?
        } else {
            fresh
        };
        current = response.response_measure;
    }

    let response = last.expect("loop exits through max_iter with a response");
    Ok(EquilibriumResult {
        nu_hat: current,
        value: response.value,
        map: response.map,
        iterations: opts.max_iter,
        gaps,
        converged: false,
        method: Method::Iteration,
        trace,
    })
}

/// Solve `m = P m + c` for the quadratic family and rebuild the equilibrium
/// from the affine policy at the solution.
pub fn solve_quadratic(tree: &ScenarioTree, cost: &QuadraticMeanFieldCost) -> Result<EquilibriumResult> {
    let n = tree.horizon();
    let zero = vec![0.0; n];
    let affine = best_response_affine(tree, cost, &zero)?;
    let system = DMatrix::identity(n, n) - &affine.psi_matrix;
    let lu = system.clone().lu();
    let m_star: DVector<f64> = lu
        .solve(&affine.psi_offset)
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Degenerate("I - psi_matrix is singular".into()))?;

    let map = affine.policy.evaluate(tree, m_star.as_slice())?;
    let nu_hat = pushforward(tree, &map)?;
    let means = nu_hat.marginal_means();
    // Re-apply the response at the realized means of nu_hat.
    let check = affine.policy.evaluate(tree, &means)?;
    let residual = gap_metric(&pushforward(tree, &check)?, &nu_hat, DEFAULT_SUPPORT_CAP)?;
    let value = expected_cost(tree, cost, &means, &map)?;
    Ok(EquilibriumResult {
        trace: vec![TraceRow { iter: 0, gap: residual, means, value }],
        nu_hat,
        map,
        iterations: 0,
        gaps: vec![residual],
        converged: residual <= LINEAR_RESIDUAL_TOL,
        method: Method::LinearSystem,
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `W1(Psi(nu_hat), nu_hat)`.
    pub w1_residual: f64,
    /// Stage derivative at the candidate's action, per node, against `nu_hat`.
    pub stationarity: Vec<f64>,
    pub max_stationarity: f64,
    /// Largest node-wise gap between the candidate map and a fresh best response.
    pub map_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Recompute the best response to the candidate measure from scratch and
/// report how far the candidate pair `(nu_hat, map)` is from a fixed point.
pub fn verify_equilibrium<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    nu_hat: &DiscreteMeasure,
    map: &AdaptedMap,
    tol: f64,
    opts: &SolverOptions,
) -> Result<VerificationReport> {
    if nu_hat.dim() != tree.horizon() {
        return Err(Error::DimensionMismatch { expected: tree.horizon(), got: nu_hat.dim() });
    }
    if map.len() != tree.len() {
        return Err(Error::Structure(format!(
            "candidate map has {} actions for a tree of {} nodes",
            map.len(),
            tree.len()
        )));
    }
    let stats = cost.measure_stats(nu_hat);
    let fresh = best_response_with_stats(tree, cost, &stats, opts)?;
    let w1_residual = gap_metric(&fresh.response_measure, nu_hat, DEFAULT_SUPPORT_CAP)?;
    let mut stationarity = vec![0.0; tree.len()];
    for (node, slot) in stationarity.iter_mut().enumerate() {
        let mut path = map.path_actions(tree, node);
        let y = path.pop().expect("paths are non-empty");
        *slot = stage_objective(tree, cost, &stats, node, &path, y, opts)?.derivative;
    }
    let max_stationarity = stationarity.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    Ok(VerificationReport {
        w1_residual,
        max_stationarity,
        stationarity,
        map_deviation: fresh.map.max_abs_diff(map),
        tol,
        passed: w1_residual <= tol && max_stationarity <= tol,
    })
}
