//! Independent checks: a brute-force grid oracle for stage problems, a
//! sampling probe of Lasry-Lions monotonicity, and the four-segment loop test
//! showing the price-impact interaction has no potential.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{MeanFieldCost, PriceImpactParams};
use crate::error::{Error, Result};
use crate::measures::{Atom, DiscreteMeasure, ScenarioTree};

/// Uniform grid `lo + (hi - lo) * i / (steps - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Domain(format!("grid upper end {hi} must exceed lower end {lo}")));
        }
        if steps < 3 {
            return Err(Error::Domain(format!("grid needs at least 3 points, got {steps}")));
        }
        Ok(GridSpec { lo, hi, steps })
    }

    /// Grid with spacing at most `step` over `[lo, hi]`.
    pub fn with_step(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let steps = ((hi - lo) / step).ceil() as usize + 1;
        GridSpec::new(lo, hi, steps.max(3))
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.steps - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOracleResult {
    pub y_grid: f64,
    pub value: f64,
}

/// Default cap on the oracle's recursion depth.
pub const GRID_ORACLE_MAX_HORIZON: usize = 3;

struct GridOracle<'a, C: MeanFieldCost> {
    cost: &'a C,
    stats: &'a C::Stats,
    tree: &'a ScenarioTree,
    grid: GridSpec,
}

impl<C: MeanFieldCost> GridOracle<'_, C> {
    /// `V_t` at `node` for the full prefix `y_{1:t}`, every child stage solved
    /// on the grid.
    fn continuation(&self, node: usize, prefix: &mut Vec<f64>) -> f64 {
        if self.tree.is_leaf(node) {
            return self.cost.value(prefix, self.stats);
        }
        self.tree.children(node).iter().map(|&c| self.tree.node(c).p * self.minimize(c, prefix).value).sum()
    }

    fn objective(&self, node: usize, prefix: &mut Vec<f64>, y: f64) -> f64 {
        let x = self.tree.node(node).x;
        prefix.push(y);
        let v = self.continuation(node, prefix);
        prefix.pop();
        0.5 * (x - y) * (x - y) + v
    }

    /// First grid index `i` with `f(i) <= f(i + 1)`: the best grid point of a
    /// unimodal objective, ties going to the smaller point.
    fn minimize(&self, node: usize, prefix: &mut Vec<f64>) -> GridOracleResult {
        let last = self.grid.steps - 1;
        let (mut lo, mut hi) = (0usize, last);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let here = self.objective(node, prefix, self.grid.point(mid));
            let next = self.objective(node, prefix, self.grid.point(mid + 1));
            if next >= here {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let y = self.grid.point(lo);
        GridOracleResult { y_grid: y, value: self.objective(node, prefix, y) }
    }
}

/// Brute-force the stage problem at `node` on a grid, solving every
/// descendant stage on the same grid.
pub fn grid_oracle_stage<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    stats: &C::Stats,
    node: usize,
    y_prefix: &[f64],
    grid: GridSpec,
) -> Result<GridOracleResult> {
    grid_oracle_stage_capped(tree, cost, stats, node, y_prefix, grid, GRID_ORACLE_MAX_HORIZON)
}

pub fn grid_oracle_stage_capped<C: MeanFieldCost>(
    tree: &ScenarioTree,
    cost: &C,
    stats: &C::Stats,
    node: usize,
    y_prefix: &[f64],
    grid: GridSpec,
    max_horizon: usize,
) -> Result<GridOracleResult> {
    let grid = GridSpec::new(grid.lo, grid.hi, grid.steps)?;
    if tree.horizon() > max_horizon {
        return Err(Error::Domain(format!(
            "grid oracle limited to horizon {max_horizon}, tree has {}",
            tree.horizon()
        )));
    }
    if node >= tree.len() || tree.node(node).depth != y_prefix.len() + 1 {
        return Err(Error::Structure(format!("prefix of length {} does not fit node {node}", y_prefix.len())));
    }
    let oracle = GridOracle { cost, stats, tree, grid };
    Ok(oracle.minimize(node, &mut y_prefix.to_vec()))
}

/// `V[nu](y) = int exp(-|y - z|^2) nu(dz)`: a positive-definite kernel
/// interaction, hence Lasry-Lions monotone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernelCost {
    dim: usize,
}

impl GaussianKernelCost {
    pub fn new(dim: usize) -> Self {
        GaussianKernelCost { dim }
    }

    pub fn kernel(y: &[f64], z: &[f64]) -> f64 {
        (-y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
    }
}

impl MeanFieldCost for GaussianKernelCost {
    type Stats = DiscreteMeasure;

    fn dim(&self) -> usize {
        self.dim
    }

    fn measure_stats(&self, nu: &DiscreteMeasure) -> DiscreteMeasure {
        nu.clone()
    }

    fn value(&self, y: &[f64], nu: &DiscreteMeasure) -> f64 {
        nu.integrate(|z| Self::kernel(y, z))
    }

    fn gradient(&self, y: &[f64], nu: &DiscreteMeasure) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for atom in nu.atoms() {
            let k = atom.weight * Self::kernel(y, &atom.point);
            for (gi, (yi, zi)) in g.iter_mut().zip(y.iter().zip(&atom.point)) {
                *gi -= 2.0 * (yi - zi) * k;
            }
        }
        g
    }

    fn hessian(&self, y: &[f64], nu: &DiscreteMeasure) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for atom in nu.atoms() {
            let k = atom.weight * Self::kernel(y, &atom.point);
            let d: Vec<f64> = y.iter().zip(&atom.point).map(|(a, b)| a - b).collect();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let delta = if i == j { 2.0 } else { 0.0 };
                    h[(i, j)] += k * (4.0 * d[i] * d[j] - delta);
                }
            }
        }
        h
    }

    /// Along `y - z` the curvature is `e^{-s^2}(4s^2 - 2)`, maximal at
    /// `s^2 = 3/2`; across it, `-2 e^{-s^2}`.
    fn hessian_bounds(&self) -> (f64, f64) {
        (-2.0, 4.0 * (-1.5f64).exp())
    }

    /// Largest `|d^2 k / dy_i dz_k|`, attained at `y = z` on the diagonal.
    fn measure_lipschitz(&self) -> f64 {
        2.0
    }
}

/// `int (V[nu] - V[nu']) d(nu - nu')` for the Gaussian kernel interaction.
pub fn lasry_lions_integral(cost: &GaussianKernelCost, nu: &DiscreteMeasure, nu2: &DiscreteMeasure) -> f64 {
    let diff = |y: &[f64]| cost.value(y, nu) - cost.value(y, nu2);
    nu.integrate(diff) - nu2.integrate(diff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub min_integral: f64,
    pub all_positive: bool,
    pub seed: u64,
}

/// Integrals at or below this count as non-positive.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

fn random_measure(rng: &mut ChaCha8Rng, dim: usize) -> DiscreteMeasure {
    let count = rng.gen_range(1..=4);
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let atoms = raw
        .into_iter()
        .map(|w| Atom { point: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(), weight: w / total })
        .collect();
    DiscreteMeasure::new(dim, atoms).expect("normalized random measure")
}

/// Sample `trials` pairs of distinct random measures and record the smallest
/// Lasry-Lions integral. Trial `i` draws from stream `i` of the seeded
/// generator, so results do not depend on scheduling.
pub fn monotonicity_probe(seed: u64, trials: usize) -> MonotonicityReport {
    let integrals: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let dim = rng.gen_range(1..=3);
            let cost = GaussianKernelCost::new(dim);
            let nu = random_measure(&mut rng, dim);
            let nu2 = random_measure(&mut rng, dim);
            lasry_lions_integral(&cost, &nu, &nu2)
        })
        .collect();
    let min_integral = integrals.iter().copied().fold(f64::INFINITY, f64::min);
    MonotonicityReport { trials, min_integral, all_positive: trials > 0 && min_integral > POSITIVITY_FLOOR, seed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopProbeResult {
    /// Segments in order: `dT x d0 -> dT x d1`, `d0 x d1 -> dT x d1`,
    /// `d0 x d0 -> dT x d0`, `d0 x d0 -> d0 x d1`.
    pub segment_integrals: [f64; 4],
    /// `(s3 + s1) - (s4 + s2)`: the two routes from `d0 x d0` to `dT x d1`.
    pub loop_discrepancy: f64,
    #[serde(rename = "T_param")]
    pub t_param: f64,
    /// Largest gap between a closed-form segment and its midpoint-rule value.
    pub quadrature_error: f64,
}

/// Midpoint-rule points for the quadrature cross-check.
pub const LOOP_QUADRATURE_POINTS: usize = 1000;

fn loop_corners(t: f64) -> [([f64; 2], [f64; 2]); 4] {
    [([t, 0.0], [t, 1.0]), ([0.0, 1.0], [t, 1.0]), ([0.0, 0.0], [t, 0.0]), ([0.0, 0.0], [0.0, 1.0])]
}

/// `int_0^1 dt int V[nu_t](y) (delta_b - delta_a)(dy)` along
/// `nu_t = (1 - t) delta_a + t delta_b`, where `V` sees `nu` through its means.
fn segment_quadrature(v: impl Fn(&[f64], &[f64]) -> f64, a: &[f64; 2], b: &[f64; 2], points: usize) -> f64 {
    (0..points)
        .map(|i| {
            let t = (i as f64 + 0.5) / points as f64;
            let means = [(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]];
            v(&means, b) - v(&means, a)
        })
        .sum::<f64>()
        / points as f64
}

fn assemble(t_param: f64, closed: [f64; 4], quad: [f64; 4]) -> LoopProbeResult {
    let quadrature_error = closed.iter().zip(&quad).map(|(c, q)| (c - q).abs()).fold(0.0, f64::max);
    LoopProbeResult {
        segment_integrals: closed,
        loop_discrepancy: (closed[2] + closed[0]) - (closed[3] + closed[1]),
        t_param,
        quadrature_error,
    }
}

/// Loop test for the cross term `V[nu](y) = m_1[nu] y_2`.
///
/// Along a segment of Dirac masses the integrand is linear in `t`, so each
/// segment equals `(m_1[a] + m_1[b]) / 2 * (b_2 - a_2)`.
pub fn potential_loop_probe(t_param: f64) -> LoopProbeResult {
    let cross = |means: &[f64], y: &[f64]| means[0] * y[1];
    let corners = loop_corners(t_param);
    let closed = corners.map(|(a, b)| 0.5 * (a[0] + b[0]) * (b[1] - a[1]));
    let quad = corners.map(|(a, b)| segment_quadrature(cross, &a, &b, LOOP_QUADRATURE_POINTS));
    assemble(t_param, closed, quad)
}

/// Loop test for the separable remainder of the price-impact interaction,
/// `V[nu](y) - m_1[nu] y_2 = base(y) + m_1[nu] y_1 + m_2[nu] y_2`, which is
/// the derivative of `int base dnu + (m_1^2 + m_2^2) / 2`.
pub fn separable_loop_probe(t_param: f64, params: &PriceImpactParams) -> Result<LoopProbeResult> {
    params.validate()?;
    let PriceImpactParams { k, a, s0, q0, .. } = *params;
    let base = move |y: &[f64]| {
        let sum = y[0] + y[1];
        (k - 0.5) * (y[0] * y[0] + y[1] * y[1]) - s0 * sum + a * (q0 - sum).powi(2)
    };
    let separable = |means: &[f64], y: &[f64]| base(y) + means[0] * y[0] + means[1] * y[1];
    let corners = loop_corners(t_param);
    let closed =
        corners.map(|(a, b)| base(&b) - base(&a) + 0.5 * ((b[0] * b[0] - a[0] * a[0]) + (b[1] * b[1] - a[1] * a[1])));
    let quad = corners.map(|(a, b)| segment_quadrature(separable, &a, &b, LOOP_QUADRATURE_POINTS));
    Ok(assemble(t_param, closed, quad))
}
