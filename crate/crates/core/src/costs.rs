//! Mean-field interaction terms `V[nu](y)` and the total cost
//! `F(x, y, nu) = 1/2 |x - y|^2 + V[nu](y)`.
//!
//! Implementations expose exact first and second derivatives in `y`, plus the
//! three constants the contraction certificate is built from:
//! Hessian bounds `lambda <= kappa` and the measure-Lipschitz constant `L` of
//! `nu -> grad V[nu](y)` (sup-norm on the gradient, W1 with l1 ground metric
//! on measures).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

const SYMMETRY_TOL: f64 = 1e-12;

pub trait MeanFieldCost: Send + Sync {
    /// Summary of `nu` the cost actually depends on.
    type Stats: Clone + Send + Sync + std::fmt::Debug;

    fn dim(&self) -> usize;

    fn measure_stats(&self, nu: &DiscreteMeasure) -> Self::Stats;

    fn value(&self, y: &[f64], stats: &Self::Stats) -> f64;

    fn gradient(&self, y: &[f64], stats: &Self::Stats) -> Vec<f64>;

    fn hessian(&self, y: &[f64], stats: &Self::Stats) -> DMatrix<f64>;

    /// `(lambda, kappa)` with `lambda I <= hess V <= kappa I` everywhere.
    fn hessian_bounds(&self) -> (f64, f64);

    fn measure_lipschitz(&self) -> f64;

    /// Convex combination `(1 - theta) * fresh + theta * previous`, when the
    /// summary lives in a vector space. Used for damped iteration.
    fn blend_stats(&self, _fresh: &Self::Stats, _previous: &Self::Stats, _theta: f64) -> Option<Self::Stats> {
        None
    }
}

/// `1/2 |x - y|^2 + V[nu](y)`.
pub fn total_cost<C: MeanFieldCost>(cost: &C, x: &[f64], y: &[f64], nu: &DiscreteMeasure) -> Result<f64> {
    let stats = cost.measure_stats(nu);
    total_cost_with_stats(cost, x, y, &stats)
}

pub fn total_cost_with_stats<C: MeanFieldCost>(cost: &C, x: &[f64], y: &[f64], stats: &C::Stats) -> Result<f64> {
    let n = cost.dim();
    for len in [x.len(), y.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let transport: f64 = x.iter().zip(y).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    Ok(transport + cost.value(y, stats))
}

/// `V[nu](y) = 1/2 y'Qy + (b + M m[nu])'y + c0` where `m[nu]` is the vector of
/// marginal means.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMeanFieldCost {
    q: DMatrix<f64>,
    b: DVector<f64>,
    m: DMatrix<f64>,
    c0: f64,
    bounds: (f64, f64),
    lipschitz: f64,
}

impl QuadraticMeanFieldCost {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, m: DMatrix<f64>, c0: f64) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || q.ncols() != n {
            return Err(Error::Domain(format!("Q must be square and non-empty, got {}x{}", q.nrows(), q.ncols())));
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Domain(format!("M must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
        }
        if q.iter().chain(b.iter()).chain(m.iter()).any(|v| !v.is_finite()) || !c0.is_finite() {
            return Err(Error::Domain("quadratic cost has non-finite coefficients".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (q[(i, j)] - q[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Domain(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        let q = (&q + q.transpose()) * 0.5;
        let eig = SymmetricEigen::new(q.clone()).eigenvalues;
        let bounds = (eig.min(), eig.max());
        let lipschitz = row_sum_norm(&m);
        Ok(QuadraticMeanFieldCost { q, b, m, c0, bounds, lipschitz })
    }

    /// The `V` identically zero on `R^n`.
    pub fn zero(n: usize) -> Self {
        QuadraticMeanFieldCost {
            q: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            m: DMatrix::zeros(n, n),
            c0: 0.0,
            bounds: (0.0, 0.0),
            lipschitz: 0.0,
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Linear coefficient `b + M m` at the given means.
    pub fn linear_term(&self, means: &[f64]) -> DVector<f64> {
        &self.b + &self.m * DVector::from_column_slice(means)
    }

    /// `eps * V`, with every constant scaled exactly.
    pub fn scaled(&self, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(QuadraticMeanFieldCost {
            q: &self.q * eps,
            b: &self.b * eps,
            m: &self.m * eps,
            c0: self.c0 * eps,
            bounds: (self.bounds.0 * eps, self.bounds.1 * eps),
            lipschitz: self.lipschitz * eps,
        })
    }
}

/// `max_i sum_k |M_ik|`: moving unit W1 mass shifts `m_k` by at most one in total.
fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

impl MeanFieldCost for QuadraticMeanFieldCost {
    type Stats = Vec<f64>;

    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn measure_stats(&self, nu: &DiscreteMeasure) -> Vec<f64> {
        nu.marginal_means()
    }

    fn value(&self, y: &[f64], means: &Vec<f64>) -> f64 {
        let y = DVector::from_column_slice(y);
        0.5 * y.dot(&(&self.q * &y)) + self.linear_term(means).dot(&y) + self.c0
    }

    fn gradient(&self, y: &[f64], means: &Vec<f64>) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        (&self.q * &y + self.linear_term(means)).as_slice().to_vec()
    }

    fn hessian(&self, _y: &[f64], _means: &Vec<f64>) -> DMatrix<f64> {
        self.q.clone()
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        self.bounds
    }

    fn measure_lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn blend_stats(&self, fresh: &Vec<f64>, previous: &Vec<f64>, theta: f64) -> Option<Vec<f64>> {
        Some(fresh.iter().zip(previous).map(|(f, p)| (1.0 - theta) * f + theta * p).collect())
    }
}

/// Liquidation with transaction costs, terminal inventory penalty and
/// permanent price impact from the population's mean sales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceImpactParams {
    /// Transaction cost weight, at least 1/2.
    #[serde(rename = "K")]
    pub k: f64,
    /// Terminal inventory penalty.
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    #[serde(rename = "Q0")]
    pub q0: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl PriceImpactParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("price impact horizon N must be positive".into()));
        }
        if !(self.k >= 0.5) {
            return Err(Error::Domain(format!("K = {} < 1/2 makes the cost non-convex", self.k)));
        }
        if !(self.a >= 0.0) {
            return Err(Error::Domain(format!("inventory penalty A = {} must be non-negative", self.a)));
        }
        if !(self.q0 > 0.0) {
            return Err(Error::Domain(format!("initial shares Q0 = {} must be positive", self.q0)));
        }
        if !self.s0.is_finite() || !self.k.is_finite() || !self.a.is_finite() || !self.q0.is_finite() {
            return Err(Error::Domain("price impact parameters must be finite".into()));
        }
        Ok(())
    }
}

/// `V[nu](y) = (K - 1/2) sum y_i^2 - S0 sum y_i + A (Q0 - sum y_i)^2 + sum_i y_i sum_{k<=i} m_k[nu]`.
pub fn price_impact_cost(params: &PriceImpactParams) -> Result<QuadraticMeanFieldCost> {
    params.validate()?;
    let n = params.n;
    let PriceImpactParams { k, a, s0, q0, .. } = *params;
    let q = DMatrix::from_element(n, n, 2.0 * a) + DMatrix::identity(n, n) * (2.0 * k - 1.0);
    let b = DVector::from_element(n, -(s0 + 2.0 * a * q0));
    let m = DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 });
    let lambda = 2.0 * k - 1.0;
    Ok(QuadraticMeanFieldCost {
        q,
        b,
        m,
        c0: a * q0 * q0,
        bounds: (lambda, lambda + 2.0 * a * n as f64),
        lipschitz: n as f64,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("scaling eps = {eps} outside [0, 1]")));
    }
    Ok(())
}

/// `eps * V` for any cost.
#[derive(Debug, Clone)]
pub struct Scaled<C> {
    inner: C,
    eps: f64,
}

pub fn scale_cost<C: MeanFieldCost>(cost: C, eps: f64) -> Result<Scaled<C>> {
    check_eps(eps)?;
    Ok(Scaled { inner: cost, eps })
}

impl<C> Scaled<C> {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: MeanFieldCost> MeanFieldCost for Scaled<C> {
    type Stats = C::Stats;

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn measure_stats(&self, nu: &DiscreteMeasure) -> C::Stats {
        self.inner.measure_stats(nu)
    }

    fn value(&self, y: &[f64], stats: &C::Stats) -> f64 {
        self.eps * self.inner.value(y, stats)
    }

    fn gradient(&self, y: &[f64], stats: &C::Stats) -> Vec<f64> {
        self.inner.gradient(y, stats).into_iter().map(|g| self.eps * g).collect()
    }

    fn hessian(&self, y: &[f64], stats: &C::Stats) -> DMatrix<f64> {
        self.inner.hessian(y, stats) * self.eps
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        let (l, k) = self.inner.hessian_bounds();
        (self.eps * l, self.eps * k)
    }

    fn measure_lipschitz(&self) -> f64 {
        self.eps * self.inner.measure_lipschitz()
    }

    fn blend_stats(&self, fresh: &C::Stats, previous: &C::Stats, theta: f64) -> Option<C::Stats> {
        self.inner.blend_stats(fresh, previous, theta)
    }
}

/// Cost specification document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    PriceImpact {
        #[serde(flatten)]
        params: PriceImpactParams,
        #[serde(default = "unit_eps")]
        eps: f64,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(rename = "M")]
        m: Vec<Vec<f64>>,
        #[serde(default)]
        c0: f64,
        #[serde(default = "unit_eps")]
        eps: f64,
    },
}

fn unit_eps() -> f64 {
    1.0
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Domain(format!("{name} must be a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl CostSpec {
    pub fn build(&self) -> Result<QuadraticMeanFieldCost> {
        match self {
            CostSpec::PriceImpact { params, eps } => price_impact_cost(params)?.scaled(*eps),
            CostSpec::Quadratic { q, b, m, c0, eps } => {
                let q = matrix_from_rows("Q", q)?;
                let m = matrix_from_rows("M", m)?;
                QuadraticMeanFieldCost::new(q, DVector::from_column_slice(b), m, *c0)?.scaled(*eps)
            }
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            CostSpec::PriceImpact { params, .. } => params.n,
            CostSpec::Quadratic { q, .. } => q.len(),
        }
    }
}
