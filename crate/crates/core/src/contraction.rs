//! Stage curvature bounds, the Lipschitz cascade and the contraction factor
//! of the best-response map in W1.
//!
//! With `P_k = (2k+1)(2k+3)...(2N-1)` (empty product at `k = N`):
//!
//! ```text
//! lambda_k = (kappa + lambda - P_k (kappa - lambda)) / 2
//! kappa_k  = (kappa + lambda + P_k (kappa - lambda)) / 2
//! L_k      = (1 + kappa_{k+1}) / (1 + lambda_{k+1}) * L_{k+1},   L_N = L
//! rho      = L_1 / (1 + lambda_1) * sum_{j<N} r^j,  r = (kappa_1 - lambda_1) / (1 + lambda_1)
//! ```

use serde::{Deserialize, Serialize};

use crate::costs::MeanFieldCost;
use crate::error::{Error, Result};

/// Which difference multiplies the odd product in the stage bounds.
pub const STAGE_BOUND_FORM: &str = "P_k * (kappa - lambda)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    #[serde(rename = "N")]
    pub horizon: usize,
    pub lambda: f64,
    pub kappa: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    /// Indexed `k = 1..=N` at positions `0..N`.
    pub lambda_k: Vec<f64>,
    pub kappa_k: Vec<f64>,
    #[serde(rename = "L_k")]
    pub lipschitz_k: Vec<f64>,
    pub rho: f64,
    pub cond_odd_product_ok: bool,
    pub cond_contraction_ok: bool,
    pub convexity_ok: bool,
    pub stage_bound_form: String,
}

impl ContractionCertificate {
    pub fn passes(&self) -> bool {
        self.convexity_ok && self.cond_odd_product_ok && self.cond_contraction_ok
    }

    /// Human-readable table, one row per stage.
    pub fn table(&self) -> String {
        let mut out = format!(
            "N = {}  lambda = {}  kappa = {}  L = {}\n{:>4} {:>16} {:>16} {:>16}\n",
            self.horizon, self.lambda, self.kappa, self.lipschitz, "k", "lambda_k", "kappa_k", "L_k"
        );
        for k in 0..self.horizon {
            out.push_str(&format!(
                "{:>4} {:>16.10} {:>16.10} {:>16.10}\n",
                k + 1,
                self.lambda_k[k],
                self.kappa_k[k],
                self.lipschitz_k.get(k).copied().unwrap_or(f64::NAN)
            ));
        }
        out.push_str(&format!(
            "rho = {:.12}\nodd-product condition: {}\ncontraction condition: {}\nstage convexity: {}\n",
            self.rho,
            verdict(self.cond_odd_product_ok),
            verdict(self.cond_contraction_ok),
            verdict(self.convexity_ok)
        ));
        out
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

/// `P_k` for `k = 1..=N` (stored at `k - 1`).
fn odd_products(n: usize) -> Vec<f64> {
    let mut p = vec![1.0; n];
    for k in (1..n).rev() {
        p[k - 1] = p[k] * (2 * k + 1) as f64;
    }
    p
}

/// Curvature bounds of the backward value functions, `k = 1..=N`.
pub fn stage_bounds(lambda: f64, kappa: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(kappa >= lambda) {
        return Err(Error::Domain(format!("kappa = {kappa} < lambda = {lambda}")));
    }
    if n == 0 {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let spread = kappa - lambda;
    let (lo, hi) = odd_products(n)
        .into_iter()
        .map(|p| {
            if p == 1.0 {
                (lambda, kappa)
            } else {
                ((kappa + lambda - p * spread) / 2.0, (kappa + lambda + p * spread) / 2.0)
            }
        })
        .unzip();
    Ok((lo, hi))
}

/// Backward Lipschitz cascade; errors when a stage loses strict convexity.
pub fn stage_lipschitz(lipschitz: f64, lambda_k: &[f64], kappa_k: &[f64]) -> Result<Vec<f64>> {
    if let Some(k) = lambda_k.iter().position(|&l| !(l > -1.0)) {
        return Err(Error::Domain(format!(
            "stage {} has lambda_k = {} <= -1: stage problem is not strictly convex",
            k + 1,
            lambda_k[k]
        )));
    }
    let n = lambda_k.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return Ok(out);
    }
    out[n - 1] = lipschitz;
    for k in (0..n - 1).rev() {
        out[k] = (1.0 + kappa_k[k + 1]) / (1.0 + lambda_k[k + 1]) * out[k + 1];
    }
    Ok(out)
}

/// Certified Lipschitz constant of the best-response map, as a geometric sum.
pub fn contraction_factor(l1: f64, lambda1: f64, kappa1: f64, n: usize) -> Result<f64> {
    if !(lambda1 > -1.0) {
        return Err(Error::Domain(format!("lambda_1 = {lambda1} <= -1")));
    }
    let r = (kappa1 - lambda1) / (1.0 + lambda1);
    let mut sum = 0.0;
    let mut term = 1.0;
    for _ in 0..n {
        sum += term;
        term *= r;
    }
    Ok(l1 / (1.0 + lambda1) * sum)
}

/// Assemble every constant and verdict for a cost on horizon `n`.
///
/// A cost whose stages lose strict convexity still yields a certificate, with
/// `convexity_ok = false`, `L_k` and `rho` infinite.
pub fn certify<C: MeanFieldCost>(cost: &C, n: usize) -> Result<ContractionCertificate> {
    let (lambda, kappa) = cost.hessian_bounds();
    let lipschitz = cost.measure_lipschitz();
    let (lambda_k, kappa_k) = stage_bounds(lambda, kappa, n)?;
    let convexity_ok = lambda_k.iter().all(|&l| l > -1.0);
    let (lipschitz_k, rho) = if convexity_ok {
        let lk = stage_lipschitz(lipschitz, &lambda_k, &kappa_k)?;
        let rho = contraction_factor(lk[0], lambda_k[0], kappa_k[0], n)?;
        (lk, rho)
    } else {
        (vec![f64::INFINITY; n], f64::INFINITY)
    };
    let p1 = odd_products(n)[0];
    Ok(ContractionCertificate {
        horizon: n,
        lambda,
        kappa,
        lipschitz,
        lambda_k,
        kappa_k,
        lipschitz_k,
        rho,
        cond_odd_product_ok: kappa + lambda >= p1 * (kappa - lambda),
        cond_contraction_ok: rho < 1.0,
        convexity_ok,
        stage_bound_form: STAGE_BOUND_FORM.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{price_impact_cost, PriceImpactParams, QuadraticMeanFieldCost};

    #[test]
    fn equal_bounds_have_no_spread() {
        let (lo, hi) = stage_bounds(1.5, 1.5, 4).unwrap();
        assert!(lo.iter().chain(&hi).all(|&v| v == 1.5));
        let lk = stage_lipschitz(3.0, &lo, &hi).unwrap();
        assert!(lk.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn two_stage_values() {
        let (lo, hi) = stage_bounds(1.0, 1.2, 2).unwrap();
        assert!((lo[0] - 0.8).abs() < 1e-15 && (hi[0] - 1.4).abs() < 1e-15);
        assert_eq!((lo[1], hi[1]), (1.0, 1.2));

        let lk = stage_lipschitz(2.0, &lo, &hi).unwrap();
        assert!((lk[0] - 2.2).abs() < 1e-15);
        assert_eq!(lk[1], 2.0);

        let zero = stage_lipschitz(0.0, &lo, &hi).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);

        let rho = contraction_factor(2.2, 0.8, 1.4, 2).unwrap();
        assert!((rho - 2.2 / 1.8 * (4.0 / 3.0)).abs() < 1e-15);
        assert!((rho - 1.6296296296296295).abs() < 1e-12);
    }

    #[test]
    fn contraction_factor_degenerate_cases() {
        assert_eq!(contraction_factor(2.0, 1.0, 1.0, 5).unwrap(), 1.0);
        assert_eq!(contraction_factor(0.0, 0.3, 2.0, 3).unwrap(), 0.0);
        assert!(contraction_factor(1.0, -1.0, 0.0, 2).is_err());
    }

    #[test]
    fn rejects_inverted_bounds_and_lost_convexity() {
        assert!(matches!(stage_bounds(2.0, 1.0, 3), Err(Error::Domain(_))));
        assert!(matches!(stage_lipschitz(1.0, &[-1.5, 0.0], &[2.0, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn certify_examples() {
        let cost = price_impact_cost(&PriceImpactParams { k: 10.0, a: 0.1, s0: 0.0, q0: 1.0, n: 2 }).unwrap();
        let cert = certify(&cost, 2).unwrap();
        assert_eq!((cert.lambda, cert.kappa), (19.0, 19.0 + 0.4));
        assert!(cert.passes(), "{}", cert.table());
        assert!(cert.rho < 1.0);

        let zero = certify(&QuadraticMeanFieldCost::zero(3), 3).unwrap();
        assert_eq!(zero.rho, 0.0);
        assert!(zero.passes());

        let cost = price_impact_cost(&PriceImpactParams { k: 1.0, a: 5.0, s0: 0.0, q0: 1.0, n: 3 }).unwrap();
        let cert = certify(&cost, 3).unwrap();
        // 32 >= 15 * 30 is false.
        assert!(!cert.cond_odd_product_ok);
        assert!(!cert.passes());
        assert!(!cert.convexity_ok);
        assert!(cert.rho.is_infinite());
    }

    #[test]
    fn certificate_json_lists_vectors() {
        let cert = certify(&QuadraticMeanFieldCost::zero(2), 2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&cert).unwrap();
        assert_eq!(v["lambda_k"].as_array().unwrap().len(), 2);
        assert_eq!(v["L_k"].as_array().unwrap().len(), 2);
        assert_eq!(v["cond_contraction_ok"], true);
    }
}
