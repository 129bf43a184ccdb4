//! Discrete-time mean-field equilibria of Cournot-Nash type on scenario trees.
//!
//! A population of agents, each observing a type path `x_{1:N}` drawn from a
//! finite scenario tree, chooses an adapted action path `y_{1:N}` minimizing
//! `sum_t 1/2 (x_t - y_t)^2 + V[nu](y)`, where `nu` is the law of the actions.
//! An equilibrium is a fixed point of the best-response map `Psi` in the
//! Wasserstein-1 metric.
//!
//! - [`measures`]: scenario trees, discrete measures, exact W1.
//! - [`costs`]: the interaction cost trait and the quadratic/price-impact family.
//! - [`best_response`]: nested stage solver and the closed-form affine policy.
//! - [`contraction`]: curvature bounds and the certified contraction factor.
//! - [`equilibrium`]: fixed-point iteration, the direct linear solve, verification.
//! - [`verification`]: independent oracles and structural probes.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod best_response;
pub mod contraction;
pub mod costs;
pub mod equilibrium;
pub mod error;
pub mod measures;
pub mod verification;

pub use best_response::{
    best_response, best_response_affine, AdaptedMap, AffinePolicy, AffineResponse, BestResponse, NodeRule,
    SolverOptions,
};
pub use contraction::{certify, ContractionCertificate};
pub use costs::{
    price_impact_cost, scale_cost, CostSpec, MeanFieldCost, PriceImpactParams, QuadraticMeanFieldCost, Scaled,
};
pub use equilibrium::{
    solve_by_iteration, solve_quadratic, verify_equilibrium, EquilibriumResult, IterationOptions, Method,
    VerificationReport,
};
pub use error::{Error, ErrorKind, Result};
pub use measures::{pushforward, wasserstein1, Atom, DiscreteMeasure, ScenarioTree};
