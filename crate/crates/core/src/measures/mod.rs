//! Type laws as scenario trees, action laws as weighted point clouds, and the
//! exact Wasserstein-1 distance between the latter.

pub mod discrete;
pub mod tree;
pub mod wasserstein;

pub use discrete::{pushforward, Atom, DiscreteMeasure};
pub use tree::{LeafPath, ScenarioTree, TreeNode};
pub use wasserstein::{
    l1_distance, wasserstein1, wasserstein1_with_cap, TransportPlan, TransportProblem, DEFAULT_SUPPORT_CAP,
};
