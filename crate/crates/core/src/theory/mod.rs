//! Numerical certification of the Wasserstein/Lipschitz return bounds on
//! small embedded MDPs: exact W1, exact returns, and the bound checks.

mod bounds;
mod generator;
mod mdp;
mod returns;
mod wasserstein;

use thiserror::Error;

pub use bounds::{
    analyze, branched_bound_increment, branched_return_bound, corrected_model_return_bound, check_branched_return_bound, check_lemmas, check_model_return_bound,
    interior_minimizer, model_return_bound, Analysis, BoundReport, LemmaCheck, LemmaReport, K_SCAN, PASS_TOL,
};
pub use generator::{generate_instance, Instance, InstanceConfig};
pub use mdp::{
    epsilons, lipschitz_constant, lipschitz_constants, policy_map_constant, reward_constant, transition_map_constant,
    Kernel, LipschitzConstants, LipschitzMDP, MixturePolicy, PolicyTable, TransitionMixture,
};
pub use returns::{branched_return, exact_return, joint, propagate, state_distributions, switched_return, HORIZON_EPS};
pub use wasserstein::{
    euclidean, euclidean_cost, simplex_max, w1_on_points, wasserstein_discrete, wasserstein_dual,
    wasserstein_vertex_enumeration,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{which} is not a probability distribution: {detail}")]
    NotDistribution { which: &'static str, detail: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("points {0} and {1} coincide; Lipschitz ratio undefined")]
    DuplicatePoint(usize, usize),
    #[error("discount {0} outside [0, 1)")]
    Discount(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("invalid instance configuration: {0}")]
    Config(String),
}
