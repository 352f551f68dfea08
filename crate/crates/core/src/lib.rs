//! Bayesian sample allocation for estimating the reliability of parallel,
//! series, parallel-series and series-parallel systems under beta-binomial
//! component models.
//!
//! - [`model`]: conjugate priors, counts, system structure and reliability estimates.
//! - [`risk`]: posterior variances, allocation weights and asymptotic risk constants.
//! - [`allocation`]: the two-stage and hybrid two-stage designs.
//! - [`simulation`]: seeded, thread-count-independent Monte Carlo risk estimates.
//! - [`oracle`]: exact enumeration and brute-force references.

pub mod allocation;
pub mod error;
pub mod model;
pub mod oracle;
pub mod risk;
pub mod simulation;

pub use allocation::{hybrid_allocate, stage_one_size, two_stage_allocate, AllocationPlan, Scheme};
pub use error::{Error, Result};
pub use model::{
    beta_moment, estimate_reliability, posterior_params, BetaParams, ComponentCounts,
    ObservationLedger, SystemSpec, Topology,
};
pub use oracle::{
    beta_binomial_pmf, exact_scheme_risk, mc_constant_check, optimal_fixed_allocation,
    ConstantCheck, EnumerationBudget, ExactRisk,
};
pub use risk::{
    asymptotic_constant, asymptotic_constant_hybrid, asymptotic_constant_parallel, b_constant,
    posterior_variance, u_weight, w_weight, RiskWeights,
};
pub use simulation::{
    convergence_study, estimate_bayes_risk, fraction_study, run_replication, FractionReport,
    LossMode, RiskRow, SimulationConfig,
};
