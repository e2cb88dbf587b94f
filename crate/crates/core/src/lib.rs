//! Robust estimation of Rasch (1PL) item difficulties.
//!
//! Difficulties are estimated by marginal maximum likelihood (EM) or by
//! minimizing empirical density-power or γ-divergences with MM updates.
//! Every numeric routine is generic over [`Real`] (`f32` or `f64`); the
//! `*F64` and `*F32` aliases fix the scalar.

pub mod asymptotics;
pub mod error;
pub mod influence;
pub mod linalg;
pub mod mm;
pub mod model;
pub mod objectives;
pub mod quadrature;
mod scalar;
pub mod simulation;

pub use asymptotics::{
    psi, psi_jacobian, sandwich_covariance, EstimatingFunction, SandwichCovariance,
};
pub use error::{IrtError, Result};
pub use influence::{
    enumerate_patterns, influence_function, influence_table, pattern_probabilities,
    InfluenceEvaluator, InfluenceReport, MethodInfluence, MAX_ENUMERATED_ITEMS,
};
pub use linalg::Matrix;
pub use mm::{
    fit, fit_dpd, fit_gamma, fit_mmle, inner_minimize, FitConfig, FitResult, InnerSolveConfig,
    InnerStep, Surrogate,
};
pub use model::{ItemBank, ResponseMatrix, ResponsePattern, DEFAULT_SCALE};
pub use objectives::{
    dpd_majorizer, dpd_objective, gamma_majorizer, gamma_objective, mmle_objective,
    model_power_integral, objective, posterior_weights, Hyperparameter, Majorizer, Method,
    ModelIntegrals, PatternSet, PosteriorWeights, SurrogateDerivatives,
};
pub use quadrature::QuadratureGrid;
pub use scalar::Real;
pub use simulation::{
    bias_rmse, generate, generate_with_rng, replication_rng, run_study, simulate_clean,
    true_difficulties, GuessType, Mechanism, MethodSummary, MetricsSummary, ReplicationRecord,
    Scenario, ScenarioSpec, SimulatedDataset, StudyReport,
};

pub type ItemBankF64 = ItemBank<f64>;
pub type QuadratureGridF64 = QuadratureGrid<f64>;
pub type FitConfigF64 = FitConfig<f64>;
pub type FitResultF64 = FitResult<f64>;
pub type SandwichCovarianceF64 = SandwichCovariance<f64>;
pub type InfluenceReportF64 = InfluenceReport<f64>;
pub type StudyReportF64 = StudyReport<f64>;
pub type MetricsSummaryF64 = MetricsSummary<f64>;

pub type ItemBankF32 = ItemBank<f32>;
pub type QuadratureGridF32 = QuadratureGrid<f32>;
pub type FitConfigF32 = FitConfig<f32>;
pub type FitResultF32 = FitResult<f32>;
pub type SandwichCovarianceF32 = SandwichCovariance<f32>;
pub type InfluenceReportF32 = InfluenceReport<f32>;
pub type StudyReportF32 = StudyReport<f32>;
pub type MetricsSummaryF32 = MetricsSummary<f32>;
