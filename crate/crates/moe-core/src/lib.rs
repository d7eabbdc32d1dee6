//! Sigmoid-gated (and softmax-gated) mixture-of-experts regression:
//! model evaluation and gradients, synthetic ground truths and datasets,
//! least-squares SGD fitting, Voronoi parameter-space losses, numerical
//! identifiability diagnostics, and a convergence-rate experiment harness.

pub mod error;
pub mod harness;
pub mod ident;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;
pub mod voronoi;

pub use error::{MoeError, Result};
pub use harness::{
    aggregate, compare_gates, default_n_grid, fit_rate, rate_report, run_sweep, GateComparison,
    LossSpec, PerNStat, RateFitResult, RawRow, SweepConfig, SweepResult,
};
pub use ident::{
    build_derivative_class, independence_test, pde_residual_input_independent,
    pde_residual_polynomial, slow_sequence_activation, slow_sequence_linear, DerivKind,
    DerivativeClass, IdentMode, IndependenceReport, IndependenceVerdict,
};
pub use model::{
    gate_weights, loss_and_grad, regression_eval, sigmoid, Atom, ExpertActivation, GatingKind,
    MixingMeasure,
};
pub use rng::{child_seed, Rng64};
pub use synth::{generate_dataset, sample_ground_truth, Dataset, GroundTruthConfig, Regime};
pub use train::{fit, init_near_truth, FitResult, TrainConfig};
pub use voronoi::{assign_cells, l2_distance, loss_d1, loss_d2, loss_d3, LossBreakdown, VoronoiAssignment};
