//! Set-function losses, the Lovász hinge and structured-output surrogates,
//! with a cutting-plane trainer for per-element linear models.
//!
//! Subsets of the base set `{0, .., p-1}` are bitmasks; displayed subsets are
//! one-based.

pub mod error;
pub mod experiments;
pub mod families;
pub mod lovasz;
pub mod model;
pub mod qp;
pub mod setfn;
pub mod surrogates;

pub use error::{Error, Result};
pub use experiments::{
    capture_gap_traces, gen_early_detection, read_dataset, run_cross_comparison, write_dataset, write_traces_csv,
    CrossTable, DataSource, ModelSelection, SyntheticSpec, TestLoss, TraceRow, TrainSpec,
};
pub use lovasz::{
    base_polyhedron_check, greedy_subgradient, hinge_case, lovasz_extension, lovasz_hinge, lovasz_hinge_subgradient,
    lovasz_hinge_with_case, margins, sort_decreasing, HingeCase, Permutation, Subgradient,
};
pub use model::{
    empirical_risk, surrogate_risk_and_cut, train_cutting_plane, train_subgradient, Bag, CuttingPlaneState, Gamma,
    LearningRate, LinearModel, Surrogate, TrainConfig,
};
pub use qp::{master_qp_solve, Constraint, QpSolution};
pub use setfn::{
    build_loss, is_increasing, is_modular, is_submodular, loss_value, misprediction_set, LabelVector, LossSpec,
    Modularity, Monotonicity, SetFunction, SubsetMask, Verdict,
};
pub use surrogates::{
    convexity_probe, dominance_check, is_extension, margin_extension_gamma, margin_rescale_value, max_margin_gamma,
    slack_rescale_value, surface_grid, surrogate_value, vertex_scores, write_surface_csv, Inference, SurrogateKind,
};
