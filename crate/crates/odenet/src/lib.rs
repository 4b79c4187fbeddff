//! Depth-varying neural ODE classifiers, trained end to end.
//!
//! The model is the initial-value problem
//!
//! ```text
//! x'(t) = σ(W(t) x(t) + b(t)),   t ∈ (0, T),   x(0) = x⁰,
//! ```
//!
//! whose terminal state `x(T)` carries the class scores. Weights and
//! biases live on a uniform time grid; solved with explicit Euler the
//! model is an exact copy of a residual network with `1/h`-scaled
//! activations, and an adaptive Dormand–Prince solver is available for
//! comparison at inference time.
//!
//! Training minimizes a configurable cost (ℓ², cross-entropy, output
//! magnitude, weight decay) by nonlinear conjugate gradient descent. The
//! cost gradient comes from a backward adjoint sweep, the step length
//! from a linearized line search driven by the sensitivity equation, and
//! an optional Sobolev transform turns the `L²` gradient into its
//! `W^{1,2}` representer for smoother weight paths.
//!
//! The same sensitivity equation powers the analysis tools: propagation
//! of input noise through a trained model, the input-output Jacobian
//! `P` with `ξ(T) = P ξ⁰`, and least-norm adversarial perturbations
//! derived from rows of `P`.

pub mod activation;
pub mod adjoint;
pub mod cost;
pub mod error;
pub mod grid;
pub mod params;
pub mod rk45;
pub mod sensitivity;
pub mod sobolev;
pub mod solver;

pub use activation::{activation_eval, Activation};
pub use adjoint::{
    apply_step, assemble_gradient, assemble_gradient_batch, solve_adjoint, solve_adjoint_batch,
    terminal_condition, BatchLambda, GradientPath, LambdaPath,
};
pub use cost::{cost, cost_from_terminals, cross_entropy, softmax_padded, CostConfig};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use params::ParamPath;
pub use rk45::{solve_forward_rk45, solve_forward_rk45_with_stats, Rk45Stats};
pub use sensitivity::{
    batch_sensitivity_terminal, propagation_report, sensitivity_matrix, sensitivity_matrix_rows,
    solve_sensitivity, PropagationReport, SensitivityMatrix, SensitivityPath,
};
pub use sobolev::{sobolev_apply, sobolev_transform, ScalarTimeSeries, SobolevTransform};
pub use solver::{classify, solve_forward_batch, solve_forward_euler, BatchTrajectory, Trajectory};
