//! Linearized propagation of perturbations through a trained model.
//!
//! The sensitivity equation
//!
//! ```text
//! ξ'(t) = σ'(W(t) x(t) + b(t)) ⊙ (ω(t) x(t) + β(t) + W(t) ξ(t)),   ξ(0) = ξ⁰,
//! ```
//!
//! is integrated with the same explicit Euler scheme and grid as the
//! forward pass, so for smooth activations the homogeneous solution map
//! `ξ⁰ ↦ ξ(T)` is exactly the Jacobian of the discrete forward map. For
//! ReLU it is the one-sided Jacobian induced by `σ'(0) = 0`.

use std::io::Write;

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::Activation;
use crate::adjoint::GradientPath;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::params::ParamPath;
use crate::solver::{matvec_into, solve_forward_euler, BatchTrajectory, Trajectory};

/// Solution of the sensitivity problem at every grid node, one column per
/// propagated initial perturbation.
#[derive(Debug, Clone)]
pub struct SensitivityPath {
    grid: TimeGrid,
    /// Shape `(L + 1, N, M)`.
    values: Array3<f64>,
}

impl SensitivityPath {
    #[inline]
    pub fn at(&self, node: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), node)
    }

    pub fn terminal(&self) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), self.values.len_of(Axis(0)) - 1)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
}

/// The linear map `P` with `ξ(T) = P ξ⁰` for input perturbations; the
/// Jacobian of the network output with respect to its input.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    matrix: Array2<f64>,
}

impl SensitivityMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn apply(&self, xi0: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.matrix.nrows());
        matvec_into(self.matrix.view(), xi0.view(), &mut out);
        out
    }

    pub(crate) fn from_matrix(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }
}

/// Forward Euler sweep of the sensitivity problem along a stored
/// trajectory. `xi0` has shape `(N, M)`; each column is an independent
/// initial perturbation and all columns share the inhomogeneity
/// `ω(t) x(t) + β(t)` when a parameter perturbation is supplied.
///
/// Columns are stepped one at a time with plain in-order arithmetic, so a
/// matrix solve is bit-identical to the stacked single-column solves.
pub fn solve_sensitivity(
    params: &ParamPath,
    act: Activation,
    traj: &Trajectory,
    xi0: ArrayView2<'_, f64>,
    direction: Option<&GradientPath>,
) -> Result<SensitivityPath> {
    let n_dim = params.width();
    if xi0.nrows() != n_dim {
        return Err(Error::DimensionMismatch {
            context: "sensitivity initial condition",
            expected: n_dim,
            actual: xi0.nrows(),
        });
    }
    if let Some(dir) = direction {
        if dir.width() != n_dim {
            return Err(Error::DimensionMismatch {
                context: "sensitivity parameter perturbation",
                expected: n_dim,
                actual: dir.width(),
            });
        }
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let m = xi0.ncols();
    let mut values = Array3::zeros((steps + 1, n_dim, m));
    values.index_axis_mut(Axis(0), 0).assign(&xi0);
    let mut pre = Array1::zeros(n_dim);
    let mut deriv = Array1::zeros(n_dim);
    let mut inhomog = Array1::zeros(n_dim);
    let mut wxi = Array1::zeros(n_dim);
    for n in 0..steps {
        matvec_into(params.weight(n), traj.state(n), &mut pre);
        pre += &params.bias(n);
        for (d, &p) in deriv.iter_mut().zip(pre.iter()) {
            *d = act.derivative(p);
        }
        if let Some(dir) = direction {
            matvec_into(dir.d_weight(n), traj.state(n), &mut inhomog);
            inhomog += &dir.d_bias(n);
        }
        let (done, mut rest) = values.view_mut().split_at(Axis(0), n + 1);
        let cur = done.index_axis(Axis(0), n);
        let mut next = rest.index_axis_mut(Axis(0), 0);
        for col in 0..m {
            matvec_into(params.weight(n), cur.column(col), &mut wxi);
            for (i, nx) in next.column_mut(col).iter_mut().enumerate() {
                let rhs = if direction.is_some() {
                    inhomog[i] + wxi[i]
                } else {
                    wxi[i]
                };
                *nx = cur[[i, col]] + h * deriv[i] * rhs;
            }
        }
    }
    Ok(SensitivityPath { grid, values })
}

/// `P = ξ(T)` for `ξ(0)` equal to the identity, `ω = β = 0`.
pub fn sensitivity_matrix(
    params: &ParamPath,
    act: Activation,
    traj: &Trajectory,
) -> Result<SensitivityMatrix> {
    let n_dim = params.width();
    let path = solve_sensitivity(params, act, traj, Array2::eye(n_dim).view(), None)?;
    Ok(SensitivityMatrix {
        matrix: path.terminal().to_owned(),
    })
}

/// Selected rows of `P` without forming the full matrix.
///
/// Writing the Euler recursion as `ξ_{n+1} = (I + h D_n W_n) ξ_n`, the row
/// block `R = E P` accumulates right to left: `R ← R (I + h D_n W_n)` for
/// `n = L−1 .. 0` starting from the selector `E`. Attacks only consume the
/// class rows, which makes this `num_rows / N` times cheaper than the full
/// propagation.
pub fn sensitivity_matrix_rows(
    params: &ParamPath,
    act: Activation,
    traj: &Trajectory,
    rows: &[usize],
) -> Result<Array2<f64>> {
    let n_dim = params.width();
    if rows.iter().any(|&r| r >= n_dim) {
        return Err(Error::DimensionMismatch {
            context: "sensitivity row selector",
            expected: n_dim,
            actual: *rows.iter().max().unwrap_or(&0),
        });
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let mut block = Array2::zeros((rows.len(), n_dim));
    for (r, &row) in rows.iter().enumerate() {
        block[[r, row]] = 1.0;
    }
    let mut pre = Array1::zeros(n_dim);
    let mut scaled = Array2::zeros((rows.len(), n_dim));
    for n in (0..steps).rev() {
        matvec_into(params.weight(n), traj.state(n), &mut pre);
        pre += &params.bias(n);
        // scaled = block · diag(σ'(pre))
        for ((mut col, src), &p) in scaled
            .columns_mut()
            .into_iter()
            .zip(block.columns())
            .zip(pre.iter())
        {
            let d = act.derivative(p);
            for (s, &b) in col.iter_mut().zip(src.iter()) {
                *s = b * d;
            }
        }
        general_mat_mul(h, &scaled, &params.weight(n), 1.0, &mut block);
    }
    Ok(block)
}

/// Terminal sensitivity for a whole batch: per-sample trajectories, a
/// shared parameter perturbation and initial condition `xi0` of shape
/// `(N, K)` (zeros for the line-search use).
pub fn batch_sensitivity_terminal(
    params: &ParamPath,
    traj: &BatchTrajectory,
    xi0: ArrayView2<'_, f64>,
    direction: Option<&GradientPath>,
) -> Result<Array2<f64>> {
    let n_dim = params.width();
    let k = traj.num_samples();
    if xi0.nrows() != n_dim || xi0.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "batch sensitivity initial condition",
            expected: n_dim * k,
            actual: xi0.len(),
        });
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let mut xi = xi0.to_owned();
    let mut rhs = Array2::zeros((n_dim, k));
    for n in 0..steps {
        if let Some(dir) = direction {
            general_mat_mul(1.0, &dir.d_weight(n), &traj.states_at(n), 0.0, &mut rhs);
            for (mut row, &b) in rhs.rows_mut().into_iter().zip(dir.d_bias(n).iter()) {
                row += b;
            }
            general_mat_mul(1.0, &params.weight(n), &xi, 1.0, &mut rhs);
        } else {
            general_mat_mul(1.0, &params.weight(n), &xi, 0.0, &mut rhs);
        }
        let derivs = traj.derivs_at(n);
        ndarray::azip!((x in &mut xi, &r in &rhs, &d in &derivs) *x += h * d * r);
    }
    Ok(xi)
}

/// Measured versus estimated propagation of one Gaussian input
/// perturbation through the network.
#[derive(Debug, Clone)]
pub struct PropagationReport {
    pub times: Vec<f64>,
    /// `‖ξ(t_n)‖ / ‖x(t_n)‖` from the sensitivity solve.
    pub estimated_ratio: Vec<f64>,
    /// `‖δ(t_n)‖ / ‖x(t_n)‖` from two forward solves, `δ = x̃ − x`.
    pub measured_ratio: Vec<f64>,
    /// `‖ξ(t_n) − δ(t_n)‖ / ‖ξ(t_n)‖`.
    pub relative_error: Vec<f64>,
}

impl PropagationReport {
    /// CSV with columns `t, est_ratio, meas_ratio, rel_err`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,est_ratio,meas_ratio,rel_err")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.times[i], self.estimated_ratio[i], self.measured_ratio[i], self.relative_error[i]
            )?;
        }
        Ok(())
    }
}

/// Draw `ξ⁰ ~ N(0, noise_std² I)` with the given seed, then compare the
/// estimated perturbation path against the measured one. Ratios at nodes
/// where the guarded denominator vanishes are reported as NaN.
pub fn propagation_report(
    params: &ParamPath,
    act: Activation,
    x0: &Array1<f64>,
    noise_std: f64,
    seed: u64,
) -> Result<PropagationReport> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise std must be nonnegative, got {noise_std}"
        )));
    }
    let n_dim = params.width();
    let grid = params.grid();
    let mut xi0 = Array2::zeros((n_dim, 1));
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).expect("validated");
        for v in xi0.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    let clean = solve_forward_euler(params, act, x0)?;
    let xi = solve_sensitivity(params, act, &clean, xi0.view(), None)?;
    let noisy_input = x0 + &xi0.column(0);
    let noisy = solve_forward_euler(params, act, &noisy_input)?;

    let nodes = grid.num_nodes();
    let mut report = PropagationReport {
        times: Vec::with_capacity(nodes),
        estimated_ratio: Vec::with_capacity(nodes),
        measured_ratio: Vec::with_capacity(nodes),
        relative_error: Vec::with_capacity(nodes),
    };
    let norm = |it: ndarray::ArrayView1<'_, f64>| it.iter().map(|v| v * v).sum::<f64>().sqrt();
    for n in 0..nodes {
        let x_norm = norm(clean.state(n));
        let xi_n = xi.at(n);
        let xi_norm = norm(xi_n.column(0));
        let mut diff_sq = 0.0;
        let mut delta_sq = 0.0;
        for i in 0..n_dim {
            let delta = noisy.state(n)[i] - clean.state(n)[i];
            delta_sq += delta * delta;
            let d = xi_n[[i, 0]] - delta;
            diff_sq += d * d;
        }
        let delta_norm = delta_sq.sqrt();
        report.times.push(grid.node(n));
        report
            .estimated_ratio
            .push(if x_norm > 0.0 { xi_norm / x_norm } else { f64::NAN });
        report
            .measured_ratio
            .push(if x_norm > 0.0 { delta_norm / x_norm } else { f64::NAN });
        report
            .relative_error
            .push(if xi_norm > 0.0 { diff_sq.sqrt() / xi_norm } else { f64::NAN });
    }
    Ok(report)
}
