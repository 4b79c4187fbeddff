//! Adjoint problem and cost gradient.
//!
//! The multiplier path solves, backward in time,
//!
//! ```text
//! λ'(t) = −W(t)ᵀ (σ'(W(t) x(t) + b(t)) ⊙ λ(t)),
//! λ(T)  = μ1 (x(T) − y) + μ2 (softmax(x(T)) − y) + μ3 x(T),
//! ```
//!
//! discretized by explicit Euler on the same grid as the forward pass:
//! `λ_n = λ_{n+1} + h W_nᵀ (σ'(W_n x_n + b_n) ⊙ λ_{n+1})`. That recursion
//! is the exact transpose of the linearized forward step, so the assembled
//! gradient below differentiates the *discrete* cost exactly, which is
//! what the finite-difference harness checks.
//!
//! Gradients are stored as `L²(0, T)` densities on the grid: pairing a
//! gradient with a perturbation through the trapezoidal inner product
//! reproduces the directional derivative of the cost. Concretely, at node
//! `n < L` with trapezoid weight `c_n`,
//!
//! ```text
//! G_W[n] = μ4 W_n + (1/c_n) (1/K) Σ_k (σ'(W_n x_{k,n} + b_n) ⊙ λ_{k,n+1}) x_{k,n}ᵀ
//! G_b[n] = μ4 b_n + (1/c_n) (1/K) Σ_k (σ'(W_n x_{k,n} + b_n) ⊙ λ_{k,n+1})
//! ```
//!
//! and at node `L`, where the Euler step never reads the parameters, only
//! the weight-decay density `μ4 W_L`, `μ4 b_L` remains. Equivalently,
//! `h c_n G[n]` is the plain partial derivative of the cost with respect
//! to the node-`n` entries.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::activation::Activation;
use crate::cost::{softmax_padded, CostConfig};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::params::ParamPath;
use crate::solver::{matvec_into, BatchTrajectory, Trajectory};

/// Lagrange multiplier path of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPath {
    grid: TimeGrid,
    /// Shape `(L + 1, N)`.
    multipliers: Array2<f64>,
}

impl LambdaPath {
    #[inline]
    pub fn multiplier(&self, node: usize) -> ArrayView1<'_, f64> {
        self.multipliers.row(node)
    }

    pub fn terminal(&self) -> ArrayView1<'_, f64> {
        self.multipliers.row(self.multipliers.nrows() - 1)
    }

    pub fn initial(&self) -> ArrayView1<'_, f64> {
        self.multipliers.row(0)
    }
}

/// Multiplier paths of a batch, shape `(L + 1, N, K)`.
#[derive(Debug, Clone)]
pub struct BatchLambda {
    multipliers: Array3<f64>,
}

impl BatchLambda {
    #[inline]
    pub fn at(&self, node: usize) -> ArrayView2<'_, f64> {
        self.multipliers.index_axis(Axis(0), node)
    }
}

/// Terminal condition of the adjoint problem:
/// `μ1 (x_T − y) + μ2 (softmax(x_T) − y) + μ3 x_T` with the softmax padded
/// to zero outside the class block.
pub fn terminal_condition(
    x_t: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &CostConfig,
) -> Array1<f64> {
    let mut lambda = Array1::zeros(x_t.len());
    if cfg.mu1 > 0.0 {
        for (l, (&z, &t)) in lambda.iter_mut().zip(x_t.iter().zip(y.iter())) {
            *l += cfg.mu1 * (z - t);
        }
    }
    if cfg.mu2 > 0.0 {
        let s = softmax_padded(x_t, cfg.num_classes);
        for (l, (&sv, &t)) in lambda.iter_mut().zip(s.iter().zip(y.iter())) {
            *l += cfg.mu2 * (sv - t);
        }
    }
    if cfg.mu3 > 0.0 {
        for (l, &z) in lambda.iter_mut().zip(x_t.iter()) {
            *l += cfg.mu3 * z;
        }
    }
    lambda
}

/// Backward Euler sweep of the adjoint problem along a stored trajectory.
pub fn solve_adjoint(
    params: &ParamPath,
    act: Activation,
    traj: &Trajectory,
    lambda_t: &Array1<f64>,
) -> Result<LambdaPath> {
    let n_dim = params.width();
    if lambda_t.len() != n_dim {
        return Err(Error::DimensionMismatch {
            context: "adjoint terminal condition",
            expected: n_dim,
            actual: lambda_t.len(),
        });
    }
    if traj.states().nrows() != params.grid().num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "adjoint trajectory nodes",
            expected: params.grid().num_nodes(),
            actual: traj.states().nrows(),
        });
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let mut multipliers = Array2::zeros((steps + 1, n_dim));
    multipliers.row_mut(steps).assign(lambda_t);
    let mut pre = Array1::zeros(n_dim);
    let mut weighted = Array1::zeros(n_dim);
    let mut update = Array1::zeros(n_dim);
    for n in (0..steps).rev() {
        matvec_into(params.weight(n), traj.state(n), &mut pre);
        pre += &params.bias(n);
        {
            let next = multipliers.row(n + 1);
            for ((w, &p), &l) in weighted.iter_mut().zip(pre.iter()).zip(next.iter()) {
                *w = act.derivative(p) * l;
            }
        }
        matvec_into(params.weight(n).t(), weighted.view(), &mut update);
        let (mut head, tail) = multipliers.view_mut().split_at(Axis(0), n + 1);
        let next = tail.row(0);
        let mut cur = head.row_mut(n);
        for ((c, &nx), &u) in cur.iter_mut().zip(next.iter()).zip(update.iter()) {
            *c = nx + h * u;
        }
    }
    Ok(LambdaPath { grid, multipliers })
}

/// Batch adjoint sweep; `lambda_t` has shape `(N, K)` and the trajectory
/// must come from `solve_forward_batch` on the same parameters.
pub fn solve_adjoint_batch(
    params: &ParamPath,
    traj: &BatchTrajectory,
    lambda_t: ArrayView2<'_, f64>,
) -> Result<BatchLambda> {
    let n_dim = params.width();
    let k = traj.num_samples();
    if lambda_t.nrows() != n_dim || lambda_t.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "batch adjoint terminal condition",
            expected: n_dim * k,
            actual: lambda_t.len(),
        });
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let mut multipliers = Array3::zeros((steps + 1, n_dim, k));
    multipliers.index_axis_mut(Axis(0), steps).assign(&lambda_t);
    let mut weighted = Array2::zeros((n_dim, k));
    for n in (0..steps).rev() {
        let (mut head, tail) = multipliers.view_mut().split_at(Axis(0), n + 1);
        let next = tail.index_axis(Axis(0), 0);
        let derivs = traj.derivs_at(n);
        ndarray::azip!((w in &mut weighted, &d in &derivs, &l in &next) *w = d * l);
        let mut cur = head.index_axis_mut(Axis(0), n);
        cur.assign(&next);
        general_mat_mul(h, &params.weight(n).t(), &weighted, 1.0, &mut cur);
    }
    Ok(BatchLambda { multipliers })
}

/// Cost gradient with respect to the parameter path, stored as an
/// `L²` density on the grid (see the module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPath {
    grid: TimeGrid,
    width: usize,
    d_weights: Array3<f64>,
    d_biases: Array2<f64>,
}

impl GradientPath {
    pub fn zeros(grid: TimeGrid, width: usize) -> Self {
        let nodes = grid.num_nodes();
        Self {
            grid,
            width,
            d_weights: Array3::zeros((nodes, width, width)),
            d_biases: Array2::zeros((nodes, width)),
        }
    }

    #[inline]
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn d_weight(&self, node: usize) -> ArrayView2<'_, f64> {
        self.d_weights.index_axis(Axis(0), node)
    }

    #[inline]
    pub fn d_bias(&self, node: usize) -> ArrayView1<'_, f64> {
        self.d_biases.row(node)
    }

    pub fn d_weights(&self) -> &Array3<f64> {
        &self.d_weights
    }

    pub fn d_biases(&self) -> &Array2<f64> {
        &self.d_biases
    }

    pub fn d_weights_mut(&mut self) -> &mut Array3<f64> {
        &mut self.d_weights
    }

    pub fn d_biases_mut(&mut self) -> &mut Array2<f64> {
        &mut self.d_biases
    }

    /// Squared trapezoidal `L²` norm, weight part plus bias part.
    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.grid.step();
        let mut sum = 0.0;
        for n in 0..self.grid.num_nodes() {
            let c = self.grid.trapezoid_weight(n);
            sum += c * self.d_weight(n).iter().map(|v| v * v).sum::<f64>();
            sum += c * self.d_bias(n).iter().map(|v| v * v).sum::<f64>();
        }
        h * sum
    }

    /// Trapezoidal `L²` inner product with another gradient-shaped path.
    pub fn l2_dot(&self, other: &GradientPath) -> f64 {
        let h = self.grid.step();
        let mut sum = 0.0;
        for n in 0..self.grid.num_nodes() {
            let c = self.grid.trapezoid_weight(n);
            sum += c
                * self
                    .d_weight(n)
                    .iter()
                    .zip(other.d_weight(n).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            sum += c
                * self
                    .d_bias(n)
                    .iter()
                    .zip(other.d_bias(n).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        h * sum
    }

    /// Trapezoidal inner product `⟨W, dW⟩ + ⟨b, db⟩` against a parameter path.
    pub fn l2_dot_params(&self, params: &ParamPath) -> f64 {
        let h = self.grid.step();
        let mut sum = 0.0;
        for n in 0..self.grid.num_nodes() {
            let c = self.grid.trapezoid_weight(n);
            sum += c
                * self
                    .d_weight(n)
                    .iter()
                    .zip(params.weight(n).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            sum += c
                * self
                    .d_bias(n)
                    .iter()
                    .zip(params.bias(n).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        h * sum
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_weights.mapv_inplace(|v| v * factor);
        self.d_biases.mapv_inplace(|v| v * factor);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &GradientPath) {
        self.d_weights.scaled_add(alpha, &other.d_weights);
        self.d_biases.scaled_add(alpha, &other.d_biases);
    }

    /// `-self` as a fresh direction.
    pub fn negated(&self) -> GradientPath {
        let mut out = self.clone();
        out.scale(-1.0);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|v| v.is_finite()) && self.d_biases.iter().all(|v| v.is_finite())
    }
}

/// Apply `params += eta * direction` in place.
pub fn apply_step(params: &mut ParamPath, eta: f64, direction: &GradientPath) {
    params.weights_mut().scaled_add(eta, direction.d_weights());
    params.biases_mut().scaled_add(eta, direction.d_biases());
}

/// Assemble the cost gradient from per-sample trajectories and multiplier
/// paths, averaging over the batch in the given (fixed) sample order.
pub fn assemble_gradient(
    params: &ParamPath,
    act: Activation,
    trajs: &[Trajectory],
    lambdas: &[LambdaPath],
    cfg: &CostConfig,
) -> Result<GradientPath> {
    if trajs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if trajs.len() != lambdas.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient batch",
            expected: trajs.len(),
            actual: lambdas.len(),
        });
    }
    let grid = params.grid();
    let n_dim = params.width();
    let steps = grid.num_steps();
    let inv_k = 1.0 / trajs.len() as f64;
    let mut grad = GradientPath::zeros(grid, n_dim);
    let mut pre = Array1::zeros(n_dim);
    for n in 0..steps {
        let scale = inv_k / grid.trapezoid_weight(n);
        for (traj, lambda) in trajs.iter().zip(lambdas.iter()) {
            matvec_into(params.weight(n), traj.state(n), &mut pre);
            pre += &params.bias(n);
            let lam = lambda.multiplier(n + 1);
            let x = traj.state(n);
            let mut gw = grad.d_weights.index_axis_mut(Axis(0), n);
            let mut gb = grad.d_biases.row_mut(n);
            for i in 0..n_dim {
                let coef = scale * act.derivative(pre[i]) * lam[i];
                if coef != 0.0 {
                    let mut row = gw.row_mut(i);
                    for (g, &xv) in row.iter_mut().zip(x.iter()) {
                        *g += coef * xv;
                    }
                }
                gb[i] += coef;
            }
        }
    }
    add_weight_decay(&mut grad, params, cfg);
    Ok(grad)
}

/// GEMM-based gradient assembly for a whole batch.
pub fn assemble_gradient_batch(
    params: &ParamPath,
    traj: &BatchTrajectory,
    lambda: &BatchLambda,
    cfg: &CostConfig,
) -> Result<GradientPath> {
    let grid = params.grid();
    let n_dim = params.width();
    let steps = grid.num_steps();
    let k = traj.num_samples();
    if k == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut grad = GradientPath::zeros(grid, n_dim);
    let mut weighted = Array2::zeros((n_dim, k));
    for n in 0..steps {
        let scale = 1.0 / (k as f64 * grid.trapezoid_weight(n));
        let derivs = traj.derivs_at(n);
        let lam = lambda.at(n + 1);
        ndarray::azip!((w in &mut weighted, &d in &derivs, &l in &lam) *w = d * l);
        let mut gw = grad.d_weights.index_axis_mut(Axis(0), n);
        general_mat_mul(scale, &weighted, &traj.states_at(n).t(), 0.0, &mut gw);
        let mut gb = grad.d_biases.row_mut(n);
        for (g, row) in gb.iter_mut().zip(weighted.rows()) {
            *g = scale * row.sum();
        }
    }
    add_weight_decay(&mut grad, params, cfg);
    Ok(grad)
}

fn add_weight_decay(grad: &mut GradientPath, params: &ParamPath, cfg: &CostConfig) {
    if cfg.mu4 != 0.0 {
        grad.d_weights.scaled_add(cfg.mu4, params.weights());
        grad.d_biases.scaled_add(cfg.mu4, params.biases());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::cost;
    use crate::solver::{solve_forward_batch, solve_forward_euler};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_grid(steps: usize) -> TimeGrid {
        TimeGrid::new(1.0, steps).unwrap()
    }

    #[test]
    fn terminal_condition_l2_perfect_fit_is_zero() {
        let cfg = CostConfig {
            mu1: 1.0,
            mu2: 0.0,
            mu3: 0.0,
            mu4: 0.0,
            num_classes: 2,
        };
        let x = array![0.3, 0.7, -0.2];
        let lam = terminal_condition(x.view(), x.view(), &cfg);
        assert!(lam.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_condition_mu3_scales_output() {
        let cfg = CostConfig {
            mu1: 0.0,
            mu2: 0.0,
            mu3: 0.4,
            mu4: 0.0,
            num_classes: 2,
        };
        let x = array![0.5, -1.0, 2.0];
        let y = array![1.0, 0.0, 0.0];
        let lam = terminal_condition(x.view(), y.view(), &cfg);
        for (l, &v) in lam.iter().zip(x.iter()) {
            assert!((l - 0.4 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn terminal_condition_uniform_softmax() {
        // Equal class logits: softmax is 1/10 in the class block, so the
        // μ2-only condition is 1/10 off-target, 1/10 − 1 at the target,
        // and 0 outside the block.
        let cfg = CostConfig {
            mu1: 0.0,
            mu2: 1.0,
            mu3: 0.0,
            mu4: 0.0,
            num_classes: 10,
        };
        let x = Array1::from_elem(12, 0.3);
        let mut y = Array1::zeros(12);
        y[4] = 1.0;
        let lam = terminal_condition(x.view(), y.view(), &cfg);
        for i in 0..10 {
            let expect = if i == 4 { 0.1 - 1.0 } else { 0.1 };
            assert!((lam[i] - expect).abs() < 1e-12);
        }
        assert_eq!(lam[10], 0.0);
        assert_eq!(lam[11], 0.0);
    }

    #[test]
    fn zero_weights_freeze_the_multiplier() {
        let params = ParamPath::zeros(tiny_grid(12), 3).unwrap();
        let x0 = array![0.1, 0.2, 0.3];
        let traj = solve_forward_euler(&params, Activation::Tanh, &x0).unwrap();
        let lam_t = array![1.0, -2.0, 0.5];
        let lam = solve_adjoint(&params, Activation::Tanh, &traj, &lam_t).unwrap();
        for n in 0..=12 {
            assert_eq!(lam.multiplier(n), lam_t.view());
        }
    }

    #[test]
    fn zero_terminal_condition_gives_zero_path() {
        let params = ParamPath::random_normal(tiny_grid(10), 4, 0.5, 2).unwrap();
        let x0 = array![0.4, -0.1, 0.2, 0.9];
        let traj = solve_forward_euler(&params, Activation::Tanh, &x0).unwrap();
        let lam = solve_adjoint(&params, Activation::Tanh, &traj, &Array1::zeros(4)).unwrap();
        assert!(lam.multipliers.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_weight_decay_gradient_is_mu4_times_params() {
        let params = ParamPath::random_normal(tiny_grid(7), 3, 0.8, 5).unwrap();
        let cfg = CostConfig {
            mu1: 1.0,
            mu2: 0.0,
            mu3: 0.0,
            mu4: 0.25,
            num_classes: 2,
        };
        let x0 = array![0.1, 0.4, -0.6];
        let traj = solve_forward_euler(&params, Activation::Tanh, &x0).unwrap();
        // λ ≡ 0 removes the data term entirely.
        let lam = solve_adjoint(&params, Activation::Tanh, &traj, &Array1::zeros(3)).unwrap();
        let grad = assemble_gradient(&params, Activation::Tanh, &[traj], &[lam], &cfg).unwrap();
        for n in 0..=7 {
            for (g, w) in grad.d_weight(n).iter().zip(params.weight(n).iter()) {
                assert!((g - 0.25 * w).abs() < 1e-15);
            }
            for (g, b) in grad.d_bias(n).iter().zip(params.bias(n).iter()) {
                assert!((g - 0.25 * b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_samples_average_to_single_sample_gradient() {
        let params = ParamPath::random_normal(tiny_grid(6), 3, 0.4, 8).unwrap();
        let cfg = CostConfig::l2_loss(2);
        let x0 = array![0.3, -0.2, 0.5];
        let y = array![1.0, 0.0, 0.0];
        let traj = solve_forward_euler(&params, Activation::Tanh, &x0).unwrap();
        let lam_t = terminal_condition(traj.terminal(), y.view(), &cfg);
        let lam = solve_adjoint(&params, Activation::Tanh, &traj, &lam_t).unwrap();
        let single =
            assemble_gradient(&params, Activation::Tanh, &[traj.clone()], &[lam.clone()], &cfg)
                .unwrap();
        let pair = assemble_gradient(
            &params,
            Activation::Tanh,
            &[traj.clone(), traj],
            &[lam.clone(), lam],
            &cfg,
        )
        .unwrap();
        assert!(single
            .d_weights()
            .iter()
            .zip(pair.d_weights().iter())
            .all(|(a, b)| (a - b).abs() < 1e-14));
    }

    /// Guarded relative error for finite-difference comparisons.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
    }

    /// Assembled gradient vs central finite differences of the discrete
    /// cost, entry by entry. `h c_n G[n]` must equal the plain partial
    /// derivative; equivalently the FD estimate is converted to a density.
    fn fd_check(act: Activation, cfg: &CostConfig, seed: u64, n_dim: usize, steps: usize, k: usize) {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamPath::random_normal(grid, n_dim, 0.6, seed ^ 0xabcd).unwrap();
        let mut batch = Vec::new();
        for _ in 0..k {
            let x0 = Array1::from_shape_fn(n_dim, |_| rng.gen_range(-1.0..1.0));
            let mut y = Array1::zeros(n_dim);
            let class = rng.gen_range(0..cfg.num_classes);
            y[class] = 1.0;
            batch.push((x0, y));
        }

        let mut trajs = Vec::new();
        let mut lambdas = Vec::new();
        for (x0, y) in &batch {
            let traj = solve_forward_euler(&params, act, x0).unwrap();
            let lam_t = terminal_condition(traj.terminal(), y.view(), cfg);
            lambdas.push(solve_adjoint(&params, act, &traj, &lam_t).unwrap());
            trajs.push(traj);
        }
        let grad = assemble_gradient(&params, act, &trajs, &lambdas, cfg).unwrap();

        let h = grid.step();
        let eps = 1e-6;
        let mut max_rel: f64 = 0.0;
        for node in 0..grid.num_nodes() {
            let density = h * grid.trapezoid_weight(node);
            for i in 0..n_dim {
                for j in 0..n_dim {
                    let mut p = params.clone();
                    p.weight_mut(node)[[i, j]] += eps;
                    let up = cost(&p, act, &batch, cfg).unwrap();
                    let mut p = params.clone();
                    p.weight_mut(node)[[i, j]] -= eps;
                    let down = cost(&p, act, &batch, cfg).unwrap();
                    let fd = (up - down) / (2.0 * eps) / density;
                    max_rel = max_rel.max(rel_err(fd, grad.d_weight(node)[[i, j]]));
                }
                let mut p = params.clone();
                p.bias_mut(node)[i] += eps;
                let up = cost(&p, act, &batch, cfg).unwrap();
                let mut p = params.clone();
                p.bias_mut(node)[i] -= eps;
                let down = cost(&p, act, &batch, cfg).unwrap();
                let fd = (up - down) / (2.0 * eps) / density;
                max_rel = max_rel.max(rel_err(fd, grad.d_bias(node)[i]));
            }
        }
        assert!(
            max_rel < 1e-5,
            "finite-difference mismatch {max_rel:.3e} (act {act:?}, cfg {cfg:?})"
        );
    }

    #[test]
    fn gradient_matches_finite_differences_l2() {
        let cfg = CostConfig {
            mu1: 1.0,
            mu2: 0.0,
            mu3: 0.0,
            mu4: 0.0,
            num_classes: 2,
        };
        fd_check(Activation::Tanh, &cfg, 1, 2, 5, 2);
    }

    #[test]
    fn gradient_matches_finite_differences_cross_entropy() {
        let cfg = CostConfig {
            mu1: 0.0,
            mu2: 1.0,
            mu3: 0.0,
            mu4: 0.0,
            num_classes: 3,
        };
        fd_check(Activation::Tanh, &cfg, 2, 3, 6, 2);
    }

    #[test]
    fn gradient_matches_finite_differences_mixed() {
        let cfg = CostConfig {
            mu1: 0.7,
            mu2: 1.0,
            mu3: 0.4,
            mu4: 1e-2,
            num_classes: 2,
        };
        fd_check(Activation::Tanh, &cfg, 3, 2, 5, 3);
    }

    #[test]
    fn directional_derivative_matches_trapezoid_inner_product() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let n_dim = 3;
        let params = ParamPath::random_normal(grid, n_dim, 0.5, 17).unwrap();
        let cfg = CostConfig {
            mu1: 1.0,
            mu2: 0.5,
            mu3: 0.2,
            mu4: 1e-3,
            num_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch: Vec<_> = (0..3)
            .map(|_| {
                let x0 = Array1::from_shape_fn(n_dim, |_| rng.gen_range(-1.0..1.0));
                let mut y = Array1::zeros(n_dim);
                y[rng.gen_range(0..2)] = 1.0;
                (x0, y)
            })
            .collect();

        let mut trajs = Vec::new();
        let mut lambdas = Vec::new();
        for (x0, y) in &batch {
            let traj = solve_forward_euler(&params, Activation::Tanh, x0).unwrap();
            let lam_t = terminal_condition(traj.terminal(), y.view(), &cfg);
            lambdas.push(solve_adjoint(&params, Activation::Tanh, &traj, &lam_t).unwrap());
            trajs.push(traj);
        }
        let grad = assemble_gradient(&params, Activation::Tanh, &trajs, &lambdas, &cfg).unwrap();

        let mut dir = GradientPath::zeros(grid, n_dim);
        for v in dir.d_weights_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in dir.d_biases_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }

        let eps = 1e-6;
        let mut up = params.clone();
        apply_step(&mut up, eps, &dir);
        let mut down = params.clone();
        apply_step(&mut down, -eps, &dir);
        let fd = (cost(&up, Activation::Tanh, &batch, &cfg).unwrap()
            - cost(&down, Activation::Tanh, &batch, &cfg).unwrap())
            / (2.0 * eps);
        let inner = grad.l2_dot(&dir);
        assert!(
            rel_err(fd, inner) < 1e-7,
            "directional derivative {fd} vs inner product {inner}"
        );
    }

    #[test]
    fn batch_adjoint_and_gradient_match_per_sample_path() {
        let grid = TimeGrid::new(2.0, 9).unwrap();
        let n_dim = 4;
        let k = 3;
        let params = ParamPath::random_normal(grid, n_dim, 0.4, 23).unwrap();
        let cfg = CostConfig {
            mu1: 1.0,
            mu2: 1.0,
            mu3: 0.1,
            mu4: 1e-4,
            num_classes: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<Array1<f64>> = (0..k)
            .map(|_| Array1::from_shape_fn(n_dim, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let ys: Vec<Array1<f64>> = (0..k)
            .map(|_| {
                let mut y = Array1::zeros(n_dim);
                y[rng.gen_range(0..3)] = 1.0;
                y
            })
            .collect();

        // Per-sample route.
        let mut trajs = Vec::new();
        let mut lambdas = Vec::new();
        for (x0, y) in xs.iter().zip(ys.iter()) {
            let traj = solve_forward_euler(&params, Activation::Tanh, x0).unwrap();
            let lam_t = terminal_condition(traj.terminal(), y.view(), &cfg);
            lambdas.push(solve_adjoint(&params, Activation::Tanh, &traj, &lam_t).unwrap());
            trajs.push(traj);
        }
        let reference = assemble_gradient(&params, Activation::Tanh, &trajs, &lambdas, &cfg).unwrap();

        // Batch route.
        let mut x0 = Array2::zeros((n_dim, k));
        for (kk, x) in xs.iter().enumerate() {
            x0.column_mut(kk).assign(x);
        }
        let batch = solve_forward_batch(&params, Activation::Tanh, x0.view()).unwrap();
        let mut lam_t = Array2::zeros((n_dim, k));
        for kk in 0..k {
            let cond = terminal_condition(batch.terminal().column(kk), ys[kk].view(), &cfg);
            lam_t.column_mut(kk).assign(&cond);
        }
        let blam = solve_adjoint_batch(&params, &batch, lam_t.view()).unwrap();
        let bgrad = assemble_gradient_batch(&params, &batch, &blam, &cfg).unwrap();

        for (a, b) in reference.d_weights().iter().zip(bgrad.d_weights().iter()) {
            assert!((a - b).abs() < 1e-11 * a.abs().max(1.0), "{a} vs {b}");
        }
        for (a, b) in reference.d_biases().iter().zip(bgrad.d_biases().iter()) {
            assert!((a - b).abs() < 1e-11 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let grid = tiny_grid(4);
        let params = ParamPath::zeros(grid, 2).unwrap();
        let cfg = CostConfig::l2_loss(2);
        let err = assemble_gradient(&params, Activation::Tanh, &[], &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::EmptyBatch));
    }
}
