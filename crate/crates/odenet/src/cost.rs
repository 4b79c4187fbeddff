use ndarray::{Array1, ArrayView1};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::params::ParamPath;
use crate::solver::solve_forward_euler;

/// Loss and regularization coefficients of the training objective
///
/// ```text
/// E = (1/K) Σ_k [ μ1/2 ‖x_k(T) − y_k‖² + μ2 H(y_k, softmax(x_k(T))) + μ3/2 ‖x_k(T)‖² ]
///     + μ4/2 (‖W‖²_{L²} + ‖b‖²_{L²})
/// ```
///
/// The softmax and cross-entropy act on the first `num_classes` components
/// only; targets are one-hot in that block and zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig {
    /// ℓ² data-fit weight.
    pub mu1: f64,
    /// Cross-entropy weight.
    pub mu2: f64,
    /// Output-magnitude penalty.
    pub mu3: f64,
    /// Weight decay (Tikhonov) coefficient.
    pub mu4: f64,
    pub num_classes: usize,
}

impl CostConfig {
    pub fn l2_loss(num_classes: usize) -> Self {
        Self {
            mu1: 1.0,
            mu2: 0.0,
            mu3: 0.0,
            mu4: 0.0,
            num_classes,
        }
    }

    pub fn cross_entropy_loss(num_classes: usize) -> Self {
        Self {
            mu1: 0.0,
            mu2: 1.0,
            mu3: 0.4,
            mu4: 0.0,
            num_classes,
        }
    }

    pub fn with_weight_decay(mut self, mu4: f64) -> Self {
        self.mu4 = mu4;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu1, self.mu2, self.mu3, self.mu4];
        if all.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidConfig(
                "loss coefficients must be nonnegative and finite".into(),
            ));
        }
        if self.mu1 == 0.0 && self.mu2 == 0.0 && self.mu3 == 0.0 {
            return Err(Error::InvalidConfig(
                "at least one of mu1, mu2, mu3 must be positive, otherwise the terminal condition vanishes".into(),
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax over the first `num_classes` components, zero elsewhere.
/// Guarded against overflow by max subtraction.
pub fn softmax_padded(x: ArrayView1<'_, f64>, num_classes: usize) -> Array1<f64> {
    let mut out = Array1::zeros(x.len());
    let block = x.slice(ndarray::s![..num_classes]);
    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &v) in out.slice_mut(ndarray::s![..num_classes]).iter_mut().zip(block.iter()) {
        let e = (v - max).exp();
        *o = e;
        denom += e;
    }
    for o in out.slice_mut(ndarray::s![..num_classes]).iter_mut() {
        *o /= denom;
    }
    out
}

/// Cross-entropy `−Σ_i y_i ln q_i` over the class block, probabilities
/// clamped at 1e-300 so a saturated softmax cannot produce `ln 0`.
pub fn cross_entropy(y: ArrayView1<'_, f64>, softmax: ArrayView1<'_, f64>, num_classes: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..num_classes {
        if y[i] != 0.0 {
            sum -= y[i] * softmax[i].max(1e-300).ln();
        }
    }
    sum
}

/// Per-sample terminal data cost, all terms except weight decay.
pub(crate) fn terminal_cost(z: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, cfg: &CostConfig) -> f64 {
    let mut total = 0.0;
    if cfg.mu1 > 0.0 {
        let sq: f64 = z.iter().zip(y.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        total += 0.5 * cfg.mu1 * sq;
    }
    if cfg.mu2 > 0.0 {
        let s = softmax_padded(z, cfg.num_classes);
        total += cfg.mu2 * cross_entropy(y, s.view(), cfg.num_classes);
    }
    if cfg.mu3 > 0.0 {
        let sq: f64 = z.iter().map(|&a| a * a).sum();
        total += 0.5 * cfg.mu3 * sq;
    }
    total
}

/// Weight-decay term `μ4/2 (‖W‖²_{L²} + ‖b‖²_{L²})`, trapezoidal in time.
pub(crate) fn regularization_cost(params: &ParamPath, cfg: &CostConfig) -> f64 {
    if cfg.mu4 == 0.0 {
        return 0.0;
    }
    let (w_sq, b_sq) = params.l2_norms_sq();
    0.5 * cfg.mu4 * (w_sq + b_sq)
}

/// Batch cost from already computed terminal states.
pub fn cost_from_terminals(
    params: &ParamPath,
    terminals: &[Array1<f64>],
    targets: &[Array1<f64>],
    cfg: &CostConfig,
) -> Result<f64> {
    if terminals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if terminals.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "cost targets",
            expected: terminals.len(),
            actual: targets.len(),
        });
    }
    let mut data = 0.0;
    for (z, y) in terminals.iter().zip(targets.iter()) {
        data += terminal_cost(z.view(), y.view(), cfg);
    }
    Ok(data / terminals.len() as f64 + regularization_cost(params, cfg))
}

/// Full objective on a batch of `(x0, y)` pairs, running the Euler forward
/// solve per sample.
pub fn cost(
    params: &ParamPath,
    act: Activation,
    batch: &[(Array1<f64>, Array1<f64>)],
    cfg: &CostConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut data = 0.0;
    for (x0, y) in batch {
        let traj = solve_forward_euler(params, act, x0)?;
        data += terminal_cost(traj.terminal(), y.view(), cfg);
    }
    Ok(data / batch.len() as f64 + regularization_cost(params, cfg))
}
