//! Sobolev gradient transform.
//!
//! `S` maps an `L²(0, T)` gradient component `u` to its `W^{1,2}` Riesz
//! representer
//!
//! ```text
//! S u(t) = cosh(T−t)/sinh(T) ∫₀ᵗ u(s) cosh(s) ds
//!        + cosh(t)/sinh(T)  ∫ₜᵀ u(s) cosh(T−s) ds,
//! ```
//!
//! equivalently the solution of the two-point boundary value problem
//! `(S u)'' − S u = −u` with Neumann ends `(S u)'(0) = (S u)'(T) = 0`.
//! Descent along `S`-transformed gradients is steepest with respect to the
//! `W^{1,2}` inner product and produces visibly smoother weight paths.
//!
//! Quadrature: `u` is taken piecewise linear between nodes and the moments
//! of `cosh` against the linear pieces are integrated in closed form. That
//! keeps constants exact fixed points of the discrete transform (plain
//! trapezoid on the product would not) while the overall accuracy stays
//! `O(h²)`. Prefix/suffix accumulation makes one series cost `O(L)`; the
//! interval tables are shared across the `N² + N` series of a gradient.
//!
//! `cosh`/`sinh` are evaluated directly, which overflows for horizons
//! around `T ≈ 700`; the constructor rejects such grids.

use ndarray::Axis;

use crate::adjoint::GradientPath;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTimeSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ScalarTimeSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch {
                context: "time series values",
                expected: grid.num_nodes(),
                actual: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("time series"));
        }
        Ok(Self { grid, values })
    }
}

/// Precomputed interval weights of the transform on one grid.
#[derive(Debug, Clone)]
pub struct SobolevTransform {
    grid: TimeGrid,
    /// Per-interval weights of ∫ u(s) cosh(s) ds for (left, right) node values.
    fwd_left: Vec<f64>,
    fwd_right: Vec<f64>,
    /// Per-interval weights of ∫ u(s) cosh(T−s) ds.
    bwd_left: Vec<f64>,
    bwd_right: Vec<f64>,
    /// cosh(T−t_m) / sinh(T) and cosh(t_m) / sinh(T).
    front: Vec<f64>,
    back: Vec<f64>,
}

impl SobolevTransform {
    pub fn new(grid: TimeGrid) -> Result<Self> {
        if grid.num_steps() < 2 {
            return Err(Error::InvalidConfig(
                "Sobolev transform needs at least two grid steps".into(),
            ));
        }
        let t_max = grid.horizon();
        if t_max > 700.0 {
            return Err(Error::InvalidConfig(format!(
                "horizon {t_max} overflows cosh/sinh in 64-bit arithmetic"
            )));
        }
        let steps = grid.num_steps();
        let h = grid.step();
        let sinh_t = t_max.sinh();
        let mut fwd_left = Vec::with_capacity(steps);
        let mut fwd_right = Vec::with_capacity(steps);
        let mut bwd_left = Vec::with_capacity(steps);
        let mut bwd_right = Vec::with_capacity(steps);
        for m in 0..steps {
            let a = grid.node(m);
            let b = grid.node(m + 1);
            // ∫_a^b cosh(s) ds and ∫_a^b (s−a) cosh(s) ds
            let i0 = b.sinh() - a.sinh();
            let i1 = h * b.sinh() - (b.cosh() - a.cosh());
            fwd_left.push(i0 - i1 / h);
            fwd_right.push(i1 / h);
            // ∫_a^b cosh(T−s) ds and ∫_a^b (s−a) cosh(T−s) ds
            let j0 = (t_max - a).sinh() - (t_max - b).sinh();
            let j1 = -h * (t_max - b).sinh() + (t_max - a).cosh() - (t_max - b).cosh();
            bwd_left.push(j0 - j1 / h);
            bwd_right.push(j1 / h);
        }
        let front = (0..=steps).map(|m| (t_max - grid.node(m)).cosh() / sinh_t).collect();
        let back = (0..=steps).map(|m| grid.node(m).cosh() / sinh_t).collect();
        Ok(Self {
            grid,
            fwd_left,
            fwd_right,
            bwd_left,
            bwd_right,
            front,
            back,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Transform nodal values in place using caller-provided scratch for
    /// the prefix and suffix sums.
    pub fn apply_in_place(&self, values: &mut [f64], prefix: &mut Vec<f64>, suffix: &mut Vec<f64>) {
        let steps = self.grid.num_steps();
        debug_assert_eq!(values.len(), steps + 1);
        prefix.clear();
        prefix.resize(steps + 1, 0.0);
        suffix.clear();
        suffix.resize(steps + 1, 0.0);
        for m in 0..steps {
            prefix[m + 1] =
                prefix[m] + self.fwd_left[m] * values[m] + self.fwd_right[m] * values[m + 1];
        }
        for m in (0..steps).rev() {
            suffix[m] =
                suffix[m + 1] + self.bwd_left[m] * values[m] + self.bwd_right[m] * values[m + 1];
        }
        for m in 0..=steps {
            values[m] = self.front[m] * prefix[m] + self.back[m] * suffix[m];
        }
    }

    pub fn apply_slice(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        let mut prefix = Vec::new();
        let mut suffix = Vec::new();
        self.apply_in_place(&mut out, &mut prefix, &mut suffix);
        out
    }
}

/// `S u` sampled on the grid nodes of `u`.
pub fn sobolev_transform(u: &ScalarTimeSeries) -> Result<ScalarTimeSeries> {
    let transform = SobolevTransform::new(u.grid)?;
    Ok(ScalarTimeSeries {
        grid: u.grid,
        values: transform.apply_slice(&u.values),
    })
}

/// Apply `S` independently to each of the `N² + N` scalar series of a
/// gradient path.
pub fn sobolev_apply(grad: &mut GradientPath) -> Result<()> {
    let transform = SobolevTransform::new(grad.grid())?;
    sobolev_apply_with(&transform, grad);
    Ok(())
}

/// Same as [`sobolev_apply`] with a prebuilt transform, for callers that
/// reuse the interval tables across iterations.
pub fn sobolev_apply_with(transform: &SobolevTransform, grad: &mut GradientPath) {
    let nodes = transform.grid().num_nodes();
    let mut series = vec![0.0; nodes];
    let mut prefix = Vec::new();
    let mut suffix = Vec::new();
    let width = grad.width();
    {
        let weights = grad.d_weights_mut();
        for i in 0..width {
            for j in 0..width {
                for (s, node) in series.iter_mut().zip(weights.axis_iter(Axis(0))) {
                    *s = node[[i, j]];
                }
                transform.apply_in_place(&mut series, &mut prefix, &mut suffix);
                for (node, &s) in weights.axis_iter_mut(Axis(0)).zip(series.iter()) {
                    let mut node = node;
                    node[[i, j]] = s;
                }
            }
        }
    }
    {
        let biases = grad.d_biases_mut();
        for i in 0..width {
            for (s, &v) in series.iter_mut().zip(biases.column(i).iter()) {
                *s = v;
            }
            transform.apply_in_place(&mut series, &mut prefix, &mut suffix);
            for (v, &s) in biases.column_mut(i).iter_mut().zip(series.iter()) {
                *v = s;
            }
        }
    }
}
