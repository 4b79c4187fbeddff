use ndarray::{linalg::general_mat_mul, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::params::ParamPath;

/// State path of a single sample: `x_n` at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    /// Shape `(L + 1, N)`; row 0 is the input.
    states: Array2<f64>,
}

impl Trajectory {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    #[inline]
    pub fn state(&self, node: usize) -> ArrayView1<'_, f64> {
        self.states.row(node)
    }

    pub fn input(&self) -> ArrayView1<'_, f64> {
        self.states.row(0)
    }

    pub fn terminal(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.states.nrows() - 1)
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub(crate) fn from_states(grid: TimeGrid, states: Array2<f64>) -> Self {
        Self { grid, states }
    }
}

/// Plain in-order matrix-vector product. The explicit summation order makes
/// single-sample solves reproducible down to the last bit, independent of
/// any GEMM backend blocking.
#[inline]
pub(crate) fn matvec_into(w: ArrayView2<'_, f64>, x: ArrayView1<'_, f64>, out: &mut Array1<f64>) {
    for (o, row) in out.iter_mut().zip(w.rows()) {
        let mut acc = 0.0;
        for (&wv, &xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// Explicit Euler solve of `x' = σ(W(t) x + b(t))` from `x(0) = x0`:
/// `x_{n+1} = x_n + h σ(W_n x_n + b_n)`.
pub fn solve_forward_euler(
    params: &ParamPath,
    act: Activation,
    x0: &Array1<f64>,
) -> Result<Trajectory> {
    let n_dim = params.width();
    if x0.len() != n_dim {
        return Err(Error::DimensionMismatch {
            context: "forward solve input",
            expected: n_dim,
            actual: x0.len(),
        });
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let mut states = Array2::zeros((steps + 1, n_dim));
    states.row_mut(0).assign(x0);
    let mut pre = Array1::zeros(n_dim);
    for n in 0..steps {
        matvec_into(params.weight(n), states.row(n), &mut pre);
        pre += &params.bias(n);
        let (cur, mut next) = {
            let (a, b) = states.view_mut().split_at(Axis(0), n + 1);
            (a, b)
        };
        let cur = cur.row(n);
        let mut next = next.row_mut(0);
        let mut finite = true;
        for ((nx, &cx), &p) in next.iter_mut().zip(cur.iter()).zip(pre.iter()) {
            let v = cx + h * act.value(p);
            finite &= v.is_finite();
            *nx = v;
        }
        if !finite {
            return Err(Error::Integration { step: n });
        }
    }
    Ok(Trajectory { grid, states })
}

/// Predicted class: argmax over the first `num_classes` components, ties
/// broken by the lowest index.
pub fn classify(x: ArrayView1<'_, f64>, num_classes: usize) -> Result<usize> {
    if num_classes == 0 || num_classes > x.len() {
        return Err(Error::DimensionMismatch {
            context: "classify",
            expected: num_classes,
            actual: x.len(),
        });
    }
    let mut best = 0;
    for i in 1..num_classes {
        if x[i] > x[best] {
            best = i;
        }
    }
    Ok(best)
}

/// State paths of a batch of samples, columns indexing the samples, plus
/// the activation derivatives `σ'(W_n x_n + b_n)` saved per step for the
/// adjoint and sensitivity passes.
#[derive(Debug, Clone)]
pub struct BatchTrajectory {
    grid: TimeGrid,
    /// Shape `(L + 1, N, K)`.
    states: Array3<f64>,
    /// Shape `(L, N, K)`.
    derivs: Array3<f64>,
}

impl BatchTrajectory {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_samples(&self) -> usize {
        self.states.len_of(Axis(2))
    }

    #[inline]
    pub fn states_at(&self, node: usize) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(0), node)
    }

    /// `σ'(W_n x_n + b_n)` for step `n`.
    #[inline]
    pub fn derivs_at(&self, step: usize) -> ArrayView2<'_, f64> {
        self.derivs.index_axis(Axis(0), step)
    }

    pub fn terminal(&self) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(0), self.states.len_of(Axis(0)) - 1)
    }

    /// Single-sample view of the stored states.
    pub fn sample_states(&self, k: usize) -> Array2<f64> {
        self.states.index_axis(Axis(2), k).to_owned()
    }
}

/// Euler solve of a whole batch at once. `x0` has shape `(N, K)`.
///
/// Each column evolves exactly as in `solve_forward_euler` up to summation
/// order inside the GEMM backend; the batch path is itself deterministic
/// for fixed shapes.
pub fn solve_forward_batch(
    params: &ParamPath,
    act: Activation,
    x0: ArrayView2<'_, f64>,
) -> Result<BatchTrajectory> {
    let n_dim = params.width();
    if x0.nrows() != n_dim {
        return Err(Error::DimensionMismatch {
            context: "batch forward input rows",
            expected: n_dim,
            actual: x0.nrows(),
        });
    }
    let k = x0.ncols();
    if k == 0 {
        return Err(Error::EmptyBatch);
    }
    let grid = params.grid();
    let h = grid.step();
    let steps = grid.num_steps();
    let mut states = Array3::zeros((steps + 1, n_dim, k));
    let mut derivs = Array3::zeros((steps, n_dim, k));
    states.index_axis_mut(Axis(0), 0).assign(&x0);
    let mut pre = Array2::zeros((n_dim, k));
    for n in 0..steps {
        general_mat_mul(
            1.0,
            &params.weight(n),
            &states.index_axis(Axis(0), n),
            0.0,
            &mut pre,
        );
        for (mut row, &b) in pre.rows_mut().into_iter().zip(params.bias(n).iter()) {
            row += b;
        }
        let (done, mut rest) = states.view_mut().split_at(Axis(0), n + 1);
        let cur = done.index_axis(Axis(0), n);
        let mut next = rest.index_axis_mut(Axis(0), 0);
        let mut d = derivs.index_axis_mut(Axis(0), n);
        let mut finite = true;
        ndarray::azip!((nx in &mut next, &cx in &cur, &p in &pre, dv in &mut d) {
            let v = cx + h * act.value(p);
            finite &= v.is_finite();
            *nx = v;
            *dv = act.derivative(p);
        });
        if !finite {
            return Err(Error::Integration { step: n });
        }
    }
    Ok(BatchTrajectory {
        grid,
        states,
        derivs,
    })
}
