//! Adaptive Dormand–Prince 5(4) integration of the network dynamics.
//!
//! Used for inference-time comparison against the Euler discretization;
//! gradients are defined on the Euler grid only. The grid-stored
//! parameters are interpolated piecewise linearly in `t`, and the dense
//! (quartic) output of each accepted step re-samples the solution onto
//! the `L + 1` grid nodes.

use ndarray::Array1;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::params::ParamPath;
use crate::solver::{matvec_into, Trajectory};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const BH1: f64 = 5179.0 / 57600.0;
const BH3: f64 = 7571.0 / 16695.0;
const BH4: f64 = 393.0 / 640.0;
const BH5: f64 = -92097.0 / 339200.0;
const BH6: f64 = 187.0 / 2100.0;
const BH7: f64 = 1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
// Dense-output coefficients of the 5(4) pair.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const MAX_STEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, Default)]
pub struct Rk45Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
}

struct Dynamics<'a> {
    params: &'a ParamPath,
    act: Activation,
    tmp_left: Array1<f64>,
    tmp_right: Array1<f64>,
}

impl<'a> Dynamics<'a> {
    fn new(params: &'a ParamPath, act: Activation) -> Self {
        let n = params.width();
        Self {
            params,
            act,
            tmp_left: Array1::zeros(n),
            tmp_right: Array1::zeros(n),
        }
    }

    /// `σ(W(t) x + b(t))` with `W, b` linear between grid nodes.
    fn eval(&mut self, t: f64, x: &Array1<f64>, out: &mut Array1<f64>) {
        let grid = self.params.grid();
        let pos = (t / grid.step()).clamp(0.0, grid.num_steps() as f64);
        let mut node = pos.floor() as usize;
        if node >= grid.num_steps() {
            node = grid.num_steps() - 1;
        }
        let s = pos - node as f64;
        matvec_into(self.params.weight(node), x.view(), &mut self.tmp_left);
        matvec_into(self.params.weight(node + 1), x.view(), &mut self.tmp_right);
        let b0 = self.params.bias(node);
        let b1 = self.params.bias(node + 1);
        for i in 0..x.len() {
            let pre = (1.0 - s) * (self.tmp_left[i] + b0[i]) + s * (self.tmp_right[i] + b1[i]);
            out[i] = self.act.value(pre);
        }
    }
}

/// Adaptive solve, re-sampled onto the parameter grid nodes.
pub fn solve_forward_rk45(
    params: &ParamPath,
    act: Activation,
    x0: &Array1<f64>,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Trajectory> {
    solve_forward_rk45_with_stats(params, act, x0, rel_tol, abs_tol).map(|(traj, _)| traj)
}

pub fn solve_forward_rk45_with_stats(
    params: &ParamPath,
    act: Activation,
    x0: &Array1<f64>,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(Trajectory, Rk45Stats)> {
    if !(rel_tol > 0.0 && abs_tol > 0.0) {
        return Err(Error::InvalidConfig(
            "adaptive solver tolerances must be positive".into(),
        ));
    }
    let n_dim = params.width();
    if x0.len() != n_dim {
        return Err(Error::DimensionMismatch {
            context: "adaptive solve input",
            expected: n_dim,
            actual: x0.len(),
        });
    }
    let grid = params.grid();
    let t_end = grid.horizon();
    let h_min = 1e-13 * t_end;
    let mut stats = Rk45Stats::default();

    let mut dyn_ = Dynamics::new(params, act);
    let mut states = ndarray::Array2::zeros((grid.num_nodes(), n_dim));
    states.row_mut(0).assign(x0);
    let mut next_node = 1usize;

    let mut y = x0.clone();
    let mut t = 0.0;
    let mut k: Vec<Array1<f64>> = (0..7).map(|_| Array1::zeros(n_dim)).collect();
    let mut y_stage = Array1::zeros(n_dim);
    let mut y_new = Array1::zeros(n_dim);

    let mut k1 = Array1::zeros(n_dim);
    dyn_.eval(0.0, &y, &mut k1);
    stats.evals += 1;
    k[0].assign(&k1);

    let mut h = initial_step(&mut dyn_, &y, &k[0], t_end, rel_tol, abs_tol, &mut stats);
    let mut rejected_last = false;

    for _ in 0..MAX_STEPS {
        if t >= t_end {
            break;
        }
        if h < h_min {
            return Err(Error::Stiffness { t, h });
        }
        if t + h > t_end {
            h = t_end - t;
        }

        // Stages 2..7 (k1 already holds f(t, y) by FSAL).
        stage(&mut dyn_, &mut k, 1, t + C2 * h, &y, &mut y_stage, h, &[A21]);
        stage(&mut dyn_, &mut k, 2, t + C3 * h, &y, &mut y_stage, h, &[A31, A32]);
        stage(&mut dyn_, &mut k, 3, t + C4 * h, &y, &mut y_stage, h, &[A41, A42, A43]);
        stage(&mut dyn_, &mut k, 4, t + C5 * h, &y, &mut y_stage, h, &[A51, A52, A53, A54]);
        stage(&mut dyn_, &mut k, 5, t + h, &y, &mut y_stage, h, &[A61, A62, A63, A64, A65]);
        stats.evals += 5;

        let mut finite = true;
        for i in 0..n_dim {
            let v = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
            finite &= v.is_finite();
            y_new[i] = v;
        }
        dyn_.eval(t + h, &y_new, &mut k[6]);
        stats.evals += 1;

        // Weighted RMS of the embedded 4th/5th order difference.
        let mut err_sq = 0.0;
        if finite {
            for i in 0..n_dim {
                let e = h
                    * ((B1 - BH1) * k[0][i] + (B3 - BH3) * k[2][i] + (B4 - BH4) * k[3][i]
                        + (B5 - BH5) * k[4][i]
                        + (B6 - BH6) * k[5][i]
                        - BH7 * k[6][i]);
                let sc = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
        }
        let err = if finite {
            (err_sq / n_dim as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            // Dense output for grid nodes inside the accepted step.
            while next_node < grid.num_nodes() && grid.node(next_node) <= t + h + 1e-14 * t_end {
                let theta = ((grid.node(next_node) - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                let mut row = states.row_mut(next_node);
                for i in 0..n_dim {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    let r4 = ydiff - h * k[6][i] - bspl;
                    let r5 = h
                        * (D1 * k[0][i]
                            + D3 * k[2][i]
                            + D4 * k[3][i]
                            + D5 * k[4][i]
                            + D6 * k[5][i]
                            + D7 * k[6][i]);
                    row[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
                }
                next_node += 1;
            }
            t += h;
            std::mem::swap(&mut y, &mut y_new);
            let (head, tail) = k.split_at_mut(6);
            head[0].assign(&tail[0]); // FSAL
            stats.accepted += 1;

            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            let fac = if rejected_last { fac.min(1.0) } else { fac };
            h *= fac;
            rejected_last = false;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
        }
    }

    if t < t_end {
        return Err(Error::MaxSteps(MAX_STEPS));
    }
    // The terminal node may be left unfilled when the last step lands on
    // T within rounding; it equals the final state.
    if next_node == grid.num_nodes() - 1 {
        states.row_mut(next_node).assign(&y);
        next_node += 1;
    }
    debug_assert_eq!(next_node, grid.num_nodes());
    Ok((Trajectory::from_states(grid, states), stats))
}

#[allow(clippy::too_many_arguments)]
fn stage(
    dyn_: &mut Dynamics<'_>,
    k: &mut [Array1<f64>],
    idx: usize,
    t: f64,
    y: &Array1<f64>,
    y_stage: &mut Array1<f64>,
    h: f64,
    coeffs: &[f64],
) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (j, &a) in coeffs.iter().enumerate() {
            acc += a * k[j][i];
        }
        y_stage[i] = y[i] + h * acc;
    }
    let (done, rest) = k.split_at_mut(idx);
    let _ = done;
    dyn_.eval(t, y_stage, &mut rest[0]);
}

fn initial_step(
    dyn_: &mut Dynamics<'_>,
    y0: &Array1<f64>,
    f0: &Array1<f64>,
    t_end: f64,
    rel_tol: f64,
    abs_tol: f64,
    stats: &mut Rk45Stats,
) -> f64 {
    let n = y0.len() as f64;
    let sc = |yi: f64| abs_tol + rel_tol * yi.abs();
    let d0 = (y0.iter().map(|&v| (v / sc(v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0
        .iter()
        .zip(y0.iter())
        .map(|(&f, &v)| (f / sc(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * t_end
    } else {
        0.01 * d0 / d1
    }
    .min(t_end);
    let mut f1 = Array1::zeros(y0.len());
    let y1 = y0 + &(h0 * f0);
    dyn_.eval(h0, &y1, &mut f1);
    stats.evals += 1;
    let d2 = (f1
        .iter()
        .zip(f0.iter())
        .zip(y0.iter())
        .map(|((&a, &b), &v)| ((a - b) / sc(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * t_end)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_end)
}
