use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Time-discretized network parameters: one `N x N` weight matrix and one
/// bias vector of length `N` per grid node.
///
/// The explicit Euler solver consumes the left-node values `W_n, b_n` on
/// step `n`; the node at index `L` participates only in interpolation by
/// the adaptive solver and in the quadrature of the weight-decay term.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPath {
    grid: TimeGrid,
    width: usize,
    /// Shape `(L + 1, N, N)`.
    weights: Array3<f64>,
    /// Shape `(L + 1, N)`.
    biases: Array2<f64>,
}

impl ParamPath {
    pub fn zeros(grid: TimeGrid, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidConfig("network width must be positive".into()));
        }
        let nodes = grid.num_nodes();
        Ok(Self {
            grid,
            width,
            weights: Array3::zeros((nodes, width, width)),
            biases: Array2::zeros((nodes, width)),
        })
    }

    /// Parameters with every entry drawn i.i.d. from `N(0, std^2)` using a
    /// seeded generator; identical seeds give bit-identical paths.
    pub fn random_normal(grid: TimeGrid, width: usize, std: f64, seed: u64) -> Result<Self> {
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "init std must be nonnegative, got {std}"
            )));
        }
        let mut path = Self::zeros(grid, width)?;
        if std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, std).expect("std validated above");
            for w in path.weights.iter_mut() {
                *w = normal.sample(&mut rng);
            }
            for b in path.biases.iter_mut() {
                *b = normal.sample(&mut rng);
            }
        }
        Ok(path)
    }

    pub fn from_parts(grid: TimeGrid, weights: Array3<f64>, biases: Array2<f64>) -> Result<Self> {
        let nodes = grid.num_nodes();
        let width = biases.ncols();
        if weights.shape() != [nodes, width, width] {
            return Err(Error::DimensionMismatch {
                context: "parameter weights",
                expected: nodes * width * width,
                actual: weights.len(),
            });
        }
        if biases.nrows() != nodes {
            return Err(Error::DimensionMismatch {
                context: "parameter biases",
                expected: nodes,
                actual: biases.nrows(),
            });
        }
        if width == 0 {
            return Err(Error::InvalidConfig("network width must be positive".into()));
        }
        let finite = weights.iter().all(|v| v.is_finite()) && biases.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("parameter path"));
        }
        Ok(Self {
            grid,
            width,
            weights,
            biases,
        })
    }

    #[inline]
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Total number of stored values, `(L + 1) (N^2 + N)`.
    pub fn value_count(&self) -> usize {
        self.grid.num_nodes() * (self.width * self.width + self.width)
    }

    #[inline]
    pub fn weight(&self, node: usize) -> ArrayView2<'_, f64> {
        self.weights.index_axis(ndarray::Axis(0), node)
    }

    #[inline]
    pub fn bias(&self, node: usize) -> ArrayView1<'_, f64> {
        self.biases.index_axis(ndarray::Axis(0), node)
    }

    #[inline]
    pub fn weight_mut(&mut self, node: usize) -> ArrayViewMut2<'_, f64> {
        self.weights.index_axis_mut(ndarray::Axis(0), node)
    }

    #[inline]
    pub fn bias_mut(&mut self, node: usize) -> ArrayViewMut1<'_, f64> {
        self.biases.index_axis_mut(ndarray::Axis(0), node)
    }

    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array2<f64> {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut Array3<f64> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut Array2<f64> {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.biases.iter().all(|v| v.is_finite())
    }

    /// Squared `L^2(0, T)` norms of the weight and bias paths, trapezoidal
    /// in time, Frobenius/Euclidean per node.
    pub fn l2_norms_sq(&self) -> (f64, f64) {
        let h = self.grid.step();
        let mut w_sum = 0.0;
        let mut b_sum = 0.0;
        for n in 0..self.grid.num_nodes() {
            let c = self.grid.trapezoid_weight(n);
            w_sum += c * self.weight(n).iter().map(|v| v * v).sum::<f64>();
            b_sum += c * self.bias(n).iter().map(|v| v * v).sum::<f64>();
        }
        (h * w_sum, h * b_sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(3.0, 8).unwrap()
    }

    #[test]
    fn zeros_have_expected_shape_and_count() {
        let p = ParamPath::zeros(grid(), 5).unwrap();
        assert_eq!(p.value_count(), 9 * (25 + 5));
        assert_eq!(p.weight(3).shape(), [5, 5]);
        assert_eq!(p.bias(8).len(), 5);
    }

    #[test]
    fn zero_std_gives_all_zero_parameters() {
        let p = ParamPath::random_normal(grid(), 4, 0.0, 7).unwrap();
        assert!(p.weights().iter().all(|&v| v == 0.0));
        assert!(p.biases().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = ParamPath::random_normal(grid(), 6, 0.001, 42).unwrap();
        let b = ParamPath::random_normal(grid(), 6, 0.001, 42).unwrap();
        assert_eq!(a, b);
        let c = ParamPath::random_normal(grid(), 6, 0.001, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_near_requested() {
        let grid = TimeGrid::new(3.0, 150).unwrap();
        let p = ParamPath::random_normal(grid, 196, 0.001, 1).unwrap();
        let n = p.value_count() as f64;
        let mean: f64 = p.weights().sum() + p.biases().sum();
        let mean = mean / n;
        let var: f64 = p
            .weights()
            .iter()
            .chain(p.biases().iter())
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!(
            (std - 0.001).abs() < 0.05 * 0.001,
            "sample std {std} not within 5% of 0.001"
        );
    }

    #[test]
    fn rejects_non_finite_parts() {
        let nodes = grid().num_nodes();
        let mut w = Array3::zeros((nodes, 3, 3));
        w[[0, 0, 0]] = f64::NAN;
        let b = Array2::zeros((nodes, 3));
        assert!(ParamPath::from_parts(grid(), w, b).is_err());
    }

    #[test]
    fn trapezoid_l2_norm_of_constant_path() {
        // W ≡ c on [0, T]: ‖W‖² = c² T exactly under the trapezoidal rule.
        let grid = TimeGrid::new(3.0, 10).unwrap();
        let mut p = ParamPath::zeros(grid, 1).unwrap();
        p.weights_mut().fill(2.0);
        let (w_sq, b_sq) = p.l2_norms_sq();
        assert!((w_sq - 4.0 * 3.0).abs() < 1e-12);
        assert_eq!(b_sq, 0.0);
    }
}
