use crate::error::{Error, Result};

/// Uniform time grid on `[0, T]` with `L` steps and `L + 1` nodes.
///
/// Node `n` sits at `t_n = n * h` with `h = T / L`. Quadrature over the
/// grid uses the trapezoidal rule throughout the crate, so the endpoint
/// nodes carry half weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    num_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, num_steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        if num_steps == 0 {
            return Err(Error::InvalidConfig("grid needs at least one step".into()));
        }
        Ok(Self { horizon, num_steps })
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Number of grid nodes, `L + 1`.
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_steps + 1
    }

    /// Step length `h = T / L`.
    #[inline]
    pub fn step(&self) -> f64 {
        self.horizon / self.num_steps as f64
    }

    /// Time of node `n`.
    #[inline]
    pub fn node(&self, n: usize) -> f64 {
        n as f64 * self.step()
    }

    /// Trapezoidal quadrature weight of node `n` (without the `h` factor):
    /// 1/2 at the endpoints, 1 in the interior.
    #[inline]
    pub fn trapezoid_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.num_steps {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoidal integral of nodal values over `[0, T]`.
    pub fn trapezoid(&self, values: impl Iterator<Item = f64>) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (n, v) in values.enumerate() {
            sum += self.trapezoid_weight(n) * v;
            count = n + 1;
        }
        debug_assert_eq!(count, self.num_nodes());
        self.step() * sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_times_count_recovers_horizon() {
        let grid = TimeGrid::new(3.0, 150).unwrap();
        let recovered = grid.step() * grid.num_steps() as f64;
        assert!((recovered - 3.0).abs() <= f64::EPSILON * 3.0);
        assert_eq!(grid.num_nodes(), 151);
    }

    #[test]
    fn nodes_are_uniform() {
        let grid = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(grid.node(0), 0.0);
        assert!((grid.node(2) - 1.0).abs() < 1e-15);
        assert!((grid.node(4) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_exact_for_constants() {
        let grid = TimeGrid::new(3.0, 6).unwrap();
        let integral = grid.trapezoid((0..7).map(|_| 2.0));
        assert!((integral - 6.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }
}
