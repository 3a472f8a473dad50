use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform 1-D grid `x_i = x_min + i dx`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub dx: f64,
    pub len: usize,
}

impl Grid {
    /// The node count is rounded so that `x_max` is hit to within `dx/2`.
    pub fn new(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dx = {dx} must be positive"
            )));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "empty interval [{x_min}, {x_max}]"
            )));
        }
        let cells = ((x_max - x_min) / dx).round() as usize;
        if cells < 2 {
            return Err(Error::InvalidParameter(format!(
                "interval [{x_min}, {x_max}] holds fewer than two cells of width {dx}"
            )));
        }
        Ok(Self {
            x_min,
            dx,
            len: cells + 1,
        })
    }

    /// `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, dx: f64) -> Result<Self> {
        Self::new(-half_width, half_width, dx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.x(i)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.x_min) / self.dx).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.len - 1)
        }
    }

    /// Every `factor`-th node, when the coarse grid shares the endpoints.
    pub fn coarsen(&self, factor: usize) -> Option<Self> {
        if factor == 0 || !(self.len - 1).is_multiple_of(factor) || (self.len - 1) / factor < 2 {
            return None;
        }
        Some(Self {
            x_min: self.x_min,
            dx: self.dx * factor as f64,
            len: (self.len - 1) / factor + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_spacing() {
        let g = Grid::new(-10.0, 10.0, 0.01).unwrap();
        assert_eq!(g.len, 2001);
        assert!((g.x_max() - 10.0).abs() < 1e-9);
        assert_eq!(g.nearest(0.0), 1000);
        assert_eq!(g.nearest(-50.0), 0);
        assert_eq!(g.nearest(50.0), 2000);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(Grid::new(0.0, 1.0, 0.0).is_err());
        assert!(Grid::new(1.0, 0.0, 0.1).is_err());
        assert!(Grid::new(0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn coarsen_shares_nodes() {
        let g = Grid::symmetric(5.0, 0.01).unwrap();
        let c = g.coarsen(2).unwrap();
        assert_eq!(c.len, 501);
        assert!((c.x(7) - g.x(14)).abs() < 1e-12);
        assert!(Grid::symmetric(5.0, 0.01).unwrap().coarsen(3).is_none());
    }
}
