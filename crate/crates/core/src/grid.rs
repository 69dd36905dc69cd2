use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform cell-centered grid on a truncation `[x_min, x_max]` of the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n_cells: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 16;

    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < 0.0 && 0.0 < x_max) {
            return Err(invalid(
                "grid",
                format!("need x_min < 0 < x_max, got [{x_min}, {x_max}]"),
            ));
        }
        if n_cells < Self::MIN_CELLS {
            return Err(invalid(
                "grid.n_cells",
                format!("need at least {} cells, got {n_cells}", Self::MIN_CELLS),
            ));
        }
        Ok(Self { x_min, x_max, n_cells })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Left face of cell `i` (face `n_cells` is the right boundary).
    pub fn face(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    /// Cell containing `x` on the half-open domain `[x_min, x_max)`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x < self.x_max) {
            return None;
        }
        let i = ((x - self.x_min) / self.dx()) as usize;
        Some(i.min(self.n_cells - 1))
    }

    /// Length of the overlap of cell `i` with the open window `(-r, r)`.
    pub fn overlap(&self, i: usize, r: f64) -> f64 {
        let lo = self.face(i).max(-r);
        let hi = self.face(i + 1).min(r);
        (hi - lo).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry() {
        let g = Grid::new(-12.0, 12.0, 800).unwrap();
        assert!((g.dx() - 0.03).abs() < 1e-15);
        assert!((g.center(0) + 11.985).abs() < 1e-12);
        assert_eq!(g.locate(-12.0), Some(0));
        assert_eq!(g.locate(12.0), None);
        assert_eq!(g.locate(11.9999), Some(799));
        assert_eq!(g.locate(f64::NAN), None);
        let total: f64 = (0..800).map(|i| g.overlap(i, 1.0)).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(0.0, 1.0, 100).is_err());
        assert!(Grid::new(-1.0, 1.0, 8).is_err());
        assert!(Grid::new(-1.0, f64::INFINITY, 100).is_err());
    }
}
