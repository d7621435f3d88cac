use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform momentum grid on `[-K, K]^d` with `N` points per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    pub cutoff: f64,
    pub points: usize,
    pub dim: usize,
}

impl MomentumGrid {
    pub fn new(cutoff: f64, points: usize, dim: usize) -> Result<Self> {
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(invalid("grid cutoff must be positive"));
        }
        if points < 3 || points % 2 == 0 {
            return Err(invalid(format!(
                "grid size {points} must be odd and at least 3"
            )));
        }
        if !(1..=2).contains(&dim) {
            return Err(invalid("grids are supported in one or two dimensions"));
        }
        if dim == 2 && points > 65 {
            return Err(invalid(
                "two-dimensional grids are limited to 65 points per axis",
            ));
        }
        Ok(Self {
            cutoff,
            points,
            dim,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.cutoff / (self.points - 1) as f64
    }

    /// `Δk^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn axis(&self) -> Vec<f64> {
        let h = self.spacing();
        let m = (self.points / 2) as i64;
        (-m..=m).map(|j| j as f64 * h).collect()
    }

    /// Total number of nodes `N^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Nodes in row-major order (last coordinate fastest).
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let axis = self.axis();
        crate::dispersion::tensor(&vec![axis; self.dim])
    }

    pub fn id(&self) -> String {
        format!("K{}_N{}_d{}", self.cutoff, self.points, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_axis() {
        let g = MomentumGrid::new(12.0, 801, 1).unwrap();
        let a = g.axis();
        assert_eq!(a.len(), 801);
        assert_eq!(a[400], 0.0);
        assert!((a[0] + 12.0).abs() < 1e-12 && (a[800] - 12.0).abs() < 1e-12);
        for j in 0..801 {
            assert_eq!(a[j], -a[800 - j]);
        }
        assert!(MomentumGrid::new(12.0, 800, 1).is_err());
        assert_eq!(MomentumGrid::new(2.0, 5, 2).unwrap().nodes().len(), 25);
    }
}
