use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compact description of a grid, as stored in dataset manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridDescriptor {
    /// `n` points on `[lo, hi]`, or `[lo, hi)` when `endpoint` is false (periodic grids).
    Uniform1d {
        n: usize,
        lo: f64,
        hi: f64,
        endpoint: bool,
    },
    /// Tensor grid with both endpoints on each axis; `x` varies fastest.
    Uniform2d {
        nx: usize,
        ny: usize,
        lo: [f64; 2],
        hi: [f64; 2],
    },
    Explicit { points: Vec<Vec<f64>> },
}

/// A list of points (rows of `points`) with the descriptor that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    descriptor: GridDescriptor,
    points: DMatrix<f64>,
}

impl Grid {
    pub fn uniform_1d(n: usize, lo: f64, hi: f64, endpoint: bool) -> Result<Self> {
        Self::from_descriptor(GridDescriptor::Uniform1d { n, lo, hi, endpoint })
    }

    /// Periodic grid `x_i = i / n` on `[0, 1)`.
    pub fn periodic_unit(n: usize) -> Result<Self> {
        Self::uniform_1d(n, 0.0, 1.0, false)
    }

    /// `n x n` nodes on `[0, 1]^2`, boundary included.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::from_descriptor(GridDescriptor::Uniform2d {
            nx: n,
            ny: n,
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        })
    }

    pub fn explicit(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Empty("grid points"));
        }
        let rows = points
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        Ok(Grid {
            descriptor: GridDescriptor::Explicit { points: rows },
            points,
        })
    }

    pub fn from_descriptor(descriptor: GridDescriptor) -> Result<Self> {
        let points = match &descriptor {
            &GridDescriptor::Uniform1d { n, lo, hi, endpoint } => {
                if n == 0 || !(hi > lo) || (endpoint && n < 2) {
                    return Err(Error::InvalidParameter(format!(
                        "invalid uniform 1d grid n={n} on [{lo}, {hi}]"
                    )));
                }
                let denom = if endpoint { n - 1 } else { n } as f64;
                DMatrix::from_fn(n, 1, |i, _| lo + (hi - lo) * i as f64 / denom)
            }
            &GridDescriptor::Uniform2d { nx, ny, lo, hi } => {
                if nx < 2 || ny < 2 || !(hi[0] > lo[0]) || !(hi[1] > lo[1]) {
                    return Err(Error::InvalidParameter(format!(
                        "invalid uniform 2d grid {nx}x{ny}"
                    )));
                }
                DMatrix::from_fn(nx * ny, 2, |k, c| {
                    if c == 0 {
                        lo[0] + (hi[0] - lo[0]) * (k % nx) as f64 / (nx - 1) as f64
                    } else {
                        lo[1] + (hi[1] - lo[1]) * (k / nx) as f64 / (ny - 1) as f64
                    }
                })
            }
            GridDescriptor::Explicit { points } => {
                let n = points.len();
                let d = points.first().map_or(0, Vec::len);
                if n == 0 || d == 0 {
                    return Err(Error::Empty("grid points"));
                }
                if points.iter().any(|p| p.len() != d) {
                    return Err(Error::Format("explicit grid points have mixed dimensions".into()));
                }
                DMatrix::from_fn(n, d, |i, j| points[i][j])
            }
        };
        Ok(Grid { descriptor, points })
    }

    pub fn descriptor(&self) -> &GridDescriptor {
        &self.descriptor
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Logical array shape (`[n]`, `[ny, nx]`, or `[n, d]` for explicit grids).
    pub fn shape(&self) -> Vec<usize> {
        match self.descriptor {
            GridDescriptor::Uniform1d { n, .. } => vec![n],
            GridDescriptor::Uniform2d { nx, ny, .. } => vec![ny, nx],
            GridDescriptor::Explicit { .. } => vec![self.points.nrows(), self.points.ncols()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grids() {
        let g = Grid::periodic_unit(4).unwrap();
        assert_eq!(g.points().as_slice(), &[0.0, 0.25, 0.5, 0.75]);
        let s = Grid::unit_square(3).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s.points().row(5).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5]);
        assert_eq!(s.shape(), vec![3, 3]);
        let e = Grid::from_descriptor(GridDescriptor::Explicit {
            points: vec![vec![0.0, 1.0], vec![2.0, 3.0]],
        })
        .unwrap();
        assert_eq!(e.points()[(1, 0)], 2.0);
        assert!(Grid::uniform_1d(1, 0.0, 1.0, true).is_err());
    }
}
