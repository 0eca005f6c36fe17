//! PCA of measurement vectors with variance-fraction truncation.
//!
//! Variance is accounted with squared singular values of the column-centered
//! sample matrix. Each basis column is sign-normalized so that its
//! largest-magnitude entry is positive. When singular values tie, the order
//! of the tied directions is whatever the SVD produced and is not stable
//! across platforms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative slack when comparing cumulative variance against the target fraction.
const FRACTION_SLACK: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct PcaProjector {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    singular_values: DVector<f64>,
    retained_fraction: f64,
    achieved_fraction: f64,
}

impl PcaProjector {
    /// Fits on the rows of `samples`, keeping the fewest components whose
    /// squared singular values reach `retained_fraction` of the total.
    pub fn fit(samples: &DMatrix<f64>, retained_fraction: f64) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::InvalidParameter(format!(
                "PCA needs at least 2 samples, got {}",
                samples.nrows()
            )));
        }
        if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "retained fraction must lie in (0, 1], got {retained_fraction}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PCA samples"));
        }
        let mean = samples.row_mean().transpose();
        let mut centered = samples.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let svd = centered.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::InvalidParameter("SVD did not converge".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        // stable sort keeps first-computed order among ties
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sq: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
        let total: f64 = sq.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter(
                "samples have zero total variance".into(),
            ));
        }
        let target = retained_fraction * total * (1.0 - FRACTION_SLACK);
        let mut cumulative = 0.0;
        let mut k = sq.len();
        for (i, s) in sq.iter().enumerate() {
            cumulative += s;
            if cumulative >= target {
                k = i + 1;
                break;
            }
        }
        let d = samples.ncols();
        let mut basis = DMatrix::zeros(d, k);
        for (j, &src) in order.iter().take(k).enumerate() {
            let mut col = v_t.row(src).transpose();
            let pivot = col.iter().copied().fold(0.0f64, |best, v| {
                if v.abs() > best.abs() {
                    v
                } else {
                    best
                }
            });
            if pivot < 0.0 {
                col.neg_mut();
            }
            basis.set_column(j, &col);
        }
        let singular_values = DVector::from_iterator(k, sq.iter().take(k).map(|s| s.sqrt()));
        let achieved_fraction = sq.iter().take(k).sum::<f64>() / total;
        Ok(PcaProjector {
            mean,
            basis,
            singular_values,
            retained_fraction,
            achieved_fraction,
        })
    }

    /// Rebuilds a projector from stored mean and basis.
    pub fn from_parts(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        singular_values: DVector<f64>,
        retained_fraction: f64,
        achieved_fraction: f64,
    ) -> Result<Self> {
        if basis.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "PCA basis rows",
                expected: mean.len(),
                found: basis.nrows(),
            });
        }
        if singular_values.len() != basis.ncols() {
            return Err(Error::DimensionMismatch {
                context: "PCA singular values",
                expected: basis.ncols(),
                found: singular_values.len(),
            });
        }
        Ok(PcaProjector {
            mean,
            basis,
            singular_values,
            retained_fraction,
            achieved_fraction,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Orthonormal columns, `d x k`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn retained_fraction(&self) -> f64 {
        self.retained_fraction
    }

    /// Fraction of the total squared singular values kept by the first `k` components.
    pub fn achieved_fraction(&self) -> f64 {
        self.achieved_fraction
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "PCA projection",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(self.basis.tr_mul(&(DVector::from_column_slice(x) - &self.mean)))
    }

    /// Projects every row.
    pub fn project_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "PCA projection",
                expected: self.input_dim(),
                found: rows.ncols(),
            });
        }
        let mut centered = rows.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * &self.basis)
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.components() {
            return Err(Error::DimensionMismatch {
                context: "PCA reconstruction",
                expected: self.components(),
                found: z.len(),
            });
        }
        Ok(&self.mean + &self.basis * DVector::from_column_slice(z))
    }

    /// Reconstructs every row.
    pub fn reconstruct_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.components() {
            return Err(Error::DimensionMismatch {
                context: "PCA reconstruction",
                expected: self.components(),
                found: rows.ncols(),
            });
        }
        let mut out = rows * self.basis.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(out)
    }
}
