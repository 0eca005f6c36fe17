use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sample_rng, Grid};
use crate::error::{Error, Result};
use crate::recovery::FunctionSamples;

/// Domain and boundary condition of the covariance operator `-Laplacian + tau^2 I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldBoundary {
    /// Periodic on `[0, 1)`, sampled at `x_i = i / n`.
    Periodic1d { n: usize },
    /// Homogeneous Neumann on `[0, 1]^2`, sampled on `n x n` nodes including the boundary.
    Neumann2d { n: usize },
}

/// Gaussian field `mean_level + GP(0, scale (-Laplacian + tau^2 I)^(-exponent))`,
/// synthesized from its leading `truncation` Karhunen-Loeve modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSpec {
    pub mean_level: f64,
    pub scale: f64,
    pub tau: f64,
    pub exponent: f64,
    pub boundary: FieldBoundary,
    pub truncation: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    Constant,
    Cos(usize),
    Sin(usize),
    Cos2(usize, usize),
}

impl Mode {
    fn eigenvalue(self) -> f64 {
        match self {
            Mode::Constant => 0.0,
            Mode::Cos(k) | Mode::Sin(k) => 4.0 * PI * PI * (k * k) as f64,
            Mode::Cos2(a, b) => PI * PI * (a * a + b * b) as f64,
        }
    }

    /// L2-normalized eigenfunction.
    fn eval(self, x: &[f64]) -> f64 {
        let c = |k: usize, t: f64| if k == 0 { 1.0 } else { SQRT_2 * (PI * k as f64 * t).cos() };
        match self {
            Mode::Constant => 1.0,
            Mode::Cos(k) => SQRT_2 * (2.0 * PI * k as f64 * x[0]).cos(),
            Mode::Sin(k) => SQRT_2 * (2.0 * PI * k as f64 * x[0]).sin(),
            Mode::Cos2(a, b) => c(a, x[0]) * c(b, x[1]),
        }
    }
}

impl GaussianFieldSpec {
    pub fn periodic(scale: f64, tau: f64, exponent: f64, n: usize) -> Self {
        GaussianFieldSpec {
            mean_level: 0.0,
            scale,
            tau,
            exponent,
            boundary: FieldBoundary::Periodic1d { n },
            truncation: n,
        }
    }

    pub fn neumann(scale: f64, tau: f64, exponent: f64, n: usize) -> Self {
        GaussianFieldSpec {
            mean_level: 0.0,
            scale,
            tau,
            exponent,
            boundary: FieldBoundary::Neumann2d { n },
            truncation: n * n,
        }
    }

    pub fn with_truncation(mut self, truncation: usize) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn grid(&self) -> Result<Grid> {
        match self.boundary {
            FieldBoundary::Periodic1d { n } => Grid::periodic_unit(n),
            FieldBoundary::Neumann2d { n } => Grid::unit_square(n),
        }
    }

    fn available_modes(&self) -> usize {
        match self.boundary {
            FieldBoundary::Periodic1d { n } => n,
            FieldBoundary::Neumann2d { n } => n * n,
        }
    }

    /// Retained modes ordered by eigenvalue.
    fn modes(&self) -> Result<Vec<Mode>> {
        if self.truncation == 0 {
            return Err(Error::InvalidParameter("field truncation must be positive".into()));
        }
        if self.truncation > self.available_modes() {
            return Err(Error::InvalidParameter(format!(
                "truncation {} exceeds the {} modes resolvable on the grid",
                self.truncation,
                self.available_modes()
            )));
        }
        for (name, v) in [("scale", self.scale), ("tau", self.tau), ("exponent", self.exponent)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("field {name} must be positive")));
            }
        }
        let modes = match self.boundary {
            FieldBoundary::Periodic1d { .. } => {
                let mut m = vec![Mode::Constant];
                let mut k = 1;
                while m.len() < self.truncation {
                    m.push(Mode::Cos(k));
                    if m.len() < self.truncation {
                        m.push(Mode::Sin(k));
                    }
                    k += 1;
                }
                m
            }
            FieldBoundary::Neumann2d { n } => {
                let mut all: Vec<(usize, usize)> =
                    (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
                all.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
                all.into_iter()
                    .take(self.truncation)
                    .map(|(a, b)| if a == 0 && b == 0 { Mode::Constant } else { Mode::Cos2(a, b) })
                    .collect()
            }
        };
        Ok(modes)
    }

    /// Coefficient variances `scale (lambda + tau^2)^(-exponent)` of the retained modes.
    pub fn mode_variances(&self) -> Result<Vec<f64>> {
        Ok(self
            .modes()?
            .into_iter()
            .map(|m| self.scale * (m.eigenvalue() + self.tau * self.tau).powf(-self.exponent))
            .collect())
    }

    /// Matrix with entry `(i, k)` = `sqrt(var_k) phi_k(x_i)` for the rows of `points`.
    pub fn synthesis_matrix(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dim = match self.boundary {
            FieldBoundary::Periodic1d { .. } => 1,
            FieldBoundary::Neumann2d { .. } => 2,
        };
        if points.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "field evaluation points",
                expected: dim,
                found: points.ncols(),
            });
        }
        let modes = self.modes()?;
        let var = self.mode_variances()?;
        let pts: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(DMatrix::from_fn(points.nrows(), modes.len(), |i, k| {
            var[k].sqrt() * modes[k].eval(&pts[i])
        }))
    }

    /// Draws the standard-normal KL coefficients of one field.
    pub fn draw_coefficients<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.truncation,
            (0..self.truncation).map(|_| rng.sample::<f64, _>(StandardNormal)),
        )
    }
}

/// Precomputed synthesis on a fixed point set.
pub(crate) struct FieldSampler {
    spec: GaussianFieldSpec,
    synthesis: DMatrix<f64>,
}

impl FieldSampler {
    pub(crate) fn new(spec: &GaussianFieldSpec, points: &DMatrix<f64>) -> Result<Self> {
        Ok(FieldSampler {
            spec: spec.clone(),
            synthesis: spec.synthesis_matrix(points)?,
        })
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        self.evaluate(&self.spec.draw_coefficients(rng))
    }

    pub(crate) fn evaluate(&self, xi: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.synthesis * xi;
        f.add_scalar_mut(self.spec.mean_level);
        f
    }
}

/// `count` independent fields on the spec's grid; field `i` uses stream `i` of `rng_seed`.
pub fn sample_gaussian_field(
    spec: &GaussianFieldSpec,
    rng_seed: u64,
    count: usize,
) -> Result<Vec<FunctionSamples>> {
    let grid = spec.grid()?;
    let sampler = FieldSampler::new(spec, grid.points())?;
    (0..count)
        .map(|i| {
            let mut rng = sample_rng(rng_seed, i as u64);
            FunctionSamples::new(grid.points().clone(), sampler.sample(&mut rng))
        })
        .collect()
}
