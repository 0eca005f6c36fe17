//! Scalar positive-definite kernels on Euclidean vectors.
//!
//! Point sets are passed as matrices whose rows are the points. All
//! translation-invariant families are functions of the Euclidean distance
//! `r = |x - y|` only; the linear kernel is the inner product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matérn smoothness values with a closed-form finite sum (`nu = p + 1/2`).
pub const MATERN_NUS: [f64; 4] = [0.5, 1.5, 2.5, 3.5];

#[derive(Clone, Debug, PartialEq)]
enum Family {
    Linear,
    RationalQuadratic {
        lengthscale: f64,
        alpha: f64,
    },
    Matern {
        lengthscale: f64,
        p: usize,
        /// `sqrt(2 nu) / l`
        rate: f64,
        /// Polynomial coefficients in `z = sqrt(8 nu) r / l`, highest power first.
        coeffs: Vec<f64>,
    },
    Gaussian {
        lengthscale: f64,
    },
}

/// A scalar kernel `k(x, y)`, scaled by a positive output scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct ScalarKernel {
    family: Family,
    output_scale: f64,
}

/// Flat JSON form of a kernel, e.g.
/// `{"family":"matern","nu":2.5,"lengthscale":1.0,"output_scale":1.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scale: Option<f64>,
}

fn check_positive(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

impl ScalarKernel {
    pub fn linear() -> Self {
        ScalarKernel {
            family: Family::Linear,
            output_scale: 1.0,
        }
    }

    pub fn rational_quadratic(lengthscale: f64, alpha: f64) -> Result<Self> {
        Ok(ScalarKernel {
            family: Family::RationalQuadratic {
                lengthscale: check_positive("lengthscale", lengthscale)?,
                alpha: check_positive("alpha", alpha)?,
            },
            output_scale: 1.0,
        })
    }

    /// Matérn kernel with `nu` in {1/2, 3/2, 5/2, 7/2}.
    pub fn matern(nu: f64, lengthscale: f64) -> Result<Self> {
        let lengthscale = check_positive("lengthscale", lengthscale)?;
        let p = MATERN_NUS
            .iter()
            .position(|&v| v == nu)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "Matern nu must be one of {MATERN_NUS:?}, got {nu}"
                ))
            })?;
        // k(r) = exp(-sqrt(2nu) r/l) p!/(2p)! sum_i (p+i)!/(i!(p-i)!) z^(p-i)
        let lead = factorial(p) / factorial(2 * p);
        let coeffs = (0..=p)
            .map(|i| lead * factorial(p + i) / (factorial(i) * factorial(p - i)))
            .collect();
        Ok(ScalarKernel {
            family: Family::Matern {
                lengthscale,
                p,
                rate: (2.0 * nu).sqrt() / lengthscale,
                coeffs,
            },
            output_scale: 1.0,
        })
    }

    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        Ok(ScalarKernel {
            family: Family::Gaussian {
                lengthscale: check_positive("lengthscale", lengthscale)?,
            },
            output_scale: 1.0,
        })
    }

    pub fn with_output_scale(mut self, output_scale: f64) -> Result<Self> {
        self.output_scale = check_positive("output_scale", output_scale)?;
        Ok(self)
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.family, Family::Linear)
    }

    pub fn lengthscale(&self) -> Option<f64> {
        match self.family {
            Family::Linear => None,
            Family::RationalQuadratic { lengthscale, .. }
            | Family::Matern { lengthscale, .. }
            | Family::Gaussian { lengthscale } => Some(lengthscale),
        }
    }

    /// Short human-readable label, e.g. `matern(nu=2.5,l=0.3)`.
    pub fn label(&self) -> String {
        let base = match &self.family {
            Family::Linear => "linear".to_string(),
            Family::RationalQuadratic { lengthscale, alpha } => {
                format!("rq(l={lengthscale},alpha={alpha})")
            }
            Family::Matern { lengthscale, p, .. } => {
                format!("matern(nu={},l={lengthscale})", *p as f64 + 0.5)
            }
            Family::Gaussian { lengthscale } => format!("gaussian(l={lengthscale})"),
        };
        if self.output_scale == 1.0 {
            base
        } else {
            format!("{}*{base}", self.output_scale)
        }
    }

    /// Kernel value as a function of the distance, for stationary families.
    fn radial(&self, r: f64) -> f64 {
        let k = match &self.family {
            Family::Linear => unreachable!("linear kernel is not radial"),
            Family::RationalQuadratic { lengthscale, alpha } => {
                (1.0 + r * r / (2.0 * lengthscale * lengthscale)).powf(-alpha)
            }
            Family::Matern { rate, coeffs, .. } => {
                let z = 2.0 * rate * r;
                // Horner in z, coefficients ordered by decreasing power.
                let poly = coeffs.iter().fold(0.0, |acc, &c| acc * z + c);
                (-rate * r).exp() * poly
            }
            Family::Gaussian { lengthscale } => {
                (-r * r / (2.0 * lengthscale * lengthscale)).exp()
            }
        };
        self.output_scale * k
    }

    /// `k(x, y)` without dimension or finiteness checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            Family::Linear => {
                self.output_scale * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
            }
            _ => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                self.radial(sq.sqrt())
            }
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.is_empty() {
            return Err(Error::Empty("kernel argument"));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel evaluation",
                expected: x.len(),
                found: y.len(),
            });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel argument"));
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel matrix with entry `(i, j) = k(x_i, y_j)`; rows of `x` and `y` are points.
    pub fn gram(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_points(x, "gram rows")?;
        check_points(y, "gram columns")?;
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                context: "gram point dimension",
                expected: x.ncols(),
                found: y.ncols(),
            });
        }
        // Column-per-point copies keep the coordinate loops contiguous.
        let xt = x.transpose();
        let yt = y.transpose();
        let mut out = DMatrix::zeros(x.nrows(), y.nrows());
        for j in 0..y.nrows() {
            let yj = yt.column(j);
            let yj = yj.as_slice();
            for i in 0..x.nrows() {
                out[(i, j)] = self.eval_unchecked(xt.column(i).as_slice(), yj);
            }
        }
        Ok(out)
    }

    /// Symmetric self-Gram `k(X, X)`; the upper triangle mirrors the lower one exactly.
    pub fn gram_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_points(x, "gram points")?;
        let xt = x.transpose();
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let xj = xt.column(j);
            let xj = xj.as_slice();
            for i in j..n {
                let v = self.eval_unchecked(xt.column(i).as_slice(), xj);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Row vector `k(x, Y)` for a single query against the rows of `points`.
    pub fn cross(&self, x: &[f64], points: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.len() != points.ncols() {
            return Err(Error::DimensionMismatch {
                context: "kernel query dimension",
                expected: points.ncols(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel query"));
        }
        let pt = points.transpose();
        Ok(DVector::from_iterator(
            points.nrows(),
            (0..points.nrows()).map(|i| self.eval_unchecked(x, pt.column(i).as_slice())),
        ))
    }
}

fn check_points(x: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Empty(what));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Median of all pairwise Euclidean distances between distinct rows.
pub fn median_pairwise_distance(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let pt = points.transpose();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((pt.column(i) - pt.column(j)).norm());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

impl TryFrom<KernelSpec> for ScalarKernel {
    type Error = Error;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| {
                Error::InvalidParameter(format!("kernel '{}' requires '{name}'", spec.family))
            })
        };
        let kernel = match spec.family.as_str() {
            "linear" => ScalarKernel::linear(),
            "rq" => ScalarKernel::rational_quadratic(
                need("lengthscale", spec.lengthscale)?,
                need("alpha", spec.alpha)?,
            )?,
            "matern" => ScalarKernel::matern(
                need("nu", spec.nu)?,
                need("lengthscale", spec.lengthscale)?,
            )?,
            "gaussian" => ScalarKernel::gaussian(need("lengthscale", spec.lengthscale)?)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown kernel family '{other}' (expected linear | rq | matern | gaussian)"
                )))
            }
        };
        kernel.with_output_scale(spec.output_scale.unwrap_or(1.0))
    }
}

impl From<ScalarKernel> for KernelSpec {
    fn from(k: ScalarKernel) -> Self {
        let output_scale = Some(k.output_scale);
        match k.family {
            Family::Linear => KernelSpec {
                family: "linear".into(),
                lengthscale: None,
                alpha: None,
                nu: None,
                output_scale,
            },
            Family::RationalQuadratic { lengthscale, alpha } => KernelSpec {
                family: "rq".into(),
                lengthscale: Some(lengthscale),
                alpha: Some(alpha),
                nu: None,
                output_scale,
            },
            Family::Matern { lengthscale, p, .. } => KernelSpec {
                family: "matern".into(),
                lengthscale: Some(lengthscale),
                alpha: None,
                nu: Some(p as f64 + 0.5),
                output_scale,
            },
            Family::Gaussian { lengthscale } => KernelSpec {
                family: "gaussian".into(),
                lengthscale: Some(lengthscale),
                alpha: None,
                nu: None,
                output_scale,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_families() -> Vec<ScalarKernel> {
        let mut v = vec![
            ScalarKernel::linear(),
            ScalarKernel::rational_quadratic(0.7, 1.3).unwrap(),
            ScalarKernel::gaussian(0.8).unwrap(),
        ];
        v.extend(MATERN_NUS.iter().map(|&nu| ScalarKernel::matern(nu, 0.9).unwrap()));
        v
    }

    fn points(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            rows.len(),
            rows[0].len(),
            rows.iter().flat_map(|r| r.iter().copied()),
        )
    }

    #[test]
    fn spot_values() {
        let lin = ScalarKernel::linear();
        assert_eq!(lin.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);

        let rq = ScalarKernel::rational_quadratic(0.3, 4.0).unwrap();
        assert_eq!(rq.eval(&[0.2, -1.0], &[0.2, -1.0]).unwrap(), 1.0);

        let m12 = ScalarKernel::matern(0.5, 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        assert!((m12.eval(&[0.0], &[1.0]).unwrap() - e1).abs() < 1e-15);

        let g = ScalarKernel::gaussian(1.0).unwrap();
        assert!((g.eval(&[0.0, 0.0], &[1.0, 1.0]).unwrap() - e1).abs() < 1e-15);
    }

    #[test]
    fn matern_closed_forms() {
        // Standard half-integer forms written out independently of the sum.
        let l = 0.7;
        for &r in &[0.0, 0.1, 0.5, 1.3, 4.0] {
            let s3 = 3f64.sqrt() * r / l;
            let s5 = 5f64.sqrt() * r / l;
            let s7 = 7f64.sqrt() * r / l;
            let want = [
                (-r / l).exp(),
                (1.0 + s3) * (-s3).exp(),
                (1.0 + s5 + s5 * s5 / 3.0) * (-s5).exp(),
                (1.0 + s7 + 2.0 * s7 * s7 / 5.0 + s7.powi(3) / 15.0) * (-s7).exp(),
            ];
            for (nu, w) in MATERN_NUS.iter().zip(want) {
                let k = ScalarKernel::matern(*nu, l).unwrap();
                let got = k.eval(&[0.0], &[r]).unwrap();
                assert!((got - w).abs() < 1e-14, "nu={nu} r={r}: {got} vs {w}");
            }
        }
    }

    #[test]
    fn matern_half_matches_exponential_on_grid() {
        let k = ScalarKernel::matern(0.5, 1.7).unwrap();
        for i in 0..100 {
            let r = 10.0 * i as f64 / 99.0;
            let got = k.eval(&[0.0], &[r]).unwrap();
            assert!((got - (-r / 1.7).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_examples() {
        let g = ScalarKernel::gaussian(1.0).unwrap();
        let dup = points(&[&[0.0], &[0.0]]);
        assert_eq!(g.gram_sym(&dup).unwrap(), DMatrix::from_element(2, 2, 1.0));

        let lin = ScalarKernel::linear();
        let e = points(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(lin.gram(&e, &e).unwrap(), DMatrix::identity(2, 2));

        let m = ScalarKernel::matern(0.5, 1.0).unwrap();
        let x = points(&[&[0.0], &[1.0], &[2.0]]);
        let gm = m.gram(&x, &x).unwrap();
        let row = [1.0, (-1.0f64).exp(), (-2.0f64).exp()];
        for i in 0..3 {
            for j in 0..3 {
                let want = row[(i as isize - j as isize).unsigned_abs()];
                assert!((gm[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert_eq!(gm, m.gram_sym(&x).unwrap());
    }

    #[test]
    fn errors() {
        let k = ScalarKernel::gaussian(1.0).unwrap();
        assert!(matches!(
            k.eval(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(k.eval(&[f64::NAN], &[1.0]), Err(Error::NonFinite(_))));
        let empty = DMatrix::<f64>::zeros(0, 2);
        assert!(matches!(k.gram(&empty, &empty), Err(Error::Empty(_))));
        assert!(ScalarKernel::matern(1.0, 1.0).is_err());
        assert!(ScalarKernel::gaussian(-1.0).is_err());
        assert!(ScalarKernel::rational_quadratic(1.0, 0.0).is_err());
        assert!(ScalarKernel::linear().with_output_scale(0.0).is_err());
    }

    #[test]
    fn json_round_trip_and_names() {
        let k: ScalarKernel = serde_json::from_str(
            r#"{"family":"matern","nu":2.5,"lengthscale":1.0,"output_scale":1.0}"#,
        )
        .unwrap();
        assert_eq!(k, ScalarKernel::matern(2.5, 1.0).unwrap());
        let rq: ScalarKernel =
            serde_json::from_str(r#"{"family":"rq","lengthscale":2.0,"alpha":0.5}"#).unwrap();
        assert_eq!(rq, ScalarKernel::rational_quadratic(2.0, 0.5).unwrap());
        for k in all_families() {
            let s = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<ScalarKernel>(&s).unwrap(), k);
        }
        assert!(serde_json::from_str::<ScalarKernel>(r#"{"family":"rbf","lengthscale":1}"#)
            .is_err());
        assert!(serde_json::from_str::<ScalarKernel>(r#"{"family":"matern","lengthscale":1}"#)
            .is_err());
    }

    #[test]
    fn psd_on_random_point_sets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..24 {
            let n = rng.random_range(2..=50);
            let d = rng.random_range(1..=4);
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
            for k in all_families() {
                let g = k.gram_sym(&x).unwrap();
                let eig = nalgebra::SymmetricEigen::new(g).eigenvalues;
                let max = eig.max();
                let min = eig.min();
                assert!(
                    min >= -1e-10 * max.abs().max(1e-300),
                    "trial {trial} {}: min {min} max {max}",
                    k.label()
                );
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_scaled(
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            y in proptest::collection::vec(-3.0f64..3.0, 3),
            c in 0.01f64..100.0,
        ) {
            for k in all_families() {
                let a = k.eval(&x, &y).unwrap();
                prop_assert_eq!(a, k.eval(&y, &x).unwrap());
                let scaled = k.clone().with_output_scale(c).unwrap().eval(&x, &y).unwrap();
                prop_assert!((scaled - c * a).abs() <= 1e-12 * (c * a).abs().max(1e-300));
            }
        }
    }
}
