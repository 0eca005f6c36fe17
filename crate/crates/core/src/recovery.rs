//! Measurement operators and optimal-recovery maps.
//!
//! A [`MeasurementOperator`] maps a sampled function to `L u(X)`. A
//! [`RecoveryMap`] inverts it with the minimum-norm interpolant of a space
//! kernel: `u(x) = k(x, X) k(X, X)^{-1} L^{-1} U`.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::ScalarKernel;

/// First relative nugget tried when a Gram matrix is numerically singular.
pub const MIN_RELATIVE_JITTER: f64 = 1e-12;
/// Largest relative nugget tried before giving up.
pub const MAX_RELATIVE_JITTER: f64 = 1e-4;

/// Values of a function on a list of points (rows of `grid`).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSamples {
    pub grid: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl FunctionSamples {
    pub fn new(grid: DMatrix<f64>, values: DVector<f64>) -> Result<Self> {
        if grid.nrows() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "function samples",
                expected: grid.nrows(),
                found: values.len(),
            });
        }
        if values.iter().chain(grid.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("function samples"));
        }
        Ok(FunctionSamples { grid, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Invertible matrix applied after pointwise evaluation.
#[derive(Clone, Debug)]
pub enum Preconditioner {
    Identity,
    Matrix {
        forward: DMatrix<f64>,
        inverse: DMatrix<f64>,
    },
}

impl Preconditioner {
    pub fn is_identity(&self) -> bool {
        matches!(self, Preconditioner::Identity)
    }

    pub fn apply(&self, v: DVector<f64>) -> DVector<f64> {
        match self {
            Preconditioner::Identity => v,
            Preconditioner::Matrix { forward, .. } => forward * v,
        }
    }

    pub fn apply_inverse(&self, v: DVector<f64>) -> DVector<f64> {
        match self {
            Preconditioner::Identity => v,
            Preconditioner::Matrix { inverse, .. } => inverse * v,
        }
    }

    /// `||L||_F ||L^{-1}||_F`, an upper bound on the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        match self {
            Preconditioner::Identity => 1.0,
            Preconditioner::Matrix { forward, inverse } => forward.norm() * inverse.norm(),
        }
    }
}

/// Pointwise evaluation at `points` followed by a preconditioner `L`.
#[derive(Clone, Debug)]
pub struct MeasurementOperator {
    points: DMatrix<f64>,
    preconditioner: Preconditioner,
    label: String,
    condition: f64,
}

fn point_key(row: impl Iterator<Item = f64>) -> Vec<u64> {
    // + 0.0 folds -0.0 onto 0.0
    row.map(|v| (v + 0.0).to_bits()).collect()
}

impl MeasurementOperator {
    /// Identity-preconditioned pointwise measurement. Points must be pairwise distinct.
    pub fn pointwise(points: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Empty("measurement points"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement points"));
        }
        let mut seen = HashMap::with_capacity(points.nrows());
        for (i, row) in points.row_iter().enumerate() {
            if let Some(j) = seen.insert(point_key(row.iter().copied()), i) {
                return Err(Error::InvalidParameter(format!(
                    "measurement points {j} and {i} coincide"
                )));
            }
        }
        Ok(MeasurementOperator {
            points,
            preconditioner: Preconditioner::Identity,
            label: label.into(),
            condition: 1.0,
        })
    }

    /// Replaces the preconditioner with an arbitrary invertible square matrix.
    pub fn with_matrix(mut self, forward: DMatrix<f64>) -> Result<Self> {
        let n = self.points.nrows();
        if forward.nrows() != n || forward.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "preconditioner size",
                expected: n,
                found: forward.nrows().max(forward.ncols()),
            });
        }
        let inverse = forward
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("preconditioner is singular".into()))?;
        self.set_preconditioner(Preconditioner::Matrix { forward, inverse });
        Ok(self)
    }

    /// Whitened measurement `L^T u(X)` with `L = cholesky_preconditioner(..)`, so that
    /// `|measure(u)|` equals the RKHS norm of the interpolant. `None` adds jitter only
    /// if the plain Gram matrix fails to factorize.
    pub fn with_cholesky(mut self, kernel: &ScalarKernel, nugget: Option<f64>) -> Result<Self> {
        let (forward, inverse) = cholesky_pair(kernel, &self.points, nugget)?;
        self.set_preconditioner(Preconditioner::Matrix { forward, inverse });
        Ok(self)
    }

    /// Installs a preconditioner whose inverse is already known.
    pub fn with_preconditioner(mut self, p: Preconditioner) -> Result<Self> {
        if let Preconditioner::Matrix { forward, inverse } = &p {
            let n = self.points.nrows();
            for m in [forward, inverse] {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::DimensionMismatch {
                        context: "preconditioner size",
                        expected: n,
                        found: m.nrows().max(m.ncols()),
                    });
                }
            }
        }
        self.set_preconditioner(p);
        Ok(self)
    }

    fn set_preconditioner(&mut self, p: Preconditioner) {
        self.condition = p.condition_estimate();
        if self.condition > 1e12 {
            log::warn!(
                "preconditioner for '{}' is poorly conditioned (estimate {:.3e})",
                self.label,
                self.condition
            );
        }
        self.preconditioner = p;
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

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.preconditioner
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `L u(X)`; `f` must contain every measurement point exactly.
    pub fn measure(&self, f: &FunctionSamples) -> Result<DVector<f64>> {
        if f.grid.ncols() != self.points.ncols() {
            return Err(Error::DimensionMismatch {
                context: "sample grid dimension",
                expected: self.points.ncols(),
                found: f.grid.ncols(),
            });
        }
        let restricted = if f.grid == self.points {
            f.values.clone()
        } else {
            let index: HashMap<Vec<u64>, usize> = f
                .grid
                .row_iter()
                .enumerate()
                .map(|(i, r)| (point_key(r.iter().copied()), i))
                .collect();
            let mut out = DVector::zeros(self.points.nrows());
            for (i, row) in self.points.row_iter().enumerate() {
                let j = index
                    .get(&point_key(row.iter().copied()))
                    .ok_or_else(|| Error::MissingPoint(row.iter().copied().collect()))?;
                out[i] = f.values[*j];
            }
            out
        };
        Ok(self.preconditioner.apply(restricted))
    }

    /// `L v` for values already aligned with the measurement points.
    pub fn measure_values(&self, values: &[f64]) -> Result<DVector<f64>> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "measured values",
                expected: self.len(),
                found: values.len(),
            });
        }
        Ok(self.preconditioner.apply(DVector::from_column_slice(values)))
    }

    /// `L^{-1} U`: pointwise values from a measurement vector.
    pub fn unprecondition(&self, measurement: DVector<f64>) -> DVector<f64> {
        self.preconditioner.apply_inverse(measurement)
    }
}

fn factor_gram(
    kernel: &ScalarKernel,
    points: &DMatrix<f64>,
    nugget: Option<f64>,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let gram = kernel.gram_sym(points)?;
    let n = gram.nrows();
    let shifted = |nu: f64| {
        let mut g = gram.clone();
        for i in 0..n {
            g[(i, i)] += nu;
        }
        Cholesky::new(g)
    };
    if let Some(nu) = nugget {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "nugget must be nonnegative, got {nu}"
            )));
        }
        return shifted(nu)
            .map(|f| (f, nu))
            .ok_or_else(|| Error::gram_factorization(n));
    }
    if let Some(f) = shifted(0.0) {
        return Ok((f, 0.0));
    }
    let scale = gram.diagonal().mean().abs();
    let mut rel = MIN_RELATIVE_JITTER;
    while rel <= MAX_RELATIVE_JITTER {
        if let Some(f) = shifted(rel * scale) {
            log::warn!("kernel Gram matrix ({n}x{n}) needed a nugget of {:.1e} x mean diagonal", rel);
            return Ok((f, rel * scale));
        }
        rel *= 10.0;
    }
    Err(Error::gram_factorization(n))
}

/// Returns `(C^{-1}, C)` where `C C^T = k(X, X) + nugget I`.
fn cholesky_pair(
    kernel: &ScalarKernel,
    points: &DMatrix<f64>,
    nugget: Option<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (factor, _) = factor_gram(kernel, points, nugget)?;
    let c = factor.l();
    let n = c.nrows();
    let c_inv = c
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::gram_factorization(n))?;
    Ok((c_inv, c))
}

/// Cholesky preconditioner `L` with `L L^T = (k(X, X) + nugget I)^{-1}`.
pub fn cholesky_preconditioner(
    kernel: &ScalarKernel,
    points: &DMatrix<f64>,
    nugget: Option<f64>,
) -> Result<DMatrix<f64>> {
    Ok(cholesky_pair(kernel, points, nugget)?.0.transpose())
}

/// Minimum-norm interpolation from the measurements of a [`MeasurementOperator`].
#[derive(Clone, Debug)]
pub struct RecoveryMap {
    kernel: ScalarKernel,
    measurement: MeasurementOperator,
    factor: Cholesky<f64, Dyn>,
    nugget: f64,
}

impl RecoveryMap {
    /// Factorizes `k(X, X)` once, adding jitter only if it is numerically singular.
    pub fn new(kernel: ScalarKernel, measurement: MeasurementOperator) -> Result<Self> {
        Self::build(kernel, measurement, None)
    }

    pub fn with_nugget(
        kernel: ScalarKernel,
        measurement: MeasurementOperator,
        nugget: f64,
    ) -> Result<Self> {
        Self::build(kernel, measurement, Some(nugget))
    }

    fn build(
        kernel: ScalarKernel,
        measurement: MeasurementOperator,
        nugget: Option<f64>,
    ) -> Result<Self> {
        let (factor, nugget) = factor_gram(&kernel, measurement.points(), nugget)?;
        Ok(RecoveryMap {
            kernel,
            measurement,
            factor,
            nugget,
        })
    }

    pub fn kernel(&self) -> &ScalarKernel {
        &self.kernel
    }

    pub fn measurement(&self) -> &MeasurementOperator {
        &self.measurement
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Lower Cholesky factor of `k(X, X) + nugget I`.
    pub fn gram_factor(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    fn check_len(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.measurement.len() {
            return Err(Error::DimensionMismatch {
                context: "recovery measurement vector",
                expected: self.measurement.len(),
                found: u.len(),
            });
        }
        Ok(())
    }

    /// Representer coefficients `c = (k(X, X) + nugget I)^{-1} L^{-1} U`.
    pub fn coefficients(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(u)?;
        Ok(self.factor.solve(&self.measurement.unprecondition(u.clone())))
    }

    /// Evaluates the recovered function at the rows of `query`.
    pub fn recover(&self, u: &DVector<f64>, query: &DMatrix<f64>) -> Result<FunctionSamples> {
        self.check_len(u)?;
        FunctionSamples::new(query.clone(), self.weights(query)? * u)
    }

    /// Linear weights `W` (queries x measurements) with `recover(U)(query) = W U`.
    ///
    /// A query equal to measurement point `j` gets row `j` of `L^{-1}`, the
    /// interpolation condition without nugget or rounding.
    pub fn weights(&self, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let points = self.measurement.points();
        if query.ncols() != points.ncols() {
            return Err(Error::DimensionMismatch {
                context: "query point dimension",
                expected: points.ncols(),
                found: query.ncols(),
            });
        }
        let nodes: HashMap<Vec<u64>, usize> = points
            .row_iter()
            .enumerate()
            .map(|(i, r)| (point_key(r.iter().copied()), i))
            .collect();
        let hits: Vec<Option<usize>> = query
            .row_iter()
            .map(|r| nodes.get(&point_key(r.iter().copied())).copied())
            .collect();
        let mut w = DMatrix::zeros(query.nrows(), points.nrows());
        let free: Vec<usize> = (0..query.nrows()).filter(|&i| hits[i].is_none()).collect();
        if !free.is_empty() {
            let cross = self.kernel.gram(&query.select_rows(&free), points)?;
            // W = K(q, X) G^{-1} L^{-1};  G symmetric so W^T = L^{-T} G^{-1} K(X, q).
            let mut wt = self.factor.solve(&cross.transpose());
            if let Preconditioner::Matrix { inverse, .. } = self.measurement.preconditioner() {
                wt = inverse.transpose() * wt;
            }
            for (k, &i) in free.iter().enumerate() {
                w.set_row(i, &wt.column(k).transpose());
            }
        }
        for (i, hit) in hits.iter().enumerate() {
            if let Some(j) = *hit {
                match self.measurement.preconditioner() {
                    Preconditioner::Identity => w[(i, j)] = 1.0,
                    Preconditioner::Matrix { inverse, .. } => w.set_row(i, &inverse.row(j)),
                }
            }
        }
        Ok(w)
    }
}

/// Largest distance from a probe point to its nearest sample point.
pub fn fill_distance(sample: &DMatrix<f64>, probe: &DMatrix<f64>) -> Result<f64> {
    if sample.nrows() == 0 || probe.nrows() == 0 {
        return Err(Error::Empty("fill distance point set"));
    }
    if sample.ncols() != probe.ncols() {
        return Err(Error::DimensionMismatch {
            context: "fill distance dimension",
            expected: sample.ncols(),
            found: probe.ncols(),
        });
    }
    let st = sample.transpose();
    let pt = probe.transpose();
    let mut worst: f64 = 0.0;
    for p in pt.column_iter() {
        let nearest = st
            .column_iter()
            .map(|s| (s - p).norm_squared())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn measure_examples() {
        let pts = line(&[0.0, 0.5]);
        let op = MeasurementOperator::pointwise(pts.clone(), "x").unwrap();
        let f = FunctionSamples::new(pts.clone(), DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(op.measure(&f).unwrap(), f.values);

        let op2 = op.with_matrix(DMatrix::identity(2, 2) * 2.0).unwrap();
        assert_eq!(op2.measure(&f).unwrap().as_slice(), &[2.0, 4.0]);

        let g = ScalarKernel::gaussian(1.0).unwrap();
        let single = MeasurementOperator::pointwise(line(&[0.3]), "x")
            .unwrap()
            .with_cholesky(&g, Some(0.0))
            .unwrap();
        let f1 = FunctionSamples::new(line(&[0.3]), DVector::from_vec(vec![7.5])).unwrap();
        assert_eq!(single.measure(&f1).unwrap()[0], 7.5);
    }

    #[test]
    fn measure_restricts_superset_grid_and_reports_missing() {
        let op = MeasurementOperator::pointwise(line(&[0.25, 0.75]), "x").unwrap();
        let f = FunctionSamples::new(
            line(&[0.0, 0.25, 0.5, 0.75]),
            DVector::from_vec(vec![9.0, 1.0, 9.0, 3.0]),
        )
        .unwrap();
        assert_eq!(op.measure(&f).unwrap().as_slice(), &[1.0, 3.0]);

        let g = FunctionSamples::new(line(&[0.0, 0.25]), DVector::from_vec(vec![1.0, 2.0]))
            .unwrap();
        match op.measure(&g) {
            Err(Error::MissingPoint(p)) => assert_eq!(p, vec![0.75]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_points_rejected() {
        assert!(MeasurementOperator::pointwise(line(&[0.1, 0.1]), "x").is_err());
        assert!(MeasurementOperator::pointwise(line(&[0.0, -0.0]), "x").is_err());
    }

    #[test]
    fn recover_examples() {
        let g = ScalarKernel::gaussian(1.0).unwrap();
        let op = MeasurementOperator::pointwise(line(&[0.4]), "x").unwrap();
        let map = RecoveryMap::new(g.clone(), op).unwrap();
        let r = map.recover(&DVector::from_vec(vec![5.0]), &line(&[0.4])).unwrap();
        assert!((r.values[0] - 5.0).abs() < 1e-9);

        let op = MeasurementOperator::pointwise(line(&[0.0, 0.3, 0.9]), "x").unwrap();
        let map = RecoveryMap::new(g, op).unwrap();
        let z = map.recover(&DVector::zeros(3), &line(&[0.1, 2.0])).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recover_two_point_matern_matches_dense_solve() {
        let k = ScalarKernel::matern(0.5, 1.0).unwrap();
        let op = MeasurementOperator::pointwise(line(&[0.0, 1.0]), "x").unwrap();
        let map = RecoveryMap::with_nugget(k, op, 0.0).unwrap();
        let got = map
            .recover(&DVector::from_vec(vec![1.0, 0.0]), &line(&[0.5]))
            .unwrap()
            .values[0];
        // Cramer's rule on [[1, e^-1], [e^-1, 1]] c = (1, 0).
        let e = (-1.0f64).exp();
        let det = 1.0 - e * e;
        let c = [1.0 / det, -e / det];
        let w = (-0.5f64).exp();
        let want = w * c[0] + w * c[1];
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn cholesky_preconditioner_examples() {
        let g = ScalarKernel::gaussian(1.0).unwrap();
        let l = cholesky_preconditioner(&g, &line(&[0.2]), Some(0.0)).unwrap();
        assert_eq!(l[(0, 0)], 1.0);
        let g4 = g.with_output_scale(4.0).unwrap();
        let l = cholesky_preconditioner(&g4, &line(&[0.2]), Some(0.0)).unwrap();
        assert_eq!(l[(0, 0)], 0.5);
    }

    #[test]
    fn preconditioner_inverts_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = ScalarKernel::matern(2.5, 0.5).unwrap();
        for _ in 0..10 {
            let n = rng.random_range(1..15);
            let x = random_points(&mut rng, n, 2);
            let l = cholesky_preconditioner(&k, &x, Some(0.0)).unwrap();
            let gram = k.gram_sym(&x).unwrap();
            let prod = &l * l.transpose() * gram;
            assert!((prod - DMatrix::identity(n, n)).amax() < 1e-8);
        }
    }

    #[test]
    fn interpolation_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = ScalarKernel::matern(1.5, 0.4).unwrap();
        for chol in [false, true] {
            let x = random_points(&mut rng, 12, 2);
            let mut op = MeasurementOperator::pointwise(x.clone(), "x").unwrap();
            if chol {
                op = op.with_cholesky(&k, None).unwrap();
            }
            let map = RecoveryMap::new(k.clone(), op.clone()).unwrap();
            assert_eq!(map.nugget(), 0.0);
            let u = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
            let at_nodes = map.recover(&u, &x).unwrap();
            let back = op.measure(&at_nodes).unwrap();
            assert!((&back - &u).norm() <= 1e-8 * u.norm());

            let q = random_points(&mut rng, 100, 2);
            let first = map.recover(&u, &q).unwrap();
            let second = map.recover(&back, &q).unwrap();
            assert!((first.values - second.values).amax() < 1e-8);

            let w = map.weights(&q).unwrap();
            let direct = map.recover(&u, &q).unwrap();
            assert!((w * &u - direct.values).amax() < 1e-10);
        }
    }

    #[test]
    fn cholesky_measurement_is_rkhs_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = ScalarKernel::gaussian(0.15).unwrap();
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64 / 9.0 + 0.01 * rng.random_range(-1.0..1.0));
        let op = MeasurementOperator::pointwise(x.clone(), "x")
            .unwrap()
            .with_cholesky(&k, None)
            .unwrap();
        let map = RecoveryMap::new(k.clone(), op.clone()).unwrap();
        let u0 = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let c = map.coefficients(&u0).unwrap();
        let u = map.recover(&u0, &x).unwrap();
        let lhs = op.measure(&u).unwrap().norm();
        // norm of the interpolant under the kernel the map actually factorized
        let gram = k.gram_sym(&x).unwrap() + DMatrix::identity(10, 10) * map.nugget();
        let rhs = c.dot(&(gram * &c)).sqrt();
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn fill_distance_examples() {
        let s = line(&[0.0, 0.5, 1.0]);
        assert_eq!(fill_distance(&s, &s).unwrap(), 0.0);
        let probe = line(&(0..=100).map(|i| i as f64 / 100.0).collect::<Vec<_>>());
        assert!((fill_distance(&line(&[0.0, 1.0]), &probe).unwrap() - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = random_points(&mut rng, 10, 2);
        let probe = DMatrix::from_fn(2500, 2, |i, j| {
            let idx = if j == 0 { i % 50 } else { i / 50 };
            idx as f64 / 49.0
        });
        let mut brute = 0.0f64;
        for p in 0..probe.nrows() {
            let mut best = f64::INFINITY;
            for s in 0..sample.nrows() {
                let dx = probe[(p, 0)] - sample[(s, 0)];
                let dy = probe[(p, 1)] - sample[(s, 1)];
                best = best.min((dx * dx + dy * dy).sqrt());
            }
            brute = brute.max(best);
        }
        assert!((fill_distance(&sample, &probe).unwrap() - brute).abs() < 1e-15);

        // monotone as the sample grows
        let mut prev = f64::INFINITY;
        for n in 1..=10 {
            let h = fill_distance(&sample.rows(0, n).into_owned(), &probe).unwrap();
            assert!(h <= prev);
            prev = h;
        }
    }
}
