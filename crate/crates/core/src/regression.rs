//! Vector-valued kernel ridge regression with a diagonal kernel `S(U, U') I`.
//!
//! All output components share one factorization of `S(U, U) + gamma I`.
//! The conditional variance of the matching Gaussian process is the same
//! for every component, so [`TrainedRegressor::posterior_variance`] returns
//! a single scalar.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ScalarKernel;

/// Relative ridge used when `gamma = 0` and the Gram matrix is numerically singular.
pub const FALLBACK_RELATIVE_GAMMA: f64 = 1e-8;

/// How the regression system was solved.
#[derive(Clone, Debug)]
pub enum Solver {
    /// `A = (S(U, U) + gamma I)^{-1} V`; predictions are `S(u, U) A`.
    Dual {
        factor: Cholesky<f64, Dyn>,
        coefficients: DMatrix<f64>,
    },
    /// Linear kernel with fewer features than samples, solved in feature space:
    /// `W = c (c U^T U + gamma I)^{-1} U^T V`; predictions are `u^T W`.
    Primal {
        factor: Cholesky<f64, Dyn>,
        weights: DMatrix<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct TrainedRegressor {
    kernel: ScalarKernel,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    gamma: f64,
    solver: Solver,
}

fn check_training(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, gamma: f64) -> Result<()> {
    if inputs.nrows() == 0 || inputs.ncols() == 0 {
        return Err(Error::Empty("training inputs"));
    }
    if targets.ncols() == 0 {
        return Err(Error::Empty("training targets"));
    }
    if targets.nrows() != inputs.nrows() {
        return Err(Error::DimensionMismatch {
            context: "training target rows",
            expected: inputs.nrows(),
            found: targets.nrows(),
        });
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be nonnegative, got {gamma}"
        )));
    }
    Ok(())
}

fn add_diagonal(mut m: DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    m
}

/// Cholesky of `m + gamma I`, retrying once with a relative fallback ridge when `gamma = 0`.
fn factor_with_fallback(m: DMatrix<f64>, gamma: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = m.nrows();
    if let Some(f) = Cholesky::new(add_diagonal(m.clone(), gamma)) {
        return Ok((f, gamma));
    }
    if gamma == 0.0 {
        let fallback = FALLBACK_RELATIVE_GAMMA * m.diagonal().mean().abs();
        log::warn!(
            "regularized Gram matrix ({n}x{n}) is singular at gamma = 0; retrying with gamma = {fallback:.3e}"
        );
        if let Some(f) = Cholesky::new(add_diagonal(m, fallback)) {
            return Ok((f, fallback));
        }
    }
    Err(Error::ridge_factorization(n))
}

impl TrainedRegressor {
    /// Fits `S(U, U) + gamma I` once and solves for every output column.
    pub fn fit(
        kernel: ScalarKernel,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        check_training(&inputs, &targets, gamma)?;
        let (solver, gamma) = if kernel.is_linear() && inputs.ncols() < inputs.nrows() {
            let c = kernel.output_scale();
            let normal = inputs.tr_mul(&inputs) * c;
            let (factor, gamma) = factor_with_fallback(normal, gamma)?;
            let weights = factor.solve(&(inputs.tr_mul(&targets) * c));
            (Solver::Primal { factor, weights }, gamma)
        } else {
            let gram = kernel.gram_sym(&inputs)?;
            let (factor, gamma) = factor_with_fallback(gram, gamma)?;
            let coefficients = factor.solve(&targets);
            (
                Solver::Dual {
                    factor,
                    coefficients,
                },
                gamma,
            )
        };
        Ok(TrainedRegressor {
            kernel,
            inputs,
            targets,
            gamma,
            solver,
        })
    }

    /// Rebuilds a regressor from persisted parts without refactorizing.
    pub fn from_parts(
        kernel: ScalarKernel,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        gamma: f64,
        solver: Solver,
    ) -> Result<Self> {
        check_training(&inputs, &targets, gamma)?;
        Ok(TrainedRegressor {
            kernel,
            inputs,
            targets,
            gamma,
            solver,
        })
    }

    pub fn kernel(&self) -> &ScalarKernel {
        &self.kernel
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// Effective ridge parameter (may exceed the requested one after a fallback).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn train_count(&self) -> usize {
        self.inputs.nrows()
    }

    fn check_query(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "regression query dimension",
                expected: self.input_dim(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn predict(&self, u: &[f64]) -> Result<DVector<f64>> {
        let q = DMatrix::from_row_slice(1, u.len(), u);
        Ok(self.predict_batch(&q)?.row(0).transpose())
    }

    /// Predictions for each row of `queries`.
    pub fn predict_batch(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_query(queries.ncols())?;
        if queries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression query"));
        }
        Ok(match &self.solver {
            Solver::Dual { coefficients, .. } => {
                self.kernel.gram(queries, &self.inputs)? * coefficients
            }
            Solver::Primal { weights, .. } => queries * weights,
        })
    }

    /// `S(u, u) - S(u, U) (S(U, U) + gamma I)^{-1} S(U, u)`.
    pub fn posterior_variance(&self, u: &[f64]) -> Result<f64> {
        self.check_query(u.len())?;
        match &self.solver {
            Solver::Dual { factor, .. } => {
                let k_u = self.kernel.cross(u, &self.inputs)?;
                let prior = self.kernel.eval(u, u)?;
                let z = factor
                    .l_dirty()
                    .solve_lower_triangular(&k_u)
                    .ok_or_else(|| Error::ridge_factorization(self.train_count()))?;
                Ok(prior - z.norm_squared())
            }
            Solver::Primal { factor, .. } => {
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("regression query"));
                }
                // c gamma u^T (c U^T U + gamma I)^{-1} u
                let z = factor
                    .l_dirty()
                    .solve_lower_triangular(&DVector::from_column_slice(u))
                    .ok_or_else(|| Error::ridge_factorization(self.input_dim()))?;
                Ok(self.kernel.output_scale() * self.gamma * z.norm_squared())
            }
        }
    }

    /// `sum_j V_j^T (S(U, U) + gamma I)^{-1} V_j`.
    pub fn rkhs_norm_squared(&self) -> f64 {
        match &self.solver {
            Solver::Dual { coefficients, .. } => self.targets.dot(coefficients),
            Solver::Primal { weights, .. } => {
                let fit = weights.norm_squared() / self.kernel.output_scale();
                if self.gamma > 0.0 {
                    let residual = &self.targets - &self.inputs * weights;
                    fit + residual.norm_squared() / self.gamma
                } else {
                    fit
                }
            }
        }
    }

    /// `log det(S(U, U) + gamma I)`.
    pub fn log_det(&self) -> Result<f64> {
        let logdet_factor =
            |f: &Cholesky<f64, Dyn>| 2.0 * f.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        match &self.solver {
            Solver::Dual { factor, .. } => Ok(logdet_factor(factor)),
            Solver::Primal { factor, .. } => {
                let extra = self.train_count() - self.input_dim();
                if self.gamma == 0.0 {
                    return Err(Error::ridge_factorization(self.train_count()));
                }
                // det(gamma I_N + c U U^T) = gamma^(N - n) det(gamma I_n + c U^T U)
                Ok(extra as f64 * self.gamma.ln() + logdet_factor(factor))
            }
        }
    }

    /// Gaussian-process log evidence summed over the output components.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let n = self.train_count() as f64;
        let m = self.output_dim() as f64;
        Ok(-0.5 * self.rkhs_norm_squared()
            - 0.5 * m * self.log_det()?
            - 0.5 * n * m * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Fits and returns the summed log marginal likelihood.
pub fn log_marginal_likelihood(
    kernel: &ScalarKernel,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    gamma: f64,
) -> Result<f64> {
    TrainedRegressor::fit(kernel.clone(), inputs.clone(), targets.clone(), gamma)?
        .log_marginal_likelihood()
}

/// One grid point of a hyperparameter search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(flatten)]
    pub kernel: ScalarKernel,
    #[serde(default)]
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Mean held-out relative L2 error, minimized.
    #[serde(rename = "cv")]
    CrossVal,
    /// Log marginal likelihood, maximized.
    #[serde(rename = "lml")]
    LogMarginalLikelihood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningSpec {
    pub objective: Objective,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub grid: Vec<Candidate>,
    /// Seed of the shuffle preceding the contiguous cross-validation folds.
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: Candidate,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuningReport {
    pub objective: Objective,
    pub best: Candidate,
    pub best_index: usize,
    pub best_score: f64,
    pub scores: Vec<CandidateScore>,
}

/// Contiguous folds of a seeded permutation of `0..n`.
pub fn cross_validation_folds(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter())
}

fn cross_val_score(
    candidate: &Candidate,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    folds: &[Vec<usize>],
) -> Result<f64> {
    let n = inputs.nrows();
    let mut total = 0.0;
    for held in folds {
        let mut is_held = vec![false; n];
        for &i in held {
            is_held[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        let model = TrainedRegressor::fit(
            candidate.kernel.clone(),
            select_rows(inputs, &train),
            select_rows(targets, &train),
            candidate.gamma,
        )?;
        let pred = model.predict_batch(&select_rows(inputs, held))?;
        let truth = select_rows(targets, held);
        let mut fold_sum = 0.0;
        for (k, &idx) in held.iter().enumerate() {
            let denom = truth.row(k).norm();
            if denom == 0.0 {
                return Err(Error::ZeroNorm(idx));
            }
            fold_sum += (pred.row(k) - truth.row(k)).norm() / denom;
        }
        total += fold_sum / held.len() as f64;
    }
    Ok(total / folds.len() as f64)
}

/// Grid search over `spec.grid`; ties resolve to the earliest grid entry.
pub fn tune(spec: &TuningSpec, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<TuningReport> {
    if spec.grid.is_empty() {
        return Err(Error::Empty("tuning grid"));
    }
    let folds = match spec.objective {
        Objective::CrossVal => {
            if spec.folds < 2 || spec.folds > inputs.nrows() {
                return Err(Error::InvalidParameter(format!(
                    "cross-validation needs 2 <= folds <= N (folds = {}, N = {})",
                    spec.folds,
                    inputs.nrows()
                )));
            }
            cross_validation_folds(inputs.nrows(), spec.folds, spec.seed)
        }
        Objective::LogMarginalLikelihood => Vec::new(),
    };
    let mut scores = Vec::with_capacity(spec.grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, candidate) in spec.grid.iter().enumerate() {
        let result = match spec.objective {
            Objective::CrossVal => cross_val_score(candidate, inputs, targets, &folds),
            Objective::LogMarginalLikelihood => {
                log_marginal_likelihood(&candidate.kernel, inputs, targets, candidate.gamma)
            }
        };
        match result {
            Ok(score) if score.is_finite() => {
                let better = match (best, spec.objective) {
                    (None, _) => true,
                    (Some((_, b)), Objective::CrossVal) => score < b,
                    (Some((_, b)), Objective::LogMarginalLikelihood) => score > b,
                };
                if better {
                    best = Some((idx, score));
                }
                log::info!("tuning {} gamma={:e}: {score}", candidate.kernel.label(), candidate.gamma);
                scores.push(CandidateScore {
                    candidate: candidate.clone(),
                    score: Some(score),
                    error: None,
                });
            }
            Ok(score) => scores.push(CandidateScore {
                candidate: candidate.clone(),
                score: None,
                error: Some(format!("non-finite objective {score}")),
            }),
            Err(e) => {
                log::info!("tuning {} gamma={:e}: failed ({e})", candidate.kernel.label(), candidate.gamma);
                scores.push(CandidateScore {
                    candidate: candidate.clone(),
                    score: None,
                    error: Some(e.to_string()),
                })
            }
        }
    }
    let (best_index, best_score) = best.ok_or_else(|| {
        Error::InvalidParameter("every tuning candidate failed to factorize".into())
    })?;
    Ok(TuningReport {
        objective: spec.objective,
        best: spec.grid[best_index].clone(),
        best_index,
        best_score,
        scores,
    })
}
