//! The assembled operator `chi . f . phi` and its persisted form.
//!
//! Inputs are measured with `phi = L_Q u(X)` (optionally followed by PCA),
//! mapped by the kernel ridge regressor, mapped back from output PCA
//! coordinates, and recovered as functions with `chi`, the optimal recovery
//! map of kernel `K` from `phi_out = L_K v(Y)`.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{check_version, read_f64, read_matrix, write_f64, write_matrix, Dataset, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::kernels::{median_pairwise_distance, ScalarKernel};
use crate::metrics::PipelineShape;
use crate::preprocess::PcaProjector;
use crate::recovery::{FunctionSamples, MeasurementOperator, Preconditioner, RecoveryMap};
use crate::regression::{tune, Solver, TrainedRegressor, TuningReport, TuningSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    #[default]
    None,
    Cholesky,
}

/// Hyperparameters of an operator model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    /// Regression kernel `S`.
    pub kernel: ScalarKernel,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub preconditioner: PreconditionerKind,
    /// Input-space kernel `Q`; defaults to Matern 5/2 at the median point distance of `X`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_kernel: Option<ScalarKernel>,
    /// Output-space kernel `K`; defaults to Matern 5/2 at the median point distance of `Y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_kernel: Option<ScalarKernel>,
    /// Retained variance fraction of input PCA, if enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_input: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_output: Option<f64>,
}

impl OperatorConfig {
    pub fn new(kernel: ScalarKernel, gamma: f64) -> Self {
        OperatorConfig {
            kernel,
            gamma,
            preconditioner: PreconditionerKind::None,
            input_kernel: None,
            output_kernel: None,
            pca_input: None,
            pca_output: None,
        }
    }

    pub fn with_cholesky(mut self) -> Self {
        self.preconditioner = PreconditionerKind::Cholesky;
        self
    }

    pub fn with_pca(mut self, input: Option<f64>, output: Option<f64>) -> Self {
        self.pca_input = input;
        self.pca_output = output;
        self
    }
}

/// Matern 5/2 at the median pairwise distance of `points`.
pub fn default_space_kernel(points: &DMatrix<f64>) -> Result<ScalarKernel> {
    let d = median_pairwise_distance(points);
    ScalarKernel::matern(2.5, if d > 0.0 && d.is_finite() { d } else { 1.0 })
}

#[derive(Clone, Debug)]
pub struct OperatorModel {
    config: OperatorConfig,
    input_measurement: MeasurementOperator,
    input_recovery: RecoveryMap,
    input_pca: Option<PcaProjector>,
    regressor: TrainedRegressor,
    output_pca: Option<PcaProjector>,
    output_measurement: MeasurementOperator,
    output_recovery: RecoveryMap,
}

fn measurement(
    points: &DMatrix<f64>,
    kernel: &ScalarKernel,
    kind: PreconditionerKind,
    label: &str,
) -> Result<MeasurementOperator> {
    let op = MeasurementOperator::pointwise(points.clone(), label)?;
    match kind {
        PreconditionerKind::None => Ok(op),
        PreconditionerKind::Cholesky => op.with_cholesky(kernel, None),
    }
}

/// Applies `L` to every row of a sample-major matrix.
fn precondition_rows(op: &MeasurementOperator, rows: &DMatrix<f64>) -> DMatrix<f64> {
    match op.preconditioner() {
        Preconditioner::Identity => rows.clone(),
        Preconditioner::Matrix { forward, .. } => rows * forward.transpose(),
    }
}

fn check_columns(m: &DMatrix<f64>, expected: usize, context: &'static str) -> Result<()> {
    if m.ncols() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found: m.ncols(),
        });
    }
    Ok(())
}

/// Measurement operators, PCA projectors and encoded training data.
struct Prepared {
    config: OperatorConfig,
    phi: MeasurementOperator,
    phi_out: MeasurementOperator,
    input_pca: Option<PcaProjector>,
    output_pca: Option<PcaProjector>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl Prepared {
    fn new(
        config: &OperatorConfig,
        input_grid: &DMatrix<f64>,
        train_inputs: &DMatrix<f64>,
        output_grid: &DMatrix<f64>,
        train_outputs: &DMatrix<f64>,
    ) -> Result<Self> {
        check_columns(train_inputs, input_grid.nrows(), "training input samples")?;
        check_columns(train_outputs, output_grid.nrows(), "training output samples")?;
        for f in [config.pca_input, config.pca_output].into_iter().flatten() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "PCA fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        let mut config = config.clone();
        let q = match &config.input_kernel {
            Some(k) => k.clone(),
            None => default_space_kernel(input_grid)?,
        };
        let k = match &config.output_kernel {
            Some(k) => k.clone(),
            None => default_space_kernel(output_grid)?,
        };
        config.input_kernel = Some(q.clone());
        config.output_kernel = Some(k.clone());

        let phi = measurement(input_grid, &q, config.preconditioner, "phi")?;
        let phi_out = measurement(output_grid, &k, config.preconditioner, "phi_out")?;
        let measured_in = precondition_rows(&phi, train_inputs);
        let measured_out = precondition_rows(&phi_out, train_outputs);

        let input_pca = config
            .pca_input
            .map(|f| PcaProjector::fit(&measured_in, f))
            .transpose()?;
        let output_pca = config
            .pca_output
            .map(|f| PcaProjector::fit(&measured_out, f))
            .transpose()?;
        let u = match &input_pca {
            Some(p) => p.project_rows(&measured_in)?,
            None => measured_in,
        };
        let v = match &output_pca {
            Some(p) => p.project_rows(&measured_out)?,
            None => measured_out,
        };
        Ok(Prepared {
            config,
            phi,
            phi_out,
            input_pca,
            output_pca,
            u,
            v,
        })
    }

    fn finish(self) -> Result<OperatorModel> {
        let Prepared {
            config,
            phi,
            phi_out,
            input_pca,
            output_pca,
            u,
            v,
        } = self;
        let regressor = TrainedRegressor::fit(config.kernel.clone(), u, v, config.gamma)?;
        log::info!(
            "fitted operator: n = {}, m = {}, N = {}, gamma = {:.3e}",
            regressor.input_dim(),
            regressor.output_dim(),
            regressor.train_count(),
            regressor.gamma()
        );
        let q = config.input_kernel.clone().expect("resolved input kernel");
        let k = config.output_kernel.clone().expect("resolved output kernel");
        Ok(OperatorModel {
            input_recovery: RecoveryMap::new(q, phi.clone())?,
            output_recovery: RecoveryMap::new(k, phi_out.clone())?,
            config,
            input_measurement: phi,
            input_pca,
            regressor,
            output_pca,
            output_measurement: phi_out,
        })
    }
}

impl OperatorModel {
    /// Fits on sample-major training matrices (`train_inputs` rows on `input_grid`,
    /// `train_outputs` rows on `output_grid`).
    pub fn fit(
        config: &OperatorConfig,
        input_grid: &DMatrix<f64>,
        train_inputs: &DMatrix<f64>,
        output_grid: &DMatrix<f64>,
        train_outputs: &DMatrix<f64>,
    ) -> Result<Self> {
        Prepared::new(config, input_grid, train_inputs, output_grid, train_outputs)?.finish()
    }

    /// Selects `(S, gamma)` from `spec.grid` on the encoded training data, then fits.
    /// The kernel and gamma in `config` are replaced by the winner.
    pub fn fit_tuned(
        config: &OperatorConfig,
        spec: &TuningSpec,
        input_grid: &DMatrix<f64>,
        train_inputs: &DMatrix<f64>,
        output_grid: &DMatrix<f64>,
        train_outputs: &DMatrix<f64>,
    ) -> Result<(Self, TuningReport)> {
        let mut prepared = Prepared::new(config, input_grid, train_inputs, output_grid, train_outputs)?;
        let report = tune(spec, &prepared.u, &prepared.v)?;
        prepared.config.kernel = report.best.kernel.clone();
        prepared.config.gamma = report.best.gamma;
        Ok((prepared.finish()?, report))
    }

    pub fn fit_dataset(config: &OperatorConfig, ds: &Dataset) -> Result<Self> {
        Self::fit(
            config,
            ds.input_grid.points(),
            &ds.train_inputs,
            ds.output_grid.points(),
            &ds.train_outputs,
        )
    }

    /// Configuration with the space kernels resolved.
    pub fn config(&self) -> &OperatorConfig {
        &self.config
    }

    pub fn input_measurement(&self) -> &MeasurementOperator {
        &self.input_measurement
    }

    pub fn input_recovery(&self) -> &RecoveryMap {
        &self.input_recovery
    }

    pub fn output_measurement(&self) -> &MeasurementOperator {
        &self.output_measurement
    }

    pub fn output_recovery(&self) -> &RecoveryMap {
        &self.output_recovery
    }

    pub fn regressor(&self) -> &TrainedRegressor {
        &self.regressor
    }

    pub fn input_pca(&self) -> Option<&PcaProjector> {
        self.input_pca.as_ref()
    }

    pub fn output_pca(&self) -> Option<&PcaProjector> {
        self.output_pca.as_ref()
    }

    pub fn input_grid(&self) -> &DMatrix<f64> {
        self.input_measurement.points()
    }

    pub fn output_grid(&self) -> &DMatrix<f64> {
        self.output_measurement.points()
    }

    pub fn shape(&self) -> PipelineShape {
        PipelineShape {
            input_points: self.input_measurement.len(),
            input_dim: self.regressor.input_dim(),
            input_encoded: self.config.preconditioner == PreconditionerKind::Cholesky
                || self.input_pca.is_some(),
            train_count: self.regressor.train_count(),
            output_dim: self.regressor.output_dim(),
        }
    }

    /// Regression input `PCA(L_Q u(X))` for one function.
    pub fn encode(&self, u: &FunctionSamples) -> Result<DVector<f64>> {
        let measured = self.input_measurement.measure(u)?;
        match &self.input_pca {
            Some(p) => p.project(measured.as_slice()),
            None => Ok(measured),
        }
    }

    /// Regression inputs for sample-major values on the training input grid.
    pub fn encode_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_columns(inputs, self.input_measurement.len(), "input samples")?;
        let measured = precondition_rows(&self.input_measurement, inputs);
        match &self.input_pca {
            Some(p) => p.project_rows(&measured),
            None => Ok(measured),
        }
    }

    fn decode_outputs(&self, z: DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.output_pca {
            Some(p) => p.reconstruct_rows(&z),
            None => Ok(z),
        }
    }

    /// Predicted output measurements `phi_out(v)` for one function.
    pub fn predict_measurements(&self, u: &FunctionSamples) -> Result<DVector<f64>> {
        let z = self.regressor.predict(self.encode(u)?.as_slice())?;
        let z = DMatrix::from_row_slice(1, z.len(), z.as_slice());
        Ok(self.decode_outputs(z)?.row(0).transpose())
    }

    /// Weights mapping output measurements to values at `query`.
    pub fn output_weights(&self, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.output_recovery.weights(query)
    }

    pub fn apply(&self, u: &FunctionSamples, query: &DMatrix<f64>) -> Result<FunctionSamples> {
        let v = self.predict_measurements(u)?;
        let w = self.output_weights(query)?;
        FunctionSamples::new(query.clone(), w * v)
    }

    /// Predictions for sample-major inputs on the training input grid, returned
    /// sample-major at `query`.
    pub fn predict_batch_at(&self, inputs: &DMatrix<f64>, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = self.regressor.predict_batch(&self.encode_batch(inputs)?)?;
        let v = self.decode_outputs(z)?;
        Ok(v * self.output_weights(query)?.transpose())
    }

    /// Predictions at the training output grid.
    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.predict_batch_at(inputs, &self.output_grid().clone())
    }

    /// Maps samples on a foreign grid through `psi_tilde`, re-measures on the
    /// training grid, then applies the operator.
    pub fn apply_mesh_invariant(
        &self,
        u: &FunctionSamples,
        phi_tilde: &MeasurementOperator,
        psi_tilde: &RecoveryMap,
        query: &DMatrix<f64>,
    ) -> Result<FunctionSamples> {
        if psi_tilde.measurement().points() != phi_tilde.points() {
            return Err(Error::InvalidParameter(
                "foreign recovery map must be built on the foreign measurement points".into(),
            ));
        }
        let measured = phi_tilde.measure(u)?;
        let w = psi_tilde.weights(self.input_grid())?;
        let on_native = FunctionSamples::new(self.input_grid().clone(), w * measured)?;
        self.apply(&on_native, query)
    }

    /// Identity-preconditioned measurement and `Q`-recovery on foreign points.
    pub fn foreign_maps(&self, points: &DMatrix<f64>) -> Result<(MeasurementOperator, RecoveryMap)> {
        let phi = MeasurementOperator::pointwise(points.clone(), "phi_tilde")?;
        let psi = RecoveryMap::new(self.input_recovery.kernel().clone(), phi.clone())?;
        Ok((phi, psi))
    }

    /// Conditional variance of the regression GP at `u`, clipped at zero.
    pub fn posterior_variance(&self, u: &FunctionSamples) -> Result<f64> {
        Ok(self.regressor.posterior_variance(self.encode(u)?.as_slice())?.max(0.0))
    }

    /// Mean and pointwise standard deviation `sqrt(s) |w(y)|` of the pushed-forward GP.
    pub fn apply_with_uq(
        &self,
        u: &FunctionSamples,
        query: &DMatrix<f64>,
    ) -> Result<(FunctionSamples, FunctionSamples)> {
        let mean = self.apply(u, query)?;
        let s = self.posterior_variance(u)?;
        let mut w = self.output_weights(query)?;
        if let Some(p) = &self.output_pca {
            w *= p.basis();
        }
        let std = DVector::from_iterator(query.nrows(), w.row_iter().map(|r| s.sqrt() * r.norm()));
        Ok((mean, FunctionSamples::new(query.clone(), std)?))
    }

    /// `sqrt(m s(u)) R`: worst-case regression error in measurement space over
    /// targets with RKHS norm at most `R`.
    pub fn error_bound(&self, u: &FunctionSamples, rkhs_norm_bound: f64) -> Result<f64> {
        if !(rkhs_norm_bound >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "RKHS norm bound must be nonnegative, got {rkhs_norm_bound}"
            )));
        }
        if rkhs_norm_bound == 0.0 {
            return Ok(0.0);
        }
        let m = self.regressor.output_dim() as f64;
        Ok((m * self.posterior_variance(u)?).sqrt() * rkhs_norm_bound)
    }

    /// Writes `manifest.json` plus little-endian f64 binaries into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let reg = &self.regressor;
        write_matrix(&dir.join("input_grid.bin"), self.input_grid())?;
        write_matrix(&dir.join("output_grid.bin"), self.output_grid())?;
        write_matrix(&dir.join("regression_inputs.bin"), reg.inputs())?;
        write_matrix(&dir.join("regression_targets.bin"), reg.targets())?;
        let (solver, factor) = match reg.solver() {
            Solver::Dual { factor, coefficients } => {
                write_matrix(&dir.join("coefficients.bin"), coefficients)?;
                ("dual", factor)
            }
            Solver::Primal { factor, weights } => {
                write_matrix(&dir.join("weights.bin"), weights)?;
                ("primal", factor)
            }
        };
        write_matrix(&dir.join("ridge_factor.bin"), &factor.l())?;
        for (op, name) in [
            (&self.input_measurement, "input_preconditioner"),
            (&self.output_measurement, "output_preconditioner"),
        ] {
            if let Preconditioner::Matrix { forward, inverse } = op.preconditioner() {
                write_matrix(&dir.join(format!("{name}.bin")), forward)?;
                write_matrix(&dir.join(format!("{name}_inverse.bin")), inverse)?;
            }
        }
        for (pca, name) in [(&self.input_pca, "pca_input"), (&self.output_pca, "pca_output")] {
            if let Some(p) = pca {
                let basis = p.basis().transpose();
                let values = p
                    .mean()
                    .iter()
                    .copied()
                    .chain(basis.iter().copied())
                    .chain(p.singular_values().iter().copied());
                write_f64(&dir.join(format!("{name}.bin")), values)?;
            }
        }
        let pca_entry = |p: &PcaProjector, file: &str| PcaEntry {
            file: file.to_string(),
            dim: p.input_dim(),
            components: p.components(),
            retained_fraction: p.retained_fraction(),
            achieved_fraction: p.achieved_fraction(),
        };
        let manifest = ModelManifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            gamma_effective: reg.gamma(),
            solver: solver.to_string(),
            input_points: self.input_measurement.len(),
            input_space_dim: self.input_grid().ncols(),
            output_points: self.output_measurement.len(),
            output_space_dim: self.output_grid().ncols(),
            train_count: reg.train_count(),
            regression_input_dim: reg.input_dim(),
            regression_output_dim: reg.output_dim(),
            input_nugget: self.input_recovery.nugget(),
            output_nugget: self.output_recovery.nugget(),
            pca_input: self.input_pca.as_ref().map(|p| pca_entry(p, "pca_input.bin")),
            pca_output: self.output_pca.as_ref().map(|p| pca_entry(p, "pca_output.bin")),
            binary_layout: "little-endian f64, matrices row-major; PCA files hold mean, \
                            basis (dim x components, row-major), singular values"
                .to_string(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        check_version(&value, "model manifest")?;
        let mf: ModelManifest = serde_json::from_value(value)?;
        let (q, k) = match (&mf.config.input_kernel, &mf.config.output_kernel) {
            (Some(q), Some(k)) => (q.clone(), k.clone()),
            _ => return Err(Error::Format("model manifest lacks space kernels".into())),
        };
        let x = read_matrix(&dir.join("input_grid.bin"), mf.input_points, mf.input_space_dim)?;
        let y = read_matrix(&dir.join("output_grid.bin"), mf.output_points, mf.output_space_dim)?;
        let (n, m, big_n) = (mf.regression_input_dim, mf.regression_output_dim, mf.train_count);
        let inputs = read_matrix(&dir.join("regression_inputs.bin"), big_n, n)?;
        let targets = read_matrix(&dir.join("regression_targets.bin"), big_n, m)?;
        let solver = match mf.solver.as_str() {
            "dual" => Solver::Dual {
                factor: Cholesky::pack_dirty(read_matrix(&dir.join("ridge_factor.bin"), big_n, big_n)?),
                coefficients: read_matrix(&dir.join("coefficients.bin"), big_n, m)?,
            },
            "primal" => Solver::Primal {
                factor: Cholesky::pack_dirty(read_matrix(&dir.join("ridge_factor.bin"), n, n)?),
                weights: read_matrix(&dir.join("weights.bin"), n, m)?,
            },
            other => return Err(Error::Format(format!("unknown solver '{other}'"))),
        };
        let regressor =
            TrainedRegressor::from_parts(mf.config.kernel.clone(), inputs, targets, mf.gamma_effective, solver)?;
        let load_op = |points: DMatrix<f64>, name: &str, label: &str| -> Result<MeasurementOperator> {
            let op = MeasurementOperator::pointwise(points, label)?;
            match mf.config.preconditioner {
                PreconditionerKind::None => Ok(op),
                PreconditionerKind::Cholesky => {
                    let len = op.len();
                    let forward = read_matrix(&dir.join(format!("{name}.bin")), len, len)?;
                    let inverse = read_matrix(&dir.join(format!("{name}_inverse.bin")), len, len)?;
                    op.with_preconditioner(Preconditioner::Matrix { forward, inverse })
                }
            }
        };
        let phi = load_op(x, "input_preconditioner", "phi")?;
        let phi_out = load_op(y, "output_preconditioner", "phi_out")?;
        let load_pca = |entry: &Option<PcaEntry>| -> Result<Option<PcaProjector>> {
            let Some(e) = entry else { return Ok(None) };
            let (d, c) = (e.dim, e.components);
            let raw = read_f64(&dir.join(&e.file), d + d * c + c)?;
            let mean = DVector::from_column_slice(&raw[..d]);
            let basis = DMatrix::from_row_slice(d, c, &raw[d..d + d * c]);
            let sv = DVector::from_column_slice(&raw[d + d * c..]);
            PcaProjector::from_parts(mean, basis, sv, e.retained_fraction, e.achieved_fraction).map(Some)
        };
        Ok(OperatorModel {
            input_recovery: RecoveryMap::with_nugget(q, phi.clone(), mf.input_nugget)?,
            output_recovery: RecoveryMap::with_nugget(k, phi_out.clone(), mf.output_nugget)?,
            input_pca: load_pca(&mf.pca_input)?,
            output_pca: load_pca(&mf.pca_output)?,
            config: mf.config,
            input_measurement: phi,
            regressor,
            output_measurement: phi_out,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PcaEntry {
    file: String,
    dim: usize,
    components: usize,
    retained_fraction: f64,
    achieved_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    config: OperatorConfig,
    gamma_effective: f64,
    solver: String,
    input_points: usize,
    input_space_dim: usize,
    output_points: usize,
    output_space_dim: usize,
    train_count: usize,
    regression_input_dim: usize,
    regression_output_dim: usize,
    input_nugget: f64,
    output_nugget: f64,
    pca_input: Option<PcaEntry>,
    pca_output: Option<PcaEntry>,
    binary_layout: String,
}
