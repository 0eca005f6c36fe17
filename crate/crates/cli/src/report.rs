//! Versioned JSON and CSV reports.

use std::path::Path;

use nalgebra::DMatrix;
use odl_core::data::{Dataset, DatasetManifest};
use odl_core::metrics::{count_inference_flops, relative_l2, FlopsReport, Quadrature};
use odl_core::operator::PreconditionerKind;
use odl_core::{FunctionSamples, OperatorModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{fraction_label, RunConfig};
use crate::CliError;

pub const REPORT_VERSION: u32 = 1;

/// SHA-256 of the manifest exactly as `save_dataset` writes it.
pub fn manifest_sha256(manifest: &DatasetManifest) -> String {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn select(self, ds: &Dataset) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self {
            Split::Train => (&ds.train_inputs, &ds.train_outputs),
            Split::Test => (&ds.test_inputs, &ds.test_outputs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqSummary {
    pub mean_std: f64,
    pub max_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kernel: String,
    pub gamma: f64,
    pub preconditioner: PreconditionerKind,
    pub input_kernel: String,
    pub output_kernel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_input_components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_output_components: Option<usize>,
    /// Regression input dimension.
    pub n: usize,
    /// Regression output dimension.
    pub m: usize,
    /// Training sample count.
    pub train_count: usize,
}

impl ModelSummary {
    pub fn of(model: &OperatorModel) -> Self {
        let reg = model.regressor();
        ModelSummary {
            kernel: reg.kernel().label(),
            gamma: reg.gamma(),
            preconditioner: model.config().preconditioner,
            input_kernel: model.input_recovery().kernel().label(),
            output_kernel: model.output_recovery().kernel().label(),
            pca_input_components: model.input_pca().map(|p| p.components()),
            pca_output_components: model.output_pca().map(|p| p.components()),
            n: reg.input_dim(),
            m: reg.output_dim(),
            train_count: reg.train_count(),
        }
    }

    pub fn preproc_label(&self, cfg: &RunConfig) -> String {
        let mut parts = Vec::new();
        if self.preconditioner == PreconditionerKind::Cholesky {
            parts.push("cholesky".to_string());
        }
        if cfg.pca.enabled {
            parts.push(format!(
                "pca({},{})",
                fraction_label(cfg.pca.input_fraction),
                fraction_label(cfg.pca.output_fraction)
            ));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub dataset: String,
    pub dataset_source: String,
    pub dataset_manifest_sha256: String,
    pub split: Split,
    pub model: ModelSummary,
    pub mean_relative_l2: f64,
    pub per_sample: Vec<f64>,
    pub quadrature: Quadrature,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uq: Option<UqSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops: Option<FlopsReport>,
}

pub struct EvalOptions {
    pub split: Split,
    pub with_uq: bool,
    pub flops: bool,
}

/// Checks that the model's grids match the dataset's, naming the sizes otherwise.
pub fn check_compatible(model: &OperatorModel, ds: &Dataset) -> Result<(), CliError> {
    let checks = [
        ("input grid points", model.input_grid(), ds.input_grid.points()),
        ("output grid points", model.output_grid(), ds.output_grid.points()),
    ];
    for (what, m, d) in checks {
        if m.shape() != d.shape() {
            return Err(CliError::Runtime(format!(
                "shape mismatch: model has {} {what} of dimension {}, dataset `{}` has {} of dimension {}",
                m.nrows(),
                m.ncols(),
                ds.name,
                d.nrows(),
                d.ncols()
            )));
        }
    }
    Ok(())
}

pub fn evaluate(
    model: &OperatorModel,
    data: &crate::config::LoadedDataset,
    config: &RunConfig,
    opts: &EvalOptions,
) -> Result<EvalReport, CliError> {
    let ds = &data.dataset;
    check_compatible(model, ds)?;
    let (inputs, truths) = opts.split.select(ds);
    let grid = ds.output_grid.points();
    let quadrature = Quadrature::for_dim(ds.output_grid.dim());
    let pred = model.predict_batch(inputs)?;
    let err = relative_l2(&pred, truths, grid, quadrature)?;
    let uq = if opts.with_uq {
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        for row in inputs.row_iter() {
            let u = FunctionSamples::new(model.input_grid().clone(), row.transpose())?;
            let (_, std) = model.apply_with_uq(&u, grid)?;
            for &s in std.values.iter() {
                sum += s;
                max = max.max(s);
                count += 1;
            }
        }
        Some(UqSummary {
            mean_std: if count > 0 { sum / count as f64 } else { 0.0 },
            max_std: max,
        })
    } else {
        None
    };
    let flops = opts
        .flops
        .then(|| count_inference_flops(&model.shape(), grid.nrows(), config.kernel_cost_per_coord));
    Ok(EvalReport {
        report_version: REPORT_VERSION,
        command: "eval".into(),
        config: config.clone(),
        dataset: ds.name.clone(),
        dataset_source: data.source.clone(),
        dataset_manifest_sha256: manifest_sha256(&data.manifest),
        split: opts.split,
        model: ModelSummary::of(model),
        mean_relative_l2: err.mean_relative_l2,
        per_sample: err.per_sample,
        quadrature: err.quadrature,
        uq,
        flops,
    })
}

/// One CSV row per evaluated model; failed sweep variants carry `status = error`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct CsvRow {
    pub variant: String,
    pub label: String,
    pub status: String,
    pub error: String,
    pub dataset: String,
    pub split: String,
    pub kernel: String,
    pub gamma: Option<f64>,
    pub preproc: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    #[serde(rename = "N")]
    pub train_count: Option<usize>,
    pub mean_rel_l2: Option<f64>,
    pub flops_per_query: Option<u64>,
    pub mean_std: Option<f64>,
    pub max_std: Option<f64>,
    pub report_version: u32,
    pub dataset_manifest_sha256: String,
    pub config: String,
}

impl CsvRow {
    pub fn from_report(variant: &str, label: &str, r: &EvalReport) -> Self {
        CsvRow {
            variant: variant.into(),
            label: label.into(),
            status: "ok".into(),
            error: String::new(),
            dataset: r.dataset.clone(),
            split: r.split.name().into(),
            kernel: r.model.kernel.clone(),
            gamma: Some(r.model.gamma),
            preproc: r.model.preproc_label(&r.config),
            n: Some(r.model.n),
            m: Some(r.model.m),
            train_count: Some(r.model.train_count),
            mean_rel_l2: Some(r.mean_relative_l2),
            flops_per_query: r.flops.as_ref().map(|f| f.per_query_flops),
            mean_std: r.uq.as_ref().map(|u| u.mean_std),
            max_std: r.uq.as_ref().map(|u| u.max_std),
            report_version: REPORT_VERSION,
            dataset_manifest_sha256: r.dataset_manifest_sha256.clone(),
            config: serde_json::to_string(&r.config).expect("config serializes"),
        }
    }

    pub fn failure(variant: &str, label: &str, error: String, config: String, dataset: &str, sha: &str) -> Self {
        CsvRow {
            variant: variant.into(),
            label: label.into(),
            status: "error".into(),
            error,
            dataset: dataset.into(),
            split: Split::Test.name().into(),
            report_version: REPORT_VERSION,
            dataset_manifest_sha256: sha.into(),
            config,
            ..CsvRow::default()
        }
    }
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
