//! Run configuration: a single JSON file, with command-line flags taking precedence.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use odl_core::data::{
    gen_advection1, gen_advection2, gen_burgers, gen_darcy, load_dataset, BurgersParams, Dataset,
    DatasetManifest,
};
use odl_core::metrics::DEFAULT_KERNEL_COST_PER_COORD;
use odl_core::operator::{OperatorConfig, PreconditionerKind};
use odl_core::regression::TuningSpec;
use odl_core::ScalarKernel;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "ODL_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Advection1,
    Advection2,
    Burgers,
    Darcy,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Advection1 => "advection1",
            Problem::Advection2 => "advection2",
            Problem::Burgers => "burgers",
            Problem::Darcy => "darcy",
        }
    }

    pub fn default_grid_size(self) -> usize {
        match self {
            Problem::Advection1 => 40,
            Problem::Advection2 => 200,
            Problem::Burgers => 128,
            Problem::Darcy => 29,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub problem: Problem,
    pub train: usize,
    pub test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    /// Burgers viscosity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Burgers final time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
}

impl GeneratorSpec {
    pub fn generate(&self, seed: u64) -> odl_core::Result<Dataset> {
        let n = self.grid_size.unwrap_or(self.problem.default_grid_size());
        match self.problem {
            Problem::Advection1 => gen_advection1(self.train, self.test, n, seed),
            Problem::Advection2 => gen_advection2(self.train, self.test, n, seed),
            Problem::Darcy => gen_darcy(self.train, self.test, n, seed),
            Problem::Burgers => {
                let defaults = BurgersParams::default();
                let params = BurgersParams {
                    grid_size: n,
                    nu: self.nu.unwrap_or(defaults.nu),
                    t_final: self.t_final.unwrap_or(defaults.t_final),
                };
                gen_burgers(self.train, self.test, &params, seed)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path of an ODL dataset directory; relative paths resolve against `ODL_DATA_DIR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Generate the dataset in memory instead of loading it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    /// Regression kernel; may be omitted when `tuning` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<ScalarKernel>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub preconditioner: PreconditionerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_kernel: Option<ScalarKernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_kernel: Option<ScalarKernel>,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kernel_cost")]
    pub kernel_cost_per_coord: u64,
    /// Sweep variants: objects whose keys override the fields above.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<serde_json::Value>,
}

fn default_kernel_cost() -> u64 {
    DEFAULT_KERNEL_COST_PER_COORD
}

/// Fields a sweep variant may not override.
const FIXED_FIELDS: [&str; 5] = ["dataset", "generator", "seed", "output_dir", "variants"];

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.dataset, &self.generator) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "config must set exactly one of `dataset` and `generator`, found both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "config must set exactly one of `dataset` and `generator`".into(),
                ))
            }
            _ => {}
        }
        if self.kernel.is_none() && self.tuning.is_none() && self.variants.is_empty() {
            return Err(CliError::Usage("config needs a `kernel` or a `tuning` grid".into()));
        }
        if let Some(t) = &self.tuning {
            if t.grid.is_empty() {
                return Err(CliError::Usage("tuning grid is empty".into()));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(CliError::Usage(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        for (name, f) in [
            ("input_fraction", self.pca.input_fraction),
            ("output_fraction", self.pca.output_fraction),
        ] {
            if let Some(f) = f {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(CliError::Usage(format!("pca.{name} must lie in (0, 1], got {f}")));
                }
            }
        }
        if self.pca.enabled && self.pca.input_fraction.is_none() && self.pca.output_fraction.is_none() {
            return Err(CliError::Usage(
                "pca.enabled needs input_fraction and/or output_fraction".into(),
            ));
        }
        Ok(())
    }

    /// Dataset path with `ODL_DATA_DIR` applied to relative paths.
    pub fn resolved_dataset_path(&self) -> Option<PathBuf> {
        self.dataset.as_ref().map(|p| resolve_data_path(p))
    }

    pub fn operator_config(&self) -> OperatorConfig {
        let kernel = match (&self.kernel, &self.tuning) {
            (Some(k), _) => k.clone(),
            (None, Some(t)) => t.grid[0].kernel.clone(),
            (None, None) => ScalarKernel::linear(),
        };
        let (pca_input, pca_output) = if self.pca.enabled {
            (self.pca.input_fraction, self.pca.output_fraction)
        } else {
            (None, None)
        };
        OperatorConfig {
            kernel,
            gamma: self.gamma,
            preconditioner: self.preconditioner,
            input_kernel: self.input_kernel.clone(),
            output_kernel: self.output_kernel.clone(),
            pca_input,
            pca_output,
        }
    }

    /// Tuning spec with the run seed applied.
    pub fn tuning_spec(&self) -> Option<TuningSpec> {
        self.tuning.clone().map(|mut t| {
            t.seed = self.seed;
            t
        })
    }

    /// The base config with one variant's keys applied.
    pub fn with_variant(&self, variant: &serde_json::Value) -> Result<(String, RunConfig), String> {
        let obj = variant
            .as_object()
            .ok_or_else(|| "variant must be a JSON object".to_string())?;
        let mut base = self.clone();
        base.variants.clear();
        let mut value = serde_json::to_value(&base).map_err(|e| e.to_string())?;
        let target = value.as_object_mut().expect("config serializes to an object");
        let mut label = None;
        for (k, v) in obj {
            if k == "label" {
                label = v.as_str().map(str::to_string);
                continue;
            }
            if FIXED_FIELDS.contains(&k.as_str()) {
                return Err(format!("variants cannot override `{k}`"));
            }
            target.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        let label = label.unwrap_or_else(|| variant_label(&cfg));
        Ok((label, cfg))
    }
}

fn variant_label(cfg: &RunConfig) -> String {
    let kernel = match &cfg.kernel {
        Some(k) => k.label(),
        None => "tuned".to_string(),
    };
    let mut label = format!("{kernel} gamma={:e}", cfg.gamma);
    if cfg.preconditioner == PreconditionerKind::Cholesky {
        label.push_str(" cholesky");
    }
    if cfg.pca.enabled {
        label.push_str(&format!(
            " pca({},{})",
            fraction_label(cfg.pca.input_fraction),
            fraction_label(cfg.pca.output_fraction)
        ));
    }
    label
}

pub fn fraction_label(f: Option<f64>) -> String {
    f.map_or_else(|| "-".to_string(), |f| f.to_string())
}

pub fn resolve_data_path(p: &Path) -> PathBuf {
    if p.is_relative() {
        if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
            return PathBuf::from(root).join(p);
        }
    }
    p.to_path_buf()
}

/// A dataset together with its manifest as it is (or would be) written to disk.
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub manifest: DatasetManifest,
    pub source: String,
}

pub fn load_dataset_dir(path: &Path) -> Result<LoadedDataset, CliError> {
    if !path.join("manifest.json").is_file() {
        return Err(CliError::Usage(format!(
            "dataset not found: {} has no manifest.json",
            path.display()
        )));
    }
    let dataset = load_dataset(path)?;
    let manifest = DatasetManifest::read(path)?;
    Ok(LoadedDataset {
        dataset,
        manifest,
        source: path.display().to_string(),
    })
}

impl RunConfig {
    pub fn load_dataset(&self) -> Result<LoadedDataset, CliError> {
        if let Some(path) = self.resolved_dataset_path() {
            return load_dataset_dir(&path);
        }
        let spec = self
            .generator
            .as_ref()
            .ok_or_else(|| CliError::Usage("config has no dataset".into()))?;
        log::info!("generating {} in memory (seed {})", spec.problem.name(), self.seed);
        let dataset = spec.generate(self.seed)?;
        let manifest = DatasetManifest::for_dataset(&dataset);
        Ok(LoadedDataset {
            dataset,
            manifest,
            source: format!("generated:{}", spec.problem.name()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        serde_json::from_str(
            r#"{"generator": {"problem": "advection1", "train": 10, "test": 2},
                "kernel": {"family": "linear"}, "gamma": 1e-12}"#,
        )
        .unwrap()
    }

    #[test]
    fn exactly_one_dataset_source() {
        let mut cfg = base();
        cfg.validate().unwrap();
        cfg.dataset = Some("somewhere".into());
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
        cfg.dataset = None;
        cfg.generator = None;
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
    }

    #[test]
    fn fractions_checked() {
        let mut cfg = base();
        cfg.pca = PcaConfig {
            enabled: true,
            input_fraction: Some(1.5),
            output_fraction: None,
        };
        assert!(cfg.validate().is_err());
        cfg.pca.input_fraction = Some(1.0);
        cfg.validate().unwrap();
        assert_eq!(cfg.operator_config().pca_input, Some(1.0));
        cfg.pca.enabled = false;
        assert_eq!(cfg.operator_config().pca_input, None);
    }

    #[test]
    fn variant_overrides() {
        let cfg = base();
        let v = serde_json::json!({"label": "m", "kernel": {"family": "matern", "nu": 2.5, "lengthscale": 1.0}});
        let (label, merged) = cfg.with_variant(&v).unwrap();
        assert_eq!(label, "m");
        assert_eq!(merged.gamma, 1e-12);
        assert!(!merged.kernel.unwrap().is_linear());
        assert!(cfg.with_variant(&serde_json::json!({"seed": 3})).is_err());
        assert!(cfg.with_variant(&serde_json::json!({"gamma": -1.0})).is_err());
        assert!(cfg.with_variant(&serde_json::json!(5)).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"dataset": "x", "gama": 1}"#);
        assert!(err.is_err());
    }
}
