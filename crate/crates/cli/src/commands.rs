use std::path::{Path, PathBuf};

use odl_core::data::save_dataset;
use odl_core::regression::{Objective, TuningReport};
use odl_core::OperatorModel;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_dataset_dir, resolve_data_path, GeneratorSpec, LoadedDataset, Problem, RunConfig, DATA_DIR_ENV};
use crate::report::{
    evaluate, manifest_sha256, write_csv, write_json, CsvRow, EvalOptions, ModelSummary, Split, REPORT_VERSION,
};
use crate::CliError;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

pub struct GenerateArgs {
    pub problem: Problem,
    pub train: usize,
    pub test: usize,
    pub grid_size: Option<usize>,
    pub nu: Option<f64>,
    pub t_final: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let out = match args.out {
        Some(p) => p,
        None => match std::env::var_os(DATA_DIR_ENV) {
            Some(root) => PathBuf::from(root).join(format!("{}-seed{}", args.problem.name(), args.seed)),
            None => return Err(CliError::Usage(format!("--out is required when {DATA_DIR_ENV} is unset"))),
        },
    };
    let spec = GeneratorSpec {
        problem: args.problem,
        train: args.train,
        test: args.test,
        grid_size: args.grid_size,
        nu: args.nu,
        t_final: args.t_final,
    };
    let ds = spec.generate(args.seed)?;
    let manifest = save_dataset(&ds, &out)?;
    println!("wrote {} to {}", manifest.name, out.display());
    println!("  seed            {}", manifest.seed);
    println!("  splits          train {} / test {}", manifest.splits.train, manifest.splits.test);
    println!("  input grid      {:?}", manifest.grids.input.shape);
    println!("  output grid     {:?}", manifest.grids.output.shape);
    println!("  manifest sha256 {}", manifest_sha256(&manifest));
    println!("  provenance      {}", manifest.provenance);
    Ok(())
}

/// Applies flag overrides (flags win) and validates.
pub fn resolve_config(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::read(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = Some(o);
    }
    if let Some(d) = dataset {
        cfg.dataset = Some(d);
        cfg.generator = None;
    }
    cfg.validate()?;
    // record the path actually used so saved configs are self-contained
    cfg.dataset = cfg.resolved_dataset_path();
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.output_dir
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir".into()))
}

pub fn fit(cfg: &RunConfig, data: &LoadedDataset) -> Result<(OperatorModel, Option<TuningReport>), CliError> {
    let ds = &data.dataset;
    let op = cfg.operator_config();
    match cfg.tuning_spec() {
        None => Ok((OperatorModel::fit_dataset(&op, ds)?, None)),
        Some(spec) => {
            let (model, report) = OperatorModel::fit_tuned(
                &op,
                &spec,
                ds.input_grid.points(),
                &ds.train_inputs,
                ds.output_grid.points(),
                &ds.train_outputs,
            )?;
            Ok((model, Some(report)))
        }
    }
}

#[derive(Serialize)]
struct TrainReport<'a> {
    report_version: u32,
    command: &'static str,
    config: &'a RunConfig,
    dataset: &'a str,
    dataset_source: &'a str,
    dataset_manifest_sha256: String,
    model: ModelSummary,
    training_residual: f64,
    rkhs_norm_squared: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuning: Option<&'a TuningReport>,
}

fn print_tuning(report: &TuningReport) {
    let (name, rule) = match report.objective {
        Objective::CrossVal => ("cv error", "argmin"),
        Objective::LogMarginalLikelihood => ("log marginal likelihood", "argmax"),
    };
    println!("tuning grid ({} candidates, objective: {name})", report.scores.len());
    for (i, s) in report.scores.iter().enumerate() {
        let value = match (&s.score, &s.error) {
            (Some(v), _) => format!("{v:.10e}"),
            (None, Some(e)) => format!("failed: {e}"),
            (None, None) => "n/a".into(),
        };
        let mark = if i == report.best_index { " <- selected" } else { "" };
        println!(
            "  [{i:>2}] {} gamma={:e}: {value}{mark}",
            s.candidate.kernel.label(),
            s.candidate.gamma
        );
    }
    println!(
        "selected [{}] ({rule}): {} gamma={:e}, {name} {:.10e}",
        report.best_index,
        report.best.kernel.label(),
        report.best.gamma,
        report.best_score
    );
}

pub fn train(cfg: RunConfig) -> Result<(), CliError> {
    if cfg.kernel.is_none() && cfg.tuning.is_none() {
        return Err(CliError::Usage("train needs a `kernel` or a `tuning` grid".into()));
    }
    let out = output_dir(&cfg)?;
    let data = cfg.load_dataset()?;
    let (model, tuning) = fit(&cfg, &data)?;
    if let Some(t) = &tuning {
        print_tuning(t);
    }
    let residual = evaluate(
        &model,
        &data,
        &cfg,
        &EvalOptions {
            split: Split::Train,
            with_uq: false,
            flops: false,
        },
    )?
    .mean_relative_l2;
    let summary = ModelSummary::of(&model);
    let rkhs = model.regressor().rkhs_norm_squared();
    model.save(&out)?;
    write_json(&out.join(RUN_CONFIG_FILE), &cfg)?;
    let report = TrainReport {
        report_version: REPORT_VERSION,
        command: "train",
        config: &cfg,
        dataset: &data.dataset.name,
        dataset_source: &data.source,
        dataset_manifest_sha256: manifest_sha256(&data.manifest),
        model: summary.clone(),
        training_residual: residual,
        rkhs_norm_squared: rkhs,
        tuning: tuning.as_ref(),
    };
    write_json(&out.join("train_report.json"), &report)?;
    println!("trained on {} ({} samples)", data.dataset.name, summary.train_count);
    println!("  kernel S        {}", summary.kernel);
    println!("  gamma           {:e}", summary.gamma);
    println!("  preconditioner  {:?}", summary.preconditioner);
    println!("  input kernel Q  {}", summary.input_kernel);
    println!("  output kernel K {}", summary.output_kernel);
    if let Some(k) = summary.pca_input_components {
        println!("  input PCA       {k} components");
    }
    if let Some(k) = summary.pca_output_components {
        println!("  output PCA      {k} components");
    }
    println!("training interpolation residual (mean relative L2): {residual:.6e}");
    println!("rkhs_norm_squared: {rkhs:.10e}");
    println!("model saved to {}", out.display());
    Ok(())
}

pub struct EvalArgs {
    pub model: PathBuf,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub opts: EvalOptions,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    if !args.model.join("manifest.json").is_file() {
        return Err(CliError::Usage(format!("no model found in {}", args.model.display())));
    }
    let model = OperatorModel::load(&args.model)?;
    let cfg_path = args.model.join(RUN_CONFIG_FILE);
    let mut cfg = RunConfig::read(&cfg_path)?;
    let data = match &args.dataset {
        Some(p) => {
            let p = resolve_data_path(p);
            cfg.dataset = Some(p.clone());
            cfg.generator = None;
            load_dataset_dir(&p)?
        }
        None => cfg.load_dataset()?,
    };
    let report = evaluate(&model, &data, &cfg, &args.opts)?;
    let out = args.out.unwrap_or_else(|| args.model.clone());
    std::fs::create_dir_all(&out)?;
    let stem = format!("eval_{}", args.opts.split.name());
    write_json(&out.join(format!("{stem}.json")), &report)?;
    write_csv(&out.join(format!("{stem}.csv")), &[CsvRow::from_report("eval", "", &report)])?;
    println!(
        "{} {} split: mean relative L2 {:.6e} over {} samples",
        report.dataset,
        args.opts.split.name(),
        report.mean_relative_l2,
        report.per_sample.len()
    );
    if let Some(uq) = &report.uq {
        println!("predictive std: mean {:.6e}, max {:.6e}", uq.mean_std, uq.max_std);
    }
    if let Some(f) = &report.flops {
        println!("inference flops per query function: {}", f.per_query_flops);
    }
    println!("report written to {}", out.join(format!("{stem}.{{json,csv}}")).display());
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    report_version: u32,
    command: &'static str,
    config: &'a RunConfig,
    dataset: &'a str,
    dataset_source: &'a str,
    dataset_manifest_sha256: &'a str,
    rows: &'a [CsvRow],
}

fn run_variant(
    index: usize,
    variant: &serde_json::Value,
    base: &RunConfig,
    data: &LoadedDataset,
    dir: &Path,
) -> CsvRow {
    let id = format!("{index}");
    let sha = manifest_sha256(&data.manifest);
    let (label, cfg) = match base.with_variant(variant) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("variant {index}: {e}");
            let label = variant.get("label").and_then(|l| l.as_str()).unwrap_or("").to_string();
            return CsvRow::failure(&id, &label, e, variant.to_string(), &data.dataset.name, &sha);
        }
    };
    let result = (|| {
        let (model, _) = fit(&cfg, data)?;
        let model_dir = dir.join(format!("variant-{index}"));
        model.save(&model_dir)?;
        write_json(&model_dir.join(RUN_CONFIG_FILE), &cfg)?;
        let opts = EvalOptions {
            split: Split::Test,
            with_uq: false,
            flops: true,
        };
        evaluate(&model, data, &cfg, &opts)
    })();
    match result {
        Ok(report) => CsvRow::from_report(&id, &label, &report),
        Err(e) => {
            log::warn!("variant {index} ({label}) failed: {e}");
            let config = serde_json::to_string(&cfg).expect("config serializes");
            CsvRow::failure(&id, &label, e.to_string(), config, &data.dataset.name, &sha)
        }
    }
}

pub fn sweep(cfg: RunConfig, jobs: usize) -> Result<(), CliError> {
    if cfg.variants.is_empty() {
        return Err(CliError::Usage("sweep needs at least one entry in `variants`".into()));
    }
    let out = output_dir(&cfg)?;
    std::fs::create_dir_all(&out)?;
    let data = cfg.load_dataset()?;
    let run = |(i, v): (usize, &serde_json::Value)| run_variant(i, v, &cfg, &data, &out);
    let rows: Vec<CsvRow> = if jobs <= 1 {
        cfg.variants.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        pool.install(|| cfg.variants.par_iter().enumerate().map(run).collect())
    };
    write_csv(&out.join("cost_accuracy.csv"), &rows)?;
    let sha = manifest_sha256(&data.manifest);
    write_json(
        &out.join("sweep_report.json"),
        &SweepReport {
            report_version: REPORT_VERSION,
            command: "sweep",
            config: &cfg,
            dataset: &data.dataset.name,
            dataset_source: &data.source,
            dataset_manifest_sha256: &sha,
            rows: &rows,
        },
    )?;
    let ok = rows.iter().filter(|r| r.status == "ok").count();
    for r in &rows {
        match r.mean_rel_l2 {
            Some(e) => println!(
                "[{}] {}: mean relative L2 {e:.6e}, flops/query {}",
                r.variant,
                r.label,
                r.flops_per_query.unwrap_or(0)
            ),
            None => println!("[{}] {}: error: {}", r.variant, r.label, r.error),
        }
    }
    println!("{ok}/{} variants succeeded; wrote {}", rows.len(), out.join("cost_accuracy.csv").display());
    if ok == 0 {
        return Err(CliError::Runtime("every sweep variant failed".into()));
    }
    Ok(())
}
