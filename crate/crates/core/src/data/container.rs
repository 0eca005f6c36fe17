//! ODL dataset directories: `manifest.json` plus four raw little-endian f64 files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dataset, Grid, GridDescriptor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const FILES: [&str; 4] = [
    "train_inputs.bin",
    "train_outputs.bin",
    "test_inputs.bin",
    "test_outputs.bin",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub shape: Vec<usize>,
    #[serde(flatten)]
    pub descriptor: GridDescriptor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPair {
    pub input: GridEntry,
    pub output: GridEntry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub grids: GridPair,
    pub splits: Splits,
    pub dtype: String,
    pub endianness: String,
    pub provenance: String,
    pub rng: String,
}

impl DatasetManifest {
    pub fn for_dataset(ds: &Dataset) -> Self {
        let entry = |g: &Grid| GridEntry {
            shape: g.shape(),
            descriptor: g.descriptor().clone(),
        };
        DatasetManifest {
            format_version: FORMAT_VERSION,
            name: ds.name.clone(),
            seed: ds.seed,
            grids: GridPair {
                input: entry(&ds.input_grid),
                output: entry(&ds.output_grid),
            },
            splits: Splits {
                train: ds.train_count(),
                test: ds.test_count(),
            },
            dtype: "f64".into(),
            endianness: "little".into(),
            provenance: ds.provenance.clone(),
            rng: ds.rng.clone(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        check_version(&value, "dataset manifest")?;
        let manifest: DatasetManifest = serde_json::from_value(value)?;
        if manifest.dtype != "f64" || manifest.endianness != "little" {
            return Err(Error::Format(format!(
                "unsupported encoding dtype={} endianness={}",
                manifest.dtype, manifest.endianness
            )));
        }
        Ok(manifest)
    }
}

/// Rejects any `format_version` other than the supported one.
pub(crate) fn check_version(value: &serde_json::Value, what: &str) -> Result<()> {
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        Some(v) => Err(Error::Format(format!(
            "{what}: unsupported format_version {v} (expected {FORMAT_VERSION})"
        ))),
        None => Err(Error::Format(format!("{what}: missing format_version"))),
    }
}

/// Writes values as raw little-endian f64.
pub(crate) fn write_f64(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads exactly `count` little-endian f64 values.
pub(crate) fn read_f64(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {} bytes",
            path.display(),
            count * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Row-major (sample-major) write of a matrix.
pub(crate) fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_f64(path, m.transpose().iter().copied())
}

pub(crate) fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let data = read_f64(path, rows * cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest::for_dataset(ds);
    let mats = [
        &ds.train_inputs,
        &ds.train_outputs,
        &ds.test_inputs,
        &ds.test_outputs,
    ];
    for (file, m) in FILES.iter().zip(mats) {
        write_matrix(&dir.join(file), m)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(dir)?;
    let input_grid = Grid::from_descriptor(manifest.grids.input.descriptor.clone())?;
    let output_grid = Grid::from_descriptor(manifest.grids.output.descriptor.clone())?;
    for (entry, grid) in [(&manifest.grids.input, &input_grid), (&manifest.grids.output, &output_grid)] {
        if entry.shape != grid.shape() {
            return Err(Error::Format(format!(
                "grid shape {:?} does not match its descriptor {:?}",
                entry.shape,
                grid.shape()
            )));
        }
    }
    let Splits { train, test } = manifest.splits;
    let (ni, no) = (input_grid.len(), output_grid.len());
    let dims = [(train, ni), (train, no), (test, ni), (test, no)];
    let mut mats = Vec::with_capacity(4);
    for (file, (r, c)) in FILES.iter().zip(dims) {
        mats.push(read_matrix(&dir.join(file), r, c)?);
    }
    let mut it = mats.into_iter();
    let mut next = || it.next().expect("four matrices");
    let ds = Dataset {
        name: manifest.name,
        input_grid,
        output_grid,
        train_inputs: next(),
        train_outputs: next(),
        test_inputs: next(),
        test_outputs: next(),
        seed: manifest.seed,
        provenance: manifest.provenance,
        rng: manifest.rng,
    };
    ds.validate()?;
    Ok(ds)
}
