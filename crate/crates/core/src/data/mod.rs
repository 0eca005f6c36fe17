//! Benchmark datasets: Gaussian-field samplers, PDE solvers, and the ODL
//! on-disk container.
//!
//! Every generator is deterministic in `(seed, counts, grid_size)`. Sample
//! `i` (train samples first, then test samples) draws from its own ChaCha20
//! stream, so results do not depend on generation order.

mod advection;
mod burgers;
mod container;
mod darcy;
mod gaussian_field;
mod grid;

pub use advection::{gen_advection1, gen_advection2, gen_smooth_advection};
pub use burgers::{
    gen_burgers, gen_burgers_with_diagnostics, BurgersParams, BurgersSolver, SolveDiagnostics,
};
pub use container::{load_dataset, save_dataset, DatasetManifest, GridEntry, GridPair, Splits, FORMAT_VERSION};
pub(crate) use container::{check_version, read_f64, read_matrix, write_f64, write_matrix};
pub use darcy::{gen_darcy, solve_darcy, DARCY_HIGH, DARCY_LOW, DARCY_SOURCE};
pub use gaussian_field::{sample_gaussian_field, FieldBoundary, GaussianFieldSpec};
pub use grid::{Grid, GridDescriptor};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Description of the generator recorded in dataset manifests.
pub const RNG_DESCRIPTION: &str = "ChaCha20Rng (rand_chacha 0.9) seeded with seed_from_u64(seed), \
     stream = global sample index; normals from rand_distr 0.5 StandardNormal";

/// Paired input/output function samples on fixed grids, split into train and test.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub input_grid: Grid,
    pub output_grid: Grid,
    /// Sample-major: one row per function, one column per grid point.
    pub train_inputs: DMatrix<f64>,
    pub train_outputs: DMatrix<f64>,
    pub test_inputs: DMatrix<f64>,
    pub test_outputs: DMatrix<f64>,
    pub seed: u64,
    pub provenance: String,
    pub rng: String,
}

impl Dataset {
    pub fn train_count(&self) -> usize {
        self.train_inputs.nrows()
    }

    pub fn test_count(&self) -> usize {
        self.test_inputs.nrows()
    }

    /// Checks shapes against the grids and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        let check = |m: &DMatrix<f64>, cols: usize, rows: usize, what: &'static str| {
            if m.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    context: what,
                    expected: cols,
                    found: m.ncols(),
                });
            }
            if m.nrows() != rows {
                return Err(Error::DimensionMismatch {
                    context: what,
                    expected: rows,
                    found: m.nrows(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(what));
            }
            Ok(())
        };
        let (ni, no) = (self.input_grid.len(), self.output_grid.len());
        check(&self.train_inputs, ni, self.train_count(), "train inputs")?;
        check(&self.train_outputs, no, self.train_count(), "train outputs")?;
        check(&self.test_inputs, ni, self.test_count(), "test inputs")?;
        check(&self.test_outputs, no, self.test_count(), "test outputs")?;
        Ok(())
    }
}

/// Independent generator stream for one sample.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `make(index, rng)` for every sample (in parallel) and stacks the
/// results row-wise in index order, along with each sample's side output.
fn generate<F, T>(
    train: usize,
    test: usize,
    input_len: usize,
    output_len: usize,
    seed: u64,
    make: F,
) -> Result<([DMatrix<f64>; 4], Vec<T>)>
where
    F: Fn(usize, &mut ChaCha20Rng) -> Result<(Vec<f64>, Vec<f64>, T)> + Sync,
    T: Send,
{
    let samples: Vec<(Vec<f64>, Vec<f64>, T)> = (0..train + test)
        .into_par_iter()
        .map(|index| make(index, &mut sample_rng(seed, index as u64)))
        .collect::<Result<_>>()?;
    let mut mats = [
        DMatrix::zeros(train, input_len),
        DMatrix::zeros(train, output_len),
        DMatrix::zeros(test, input_len),
        DMatrix::zeros(test, output_len),
    ];
    let mut extras = Vec::with_capacity(samples.len());
    for (index, (u, v, extra)) in samples.into_iter().enumerate() {
        debug_assert_eq!(u.len(), input_len);
        debug_assert_eq!(v.len(), output_len);
        let (row, base) = if index < train { (index, 0) } else { (index - train, 2) };
        for (j, x) in u.into_iter().enumerate() {
            mats[base][(row, j)] = x;
        }
        for (j, x) in v.into_iter().enumerate() {
            mats[base + 1][(row, j)] = x;
        }
        extras.push(extra);
    }
    Ok((mats, extras))
}
