//! Relative L2 test errors and inference FLOP accounting.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature used for the discrete L2 norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Trapezoid1d,
    TrapezoidTensor2d,
    PlainEuclidean,
}

impl Quadrature {
    /// Trapezoid rule matching the grid dimension, plain norm otherwise.
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            1 => Quadrature::Trapezoid1d,
            2 => Quadrature::TrapezoidTensor2d,
            _ => Quadrature::PlainEuclidean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mean_relative_l2: f64,
    pub per_sample: Vec<f64>,
    pub n_samples: usize,
    pub quadrature: Quadrature,
}

/// Trapezoid weights on sorted, distinct coordinates.
fn trapezoid_sorted(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = xs[i + 1] - xs[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn position(sorted: &[f64], x: f64) -> usize {
    sorted
        .binary_search_by(|p| p.total_cmp(&x))
        .expect("coordinate taken from the same grid")
}

/// Quadrature weights for the rows of `points`.
pub fn quadrature_weights(points: &DMatrix<f64>, quadrature: Quadrature) -> Result<DVector<f64>> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::Empty("quadrature grid"));
    }
    match quadrature {
        Quadrature::PlainEuclidean => Ok(DVector::from_element(n, 1.0)),
        Quadrature::Trapezoid1d => {
            if points.ncols() != 1 {
                return Err(Error::DimensionMismatch {
                    context: "1d trapezoid grid dimension",
                    expected: 1,
                    found: points.ncols(),
                });
            }
            let xs = sorted_unique(points.column(0).iter().copied().collect());
            if xs.len() != n {
                return Err(Error::InvalidParameter("1d grid has repeated points".into()));
            }
            let w = trapezoid_sorted(&xs);
            Ok(DVector::from_iterator(
                n,
                points.column(0).iter().map(|&x| w[position(&xs, x)]),
            ))
        }
        Quadrature::TrapezoidTensor2d => {
            if points.ncols() != 2 {
                return Err(Error::DimensionMismatch {
                    context: "2d trapezoid grid dimension",
                    expected: 2,
                    found: points.ncols(),
                });
            }
            let xs = sorted_unique(points.column(0).iter().copied().collect());
            let ys = sorted_unique(points.column(1).iter().copied().collect());
            if xs.len() * ys.len() != n {
                return Err(Error::InvalidParameter(
                    "2d trapezoid rule needs a full tensor-product grid".into(),
                ));
            }
            let wx = trapezoid_sorted(&xs);
            let wy = trapezoid_sorted(&ys);
            Ok(DVector::from_iterator(
                n,
                points
                    .row_iter()
                    .map(|r| wx[position(&xs, r[0])] * wy[position(&ys, r[1])]),
            ))
        }
    }
}

/// Per-sample `||pred - truth|| / ||truth||` over rows, averaged.
pub fn relative_l2(
    predictions: &DMatrix<f64>,
    truths: &DMatrix<f64>,
    grid: &DMatrix<f64>,
    quadrature: Quadrature,
) -> Result<ErrorReport> {
    if predictions.shape() != truths.shape() {
        return Err(Error::DimensionMismatch {
            context: "prediction/truth shape",
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.ncols() != grid.nrows() {
        return Err(Error::DimensionMismatch {
            context: "samples vs grid points",
            expected: grid.nrows(),
            found: truths.ncols(),
        });
    }
    if truths.nrows() == 0 {
        return Err(Error::Empty("error samples"));
    }
    let w = quadrature_weights(grid, quadrature)?;
    let mut per_sample = Vec::with_capacity(truths.nrows());
    for i in 0..truths.nrows() {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..truths.ncols() {
            let t = truths[(i, j)];
            let e = predictions[(i, j)] - t;
            num += w[j] * e * e;
            den += w[j] * t * t;
        }
        if den == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        per_sample.push((num / den).sqrt());
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(ErrorReport {
        mean_relative_l2: mean,
        n_samples: per_sample.len(),
        per_sample,
        quadrature,
    })
}

/// Flops charged per input coordinate of one kernel evaluation.
pub const DEFAULT_KERNEL_COST_PER_COORD: u64 = 3;

/// Dimensions of an assembled pipeline that determine inference cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineShape {
    /// Pointwise input samples per test function.
    pub input_points: usize,
    /// Regression input dimension `n` after preconditioning / PCA.
    pub input_dim: usize,
    /// Whether a dense map (preconditioner and/or PCA) is applied to the samples.
    pub input_encoded: bool,
    /// Training sample count `N`.
    pub train_count: usize,
    /// Regression output dimension `m`.
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_query_flops: u64,
    pub breakdown: BTreeMap<String, u64>,
    pub kernel_cost_per_coord: u64,
    pub assumptions_note: String,
}

/// Flops of a dense `R^n -> R^m` matrix-vector product: `m (2n - 1)`.
pub fn matvec_flops(n_in: usize, n_out: usize) -> u64 {
    if n_in == 0 {
        return 0;
    }
    n_out as u64 * (2 * n_in as u64 - 1)
}

/// Closed-form flops per test function evaluated at `query_count` output points.
pub fn count_inference_flops(
    shape: &PipelineShape,
    query_count: usize,
    kernel_cost_per_coord: u64,
) -> FlopsReport {
    let mut breakdown = BTreeMap::new();
    let projection = if shape.input_encoded {
        matvec_flops(shape.input_points, shape.input_dim)
    } else {
        0
    };
    breakdown.insert("input_projection".to_string(), projection);
    breakdown.insert(
        "kernel_row".to_string(),
        shape.train_count as u64 * kernel_cost_per_coord * shape.input_dim as u64,
    );
    breakdown.insert(
        "regression_matvec".to_string(),
        matvec_flops(shape.train_count, shape.output_dim),
    );
    breakdown.insert(
        "output_reconstruction".to_string(),
        matvec_flops(shape.output_dim, query_count),
    );
    FlopsReport {
        per_query_flops: breakdown.values().sum(),
        breakdown,
        kernel_cost_per_coord,
        assumptions_note: format!(
            "dense R^n -> R^m matvec counted as m(2n-1) flops (n multiplies and n-1 adds per \
             output); one kernel evaluation costs {kernel_cost_per_coord} flops per input \
             coordinate; preconditioner, PCA and output recovery maps are precomposed into single \
             dense matrices; PCA mean shifts and pointwise sampling are not counted"
        ),
    }
}
