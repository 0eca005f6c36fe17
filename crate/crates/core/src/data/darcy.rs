//! Darcy flow `-div(a grad v) = w` on the unit square with `v = 0` on the boundary.
//!
//! Five-point conservative finite differences on a uniform node grid, face
//! coefficients from the harmonic mean of the two adjacent nodes, and a
//! banded Cholesky solve of the SPD interior system.

use super::gaussian_field::{FieldSampler, GaussianFieldSpec};
use super::{generate, Dataset, Grid, RNG_DESCRIPTION};
use crate::error::{Error, Result};

/// Coefficient where the latent field is nonnegative.
pub const DARCY_HIGH: f64 = 12.0;
/// Coefficient where the latent field is negative.
pub const DARCY_LOW: f64 = 3.0;
/// Constant source term.
pub const DARCY_SOURCE: f64 = 1.0;

/// Lower-banded SPD matrix stored row-wise: `band[p * (bw + 1) + d] = A[p][p - d]`.
struct BandedSpd {
    size: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    fn new(size: usize, bw: usize) -> Self {
        BandedSpd {
            size,
            bw,
            band: vec![0.0; size * (bw + 1)],
        }
    }

    fn at(&mut self, row: usize, col: usize) -> &mut f64 {
        debug_assert!(col <= row && row - col <= self.bw);
        &mut self.band[row * (self.bw + 1) + (row - col)]
    }

    fn get(&self, row: usize, col: usize) -> f64 {
        if col > row || row - col > self.bw {
            0.0
        } else {
            self.band[row * (self.bw + 1) + (row - col)]
        }
    }

    /// In-place `A = L L^T`; returns false if a pivot is not positive.
    fn factor(&mut self) -> bool {
        let bw = self.bw;
        for j in 0..self.size {
            let lo = j.saturating_sub(bw);
            let mut d = self.get(j, j);
            for k in lo..j {
                let l = self.get(j, k);
                d -= l * l;
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            *self.at(j, j) = d;
            for i in (j + 1)..(j + bw + 1).min(self.size) {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = self.get(i, j);
                for k in lo_i..j {
                    s -= self.get(i, k) * self.get(j, k);
                }
                *self.at(i, j) = s / d;
            }
        }
        true
    }

    fn solve(&self, b: &mut [f64]) {
        let bw = self.bw;
        for i in 0..self.size {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.get(i, k) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
        for i in (0..self.size).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + bw + 1).min(self.size) {
                s -= self.get(k, i) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
    }
}

/// Solves on an `n x n` node grid (x fastest) given the coefficient at every node.
/// Returns `v` at every node, zero on the boundary.
pub fn solve_darcy(coefficient: &[f64], n: usize, source: f64) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("Darcy grid needs n >= 3, got {n}")));
    }
    if coefficient.len() != n * n {
        return Err(Error::DimensionMismatch {
            context: "Darcy coefficient field",
            expected: n * n,
            found: coefficient.len(),
        });
    }
    if coefficient.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidParameter("Darcy coefficient must be positive".into()));
    }
    let m = n - 2;
    let h2 = 1.0 / ((n - 1) as f64).powi(2);
    let node = |i: usize, j: usize| coefficient[j * n + i];
    let face = |a: f64, b: f64| 2.0 * a * b / (a + b);
    let unknown = |i: usize, j: usize| (j - 1) * m + (i - 1);
    let mut mat = BandedSpd::new(m * m, m);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let p = unknown(i, j);
            let a = node(i, j);
            let east = face(a, node(i + 1, j));
            let west = face(a, node(i - 1, j));
            let north = face(a, node(i, j + 1));
            let south = face(a, node(i, j - 1));
            *mat.at(p, p) = (east + west + north + south) / h2;
            if i > 1 {
                *mat.at(p, unknown(i - 1, j)) = -west / h2;
            }
            if j > 1 {
                *mat.at(p, unknown(i, j - 1)) = -south / h2;
            }
        }
    }
    if !mat.factor() {
        return Err(Error::Factorization {
            what: "Darcy stiffness matrix",
            size: m * m,
            advice: "check the coefficient field",
        });
    }
    let mut rhs = vec![source; m * m];
    mat.solve(&mut rhs);
    let mut v = vec![0.0; n * n];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            v[j * n + i] = rhs[unknown(i, j)];
        }
    }
    Ok(v)
}

/// Inputs `u = log a` with `a in {3, 12}` from the sign of a Neumann Gaussian field
/// `GP(0, (-Laplacian + 9 I)^-2)`; outputs the pressure `v` for `w = 1`.
pub fn gen_darcy(train: usize, test: usize, grid_size: usize, seed: u64) -> Result<Dataset> {
    if grid_size < 5 {
        return Err(Error::InvalidParameter(format!(
            "Darcy grid needs at least 5 points per side, got {grid_size}"
        )));
    }
    let n = grid_size;
    let grid = Grid::unit_square(n)?;
    let spec = GaussianFieldSpec::neumann(1.0, 3.0, 2.0, n);
    let sampler = FieldSampler::new(&spec, grid.points())?;
    let (mats, _) = generate(train, test, n * n, n * n, seed, |_, rng| {
        let a: Vec<f64> = sampler
            .sample(rng)
            .iter()
            .map(|&f| if f >= 0.0 { DARCY_HIGH } else { DARCY_LOW })
            .collect();
        let v = solve_darcy(&a, n, DARCY_SOURCE)?;
        Ok((a.iter().map(|x| x.ln()).collect(), v, ()))
    })?;
    let [train_inputs, train_outputs, test_inputs, test_outputs] = mats;
    Ok(Dataset {
        name: "darcy".into(),
        input_grid: grid.clone(),
        output_grid: grid,
        train_inputs,
        train_outputs,
        test_inputs,
        test_outputs,
        seed,
        provenance: format!(
            "Darcy -div(e^u grad v) = 1 on {n}x{n} nodes of [0,1]^2, v = 0 on the boundary; \
             e^u = 12 where f >= 0 else 3, f ~ GP(0, (-Laplacian + 9 I)^-2) with Neumann KL modes; \
             inputs store u = log coefficient; 5-point harmonic-mean finite differences, banded Cholesky"
        ),
        rng: RNG_DESCRIPTION.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_coefficient_scaling() {
        let n = 29;
        let one = solve_darcy(&vec![1.0; n * n], n, 1.0).unwrap();
        for a in [3.0, 12.0, 0.37] {
            let va = solve_darcy(&vec![a; n * n], n, 1.0).unwrap();
            for (x, y) in va.iter().zip(&one) {
                assert!((x - y / a).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn boundary_and_positivity() {
        let ds = gen_darcy(3, 1, 29, 2).unwrap();
        ds.validate().unwrap();
        let n = 29;
        for r in 0..3 {
            let v = ds.train_outputs.row(r);
            for j in 0..n {
                for i in 0..n {
                    let x = v[j * n + i];
                    if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                        assert_eq!(x, 0.0);
                    } else {
                        assert!(x > 0.0);
                    }
                }
            }
            let u = ds.train_inputs.row(r);
            assert!(u.iter().all(|&x| x == 3f64.ln() || x == 12f64.ln()));
        }
    }

    #[test]
    fn grid_refinement_consistency() {
        let coarse = solve_darcy(&vec![1.0; 29 * 29], 29, 1.0).unwrap();
        let fine = solve_darcy(&vec![1.0; 57 * 57], 57, 1.0).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..29 {
            for i in 0..29 {
                let c = coarse[j * 29 + i];
                let f = fine[(2 * j) * 57 + 2 * i];
                num += (c - f).powi(2);
                den += f * f;
            }
        }
        assert!((num / den).sqrt() <= 0.02);
    }

    #[test]
    fn banded_matches_dense() {
        // small heterogeneous problem checked against a dense LU solve
        let n = 6;
        let coef: Vec<f64> = (0..n * n).map(|k| if k % 3 == 0 { 12.0 } else { 3.0 }).collect();
        let v = solve_darcy(&coef, n, 1.0).unwrap();
        let m = n - 2;
        let h2 = 1.0 / 25.0;
        let mut a = nalgebra::DMatrix::<f64>::zeros(m * m, m * m);
        let node = |i: usize, j: usize| coef[j * n + i];
        let face = |x: f64, y: f64| 2.0 * x * y / (x + y);
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let p = (j - 1) * m + i - 1;
                let nb = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)];
                for (ii, jj) in nb {
                    let f = face(node(i, j), node(ii, jj));
                    a[(p, p)] += f / h2;
                    if ii >= 1 && ii < n - 1 && jj >= 1 && jj < n - 1 {
                        a[(p, (jj - 1) * m + ii - 1)] -= f / h2;
                    }
                }
            }
        }
        let x = a.lu().solve(&nalgebra::DVector::from_element(m * m, 1.0)).unwrap();
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                assert!((v[j * n + i] - x[(j - 1) * m + i - 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(gen_darcy(1, 1, 4, 0).is_err());
        assert!(solve_darcy(&[1.0; 8], 3, 1.0).is_err());
        assert!(solve_darcy(&[-1.0; 9], 3, 1.0).is_err());
    }
}
