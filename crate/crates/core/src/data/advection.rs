//! Transport `w_t + w_x = 0` on the periodic unit interval, observed at `t = 0.5`.
//! The solution is the exact shift `u((x - 0.5) mod 1)`.

use rand::Rng;

use super::gaussian_field::{FieldSampler, GaussianFieldSpec};
use super::{generate, Dataset, Grid, RNG_DESCRIPTION};
use crate::error::{Error, Result};

const SHIFT: f64 = 0.5;

fn check_grid(grid_size: usize) -> Result<Grid> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "advection grid needs at least 2 points, got {grid_size}"
        )));
    }
    Grid::periodic_unit(grid_size)
}

/// Shifted copy of grid values when the shift is a whole number of cells.
fn circular_shift(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let s = n / 2;
    (0..n).map(|i| values[(i + n - s) % n]).collect()
}

fn assemble(
    name: &str,
    grid: Grid,
    mats: [nalgebra::DMatrix<f64>; 4],
    seed: u64,
    provenance: String,
) -> Dataset {
    let [train_inputs, train_outputs, test_inputs, test_outputs] = mats;
    Dataset {
        name: name.to_string(),
        input_grid: grid.clone(),
        output_grid: grid,
        train_inputs,
        train_outputs,
        test_inputs,
        test_outputs,
        seed,
        provenance,
        rng: RNG_DESCRIPTION.to_string(),
    }
}

/// Square waves `h 1{|x - c| <= b/2}` with `(c, b, h) ~ U([0.3, 0.7] x [0.3, 0.6] x [1, 2])`.
pub fn gen_advection1(train: usize, test: usize, grid_size: usize, seed: u64) -> Result<Dataset> {
    let grid = check_grid(grid_size)?;
    let n = grid_size;
    let xs: Vec<f64> = grid.points().column(0).iter().copied().collect();
    let (mats, _) = generate(train, test, n, n, seed, |_, rng| {
        let c = rng.random_range(0.3..=0.7);
        let b = rng.random_range(0.3..=0.6);
        let h = rng.random_range(1.0..=2.0);
        let wave = |x: f64| if (x - c).abs() <= 0.5 * b { h } else { 0.0 };
        let u: Vec<f64> = xs.iter().map(|&x| wave(x)).collect();
        let v = if n % 2 == 0 {
            circular_shift(&u)
        } else {
            xs.iter().map(|&x| wave((x - SHIFT).rem_euclid(1.0))).collect()
        };
        Ok((u, v, ()))
    })?;
    Ok(assemble(
        "advection1",
        grid,
        mats,
        seed,
        format!(
            "advection I: square waves (c,b,h) ~ U([0.3,0.7]x[0.3,0.6]x[1,2]) on {n} periodic points; \
             output = exact transport to t=0.5"
        ),
    ))
}

fn advection_field(
    name: &str,
    train: usize,
    test: usize,
    grid_size: usize,
    seed: u64,
    binarize: bool,
) -> Result<Dataset> {
    let grid = check_grid(grid_size)?;
    let n = grid_size;
    let spec = GaussianFieldSpec::periodic(1.0, 3.0, 2.0, n);
    let sampler = FieldSampler::new(&spec, grid.points())?;
    let shifted_points = grid.points().map(|x| (x - SHIFT).rem_euclid(1.0));
    let shifted = FieldSampler::new(&spec, &shifted_points)?;
    let map = |f: f64| if !binarize { f } else if f >= 0.0 { 1.0 } else { -1.0 };
    let (mats, _) = generate(train, test, n, n, seed, |_, rng| {
        let xi = spec.draw_coefficients(rng);
        let u: Vec<f64> = sampler.evaluate(&xi).iter().map(|&f| map(f)).collect();
        let v = if n % 2 == 0 {
            circular_shift(&u)
        } else {
            shifted.evaluate(&xi).iter().map(|&f| map(f)).collect()
        };
        Ok((u, v, ()))
    })?;
    let desc = if binarize {
        "u = -1 + 2 1{f >= 0}"
    } else {
        "u = f"
    };
    Ok(assemble(
        name,
        grid,
        mats,
        seed,
        format!(
            "{desc} with f ~ GP(0, (-Laplacian + 9 I)^-2), periodic KL on {n} points; \
             output = exact transport to t=0.5"
        ),
    ))
}

/// Sign-thresholded periodic Gaussian fields `-1 + 2 1{f >= 0}`, `f ~ GP(0, (-Laplacian + 9 I)^-2)`.
pub fn gen_advection2(train: usize, test: usize, grid_size: usize, seed: u64) -> Result<Dataset> {
    advection_field("advection2", train, test, grid_size, seed, true)
}

/// Same fields as [`gen_advection2`] without thresholding (smooth inputs).
pub fn gen_smooth_advection(
    train: usize,
    test: usize,
    grid_size: usize,
    seed: u64,
) -> Result<Dataset> {
    advection_field("advection_smooth", train, test, grid_size, seed, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_wave_wraps() {
        // c = 0.5, b = 0.4, h = 1 by hand on 40 points
        let n = 40;
        let u: Vec<f64> = (0..n)
            .map(|i| if (i as f64 / 40.0 - 0.5).abs() <= 0.2 { 1.0 } else { 0.0 })
            .collect();
        let v = circular_shift(&u);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[n / 2], 0.0);
        assert_eq!(v[n - 1], 1.0);
    }

    #[test]
    fn advection1_values_and_integrals() {
        let ds = gen_advection1(20, 5, 40, 3).unwrap();
        ds.validate().unwrap();
        for (u, v) in [(&ds.train_inputs, &ds.train_outputs), (&ds.test_inputs, &ds.test_outputs)] {
            for i in 0..u.nrows() {
                let h = u.row(i).max();
                assert!(h >= 1.0 && h <= 2.0);
                assert!(v.row(i).iter().all(|&x| x == 0.0 || x == h));
                // periodic trapezoid sums agree on the matched grid
                let su: f64 = u.row(i).sum() / 40.0;
                let sv: f64 = v.row(i).sum() / 40.0;
                assert!((su - sv).abs() < 1e-14);
            }
        }
        let odd = gen_advection1(5, 0, 41, 3).unwrap();
        for i in 0..5 {
            let h = odd.train_inputs.row(i).max();
            assert!(odd.train_outputs.row(i).iter().all(|&x| x == 0.0 || x == h));
        }
    }

    #[test]
    fn advection2_binary_and_shifted() {
        let ds = gen_advection2(30, 10, 200, 1).unwrap();
        ds.validate().unwrap();
        for i in 0..30 {
            let u: Vec<f64> = ds.train_inputs.row(i).iter().copied().collect();
            assert!(u.iter().all(|&x| x == 1.0 || x == -1.0));
            let v: Vec<f64> = ds.train_outputs.row(i).iter().copied().collect();
            assert_eq!(v, circular_shift(&u));
            assert_eq!(v[100], u[0]);
        }
    }

    #[test]
    fn advection2_sign_balance() {
        let ds = gen_advection2(10_000, 0, 16, 5).unwrap();
        let plus = ds.train_inputs.iter().filter(|&&x| x > 0.0).count() as f64;
        let frac = plus / ds.train_inputs.len() as f64;
        assert!((frac - 0.5).abs() <= 0.02, "fraction of +1: {frac}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_advection1(4, 2, 40, 9).unwrap(), gen_advection1(4, 2, 40, 9).unwrap());
        assert_eq!(gen_advection2(4, 2, 50, 9).unwrap(), gen_advection2(4, 2, 50, 9).unwrap());
        assert_ne!(gen_advection1(4, 2, 40, 9).unwrap(), gen_advection1(4, 2, 40, 10).unwrap());
        assert!(gen_advection1(1, 1, 1, 0).is_err());
    }
}
