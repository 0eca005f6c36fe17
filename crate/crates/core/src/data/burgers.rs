//! Viscous Burgers `w_t + (w^2/2)_x = nu w_xx` on the periodic unit interval.
//!
//! Fourier pseudo-spectral in space with the two-thirds dealiasing rule
//! applied to both the state and the flux, classical RK4 in time. The time
//! step is recomputed every step as
//! `min(0.5 dx / max|w|, 0.25 dx^2 / nu)`, scaled by `dt_scale`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::gaussian_field::{FieldSampler, GaussianFieldSpec};
use super::{generate, Dataset, Grid, RNG_DESCRIPTION};
use crate::error::{Error, Result};

/// Relative slack on step-to-step energy growth that still counts as nonincreasing.
const ENERGY_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BurgersParams {
    pub grid_size: usize,
    pub nu: f64,
    pub t_final: f64,
}

impl Default for BurgersParams {
    fn default() -> Self {
        BurgersParams {
            grid_size: 128,
            nu: 0.1,
            t_final: 1.0,
        }
    }
}

/// Conservation and dissipation diagnostics of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveDiagnostics {
    pub steps: usize,
    /// `max_t |mean(w(t)) - mean(w(0))|`.
    pub max_mean_drift: f64,
    /// Largest relative step-to-step increase of `||w||^2` (zero or negative when dissipative).
    pub max_energy_growth: f64,
    pub energy_nonincreasing: bool,
}

pub struct BurgersSolver {
    n: usize,
    nu: f64,
    dt_scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
    keep: Vec<bool>,
}

impl BurgersSolver {
    pub fn new(n: usize, nu: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "Burgers grid size must be a power of two >= 4, got {n}"
            )));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("viscosity must be positive, got {nu}")));
        }
        let mut planner = FftPlanner::new();
        let signed = |j: usize| if j <= n / 2 { j as isize } else { j as isize - n as isize };
        let wavenumbers = (0..n)
            .map(|j| {
                // the Nyquist mode has no well-defined derivative
                if j == n / 2 {
                    0.0
                } else {
                    2.0 * PI * signed(j) as f64
                }
            })
            .collect();
        let keep = (0..n).map(|j| 3 * signed(j).unsigned_abs() <= n).collect();
        Ok(BurgersSolver {
            n,
            nu,
            dt_scale: 1.0,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wavenumbers,
            keep,
        })
    }

    /// Multiplies every time step by `scale` (e.g. 0.5 for a refinement study).
    pub fn with_dt_scale(mut self, scale: f64) -> Self {
        self.dt_scale = scale;
        self
    }

    fn to_physical(&self, hat: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        out.copy_from_slice(hat);
        self.inverse.process_with_scratch(out, scratch);
        let inv_n = 1.0 / self.n as f64;
        for z in out.iter_mut() {
            *z = Complex64::new(z.re * inv_n, 0.0);
        }
    }

    /// Spectral right-hand side; returns `max |w|` of the physical state.
    fn rhs(
        &self,
        hat: &[Complex64],
        out: &mut [Complex64],
        work: &mut [Complex64],
        scratch: &mut [Complex64],
    ) -> f64 {
        self.to_physical(hat, work, scratch);
        let mut max_abs: f64 = 0.0;
        for z in work.iter_mut() {
            max_abs = max_abs.max(z.re.abs());
            *z = Complex64::new(0.5 * z.re * z.re, 0.0);
        }
        self.forward.process_with_scratch(work, scratch);
        for j in 0..self.n {
            let k = self.wavenumbers[j];
            out[j] = if self.keep[j] {
                Complex64::new(0.0, -k) * work[j] - self.nu * k * k * hat[j]
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        max_abs
    }

    /// Integrates from `u0` to `t_final`. `sample` is reported on blow-up.
    pub fn solve(
        &self,
        u0: &[f64],
        t_final: f64,
        sample: usize,
    ) -> Result<(Vec<f64>, SolveDiagnostics)> {
        let n = self.n;
        if u0.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Burgers initial condition",
                expected: n,
                found: u0.len(),
            });
        }
        let mut hat: Vec<Complex64> = u0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len())];
        self.forward.process_with_scratch(&mut hat, &mut scratch);
        for (z, &keep) in hat.iter_mut().zip(&self.keep) {
            if !keep {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        let energy = |h: &[Complex64]| h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let mean0 = hat[0].re / n as f64;
        let mut prev_energy = energy(&hat);
        let mut diag = SolveDiagnostics {
            steps: 0,
            max_mean_drift: 0.0,
            max_energy_growth: f64::NEG_INFINITY,
            energy_nonincreasing: true,
        };

        let zero = Complex64::new(0.0, 0.0);
        let (mut k1, mut k2, mut k3, mut k4) =
            (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let mut stage = vec![zero; n];
        let mut work = vec![zero; n];
        let dx = 1.0 / n as f64;
        let dt_diff = 0.25 * dx * dx / self.nu;
        let mut t = 0.0;
        while t < t_final {
            let max_abs = self.rhs(&hat, &mut k1, &mut work, &mut scratch);
            if !max_abs.is_finite() {
                return Err(Error::BlowUp(sample));
            }
            let mut dt = if max_abs > 0.0 {
                (0.5 * dx / max_abs).min(dt_diff)
            } else {
                dt_diff
            } * self.dt_scale;
            if t + dt > t_final {
                dt = t_final - t;
            }
            for j in 0..n {
                stage[j] = hat[j] + 0.5 * dt * k1[j];
            }
            self.rhs(&stage, &mut k2, &mut work, &mut scratch);
            for j in 0..n {
                stage[j] = hat[j] + 0.5 * dt * k2[j];
            }
            self.rhs(&stage, &mut k3, &mut work, &mut scratch);
            for j in 0..n {
                stage[j] = hat[j] + dt * k3[j];
            }
            self.rhs(&stage, &mut k4, &mut work, &mut scratch);
            for j in 0..n {
                hat[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            t += dt;
            diag.steps += 1;

            let e = energy(&hat);
            if !e.is_finite() {
                return Err(Error::BlowUp(sample));
            }
            let growth = if prev_energy > 0.0 { (e - prev_energy) / prev_energy } else { 0.0 };
            diag.max_energy_growth = diag.max_energy_growth.max(growth);
            if growth > ENERGY_SLACK {
                diag.energy_nonincreasing = false;
            }
            prev_energy = e;
            diag.max_mean_drift = diag.max_mean_drift.max((hat[0].re / n as f64 - mean0).abs());
        }
        self.to_physical(&hat, &mut work, &mut scratch);
        Ok((work.iter().map(|z| z.re).collect(), diag))
    }
}

/// Burgers samples with their solver diagnostics (train first, then test).
pub fn gen_burgers_with_diagnostics(
    train: usize,
    test: usize,
    params: &BurgersParams,
    seed: u64,
) -> Result<(Dataset, Vec<SolveDiagnostics>)> {
    let n = params.grid_size;
    let solver = BurgersSolver::new(n, params.nu)?;
    let grid = Grid::periodic_unit(n)?;
    // Initial conditions ~ GP(0, 625 (-Laplacian + 25 I)^-2), band-limited to the dealiased modes.
    let spec = GaussianFieldSpec::periodic(625.0, 5.0, 2.0, n).with_truncation(1 + 2 * (n / 3));
    let sampler = FieldSampler::new(&spec, grid.points())?;
    let (mats, diagnostics) = generate(train, test, n, n, seed, |index, rng| {
        let u: Vec<f64> = sampler.sample(rng).iter().copied().collect();
        let (v, diag) = solver.solve(&u, params.t_final, index)?;
        Ok((u, v, diag))
    })?;
    let [train_inputs, train_outputs, test_inputs, test_outputs] = mats;
    let ds = Dataset {
        name: "burgers".into(),
        input_grid: grid.clone(),
        output_grid: grid,
        train_inputs,
        train_outputs,
        test_inputs,
        test_outputs,
        seed,
        provenance: format!(
            "viscous Burgers nu={} on {n} periodic points, u ~ GP(0, 625(-Laplacian + 25 I)^-2) \
             (|k| <= {}), output w(., {}); Fourier pseudo-spectral (2/3 dealiasing) + RK4, \
             dt = min(0.5 dx/max|w|, 0.25 dx^2/nu)",
            params.nu,
            n / 3,
            params.t_final
        ),
        rng: RNG_DESCRIPTION.to_string(),
    };
    Ok((ds, diagnostics))
}

pub fn gen_burgers(train: usize, test: usize, params: &BurgersParams, seed: u64) -> Result<Dataset> {
    Ok(gen_burgers_with_diagnostics(train, test, params, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_is_fixed_point() {
        let s = BurgersSolver::new(32, 0.1).unwrap();
        let (w, d) = s.solve(&[0.0; 32], 0.3, 0).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
        assert!(d.energy_nonincreasing);
    }

    #[test]
    fn conservation_and_dissipation() {
        let (ds, diags) = gen_burgers_with_diagnostics(4, 2, &BurgersParams::default(), 5).unwrap();
        ds.validate().unwrap();
        for (i, d) in diags.iter().enumerate() {
            assert!(d.max_mean_drift <= 1e-8, "sample {i}: drift {}", d.max_mean_drift);
            assert!(d.energy_nonincreasing, "sample {i}: growth {}", d.max_energy_growth);
        }
        for i in 0..4 {
            let mu = ds.train_inputs.row(i).mean();
            let mv = ds.train_outputs.row(i).mean();
            assert!((mu - mv).abs() < 1e-8);
            assert!(ds.train_outputs.row(i).norm() <= ds.train_inputs.row(i).norm());
        }
    }

    #[test]
    fn heat_limit_matches_exact_decay() {
        // A single small mode is governed by diffusion: amplitude decays like exp(-nu k^2 t).
        let n = 64;
        let nu = 0.1;
        let amp = 1e-8;
        let u0: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * PI * i as f64 / n as f64).sin())
            .collect();
        let s = BurgersSolver::new(n, nu).unwrap();
        let (w, _) = s.solve(&u0, 0.5, 0).unwrap();
        let decay = (-nu * 4.0 * PI * PI * 0.5).exp();
        let want: Vec<f64> = u0.iter().map(|x| x * decay).collect();
        assert!(rel_l2(&w, &want) < 1e-6);
    }

    #[test]
    fn time_step_refinement() {
        let (ds, _) = gen_burgers_with_diagnostics(1, 0, &BurgersParams::default(), 8).unwrap();
        let u: Vec<f64> = ds.train_inputs.row(0).iter().copied().collect();
        let coarse = BurgersSolver::new(128, 0.1).unwrap().solve(&u, 1.0, 0).unwrap().0;
        let fine = BurgersSolver::new(128, 0.1)
            .unwrap()
            .with_dt_scale(0.5)
            .solve(&u, 1.0, 0)
            .unwrap()
            .0;
        assert!(rel_l2(&coarse, &fine) <= 1e-6);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BurgersSolver::new(100, 0.1).is_err());
        assert!(BurgersSolver::new(64, 0.0).is_err());
        let s = BurgersSolver::new(8, 0.1).unwrap();
        assert!(matches!(s.solve(&[0.0; 4], 1.0, 0), Err(Error::DimensionMismatch { .. })));
        let blow = s.solve(&[f64::NAN; 8], 1.0, 7);
        assert!(matches!(blow, Err(Error::BlowUp(7))));
    }
}
