//! Exact simulation of the forward Ornstein-Uhlenbeck noising dynamics.
//!
//! Every coefficient evolves independently as `da = -a/2 dt + sqrt(C_l) dB`,
//! which is stationary at `N(0, C_l)`. Transitions are sampled from the
//! closed-form Gaussian law instead of an Euler discretisation, so forward
//! samples carry no discretisation error.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::CoeffField;
use crate::spectrum::Spectrum;

/// Uniform time discretisation `t_j = j T / M` for `j = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::domain("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `h = T / M`.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_j` for `j = 0..=M`.
    pub fn time(&self, j: usize) -> f64 {
        debug_assert!(j <= self.steps);
        self.horizon * j as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

/// Mean and variance of the transition started at `a` after `dt`.
pub fn ou_mean_var(a: f64, c_ell: f64, dt: f64) -> (f64, f64) {
    let decay = (-dt / 2.0).exp();
    (decay * a, c_ell * (1.0 - decay * decay))
}

/// Draw from the exact transition law `N(e^{-dt/2} a, C_l (1 - e^{-dt}))`.
pub fn ou_transition<R: Rng + ?Sized>(a: f64, c_ell: f64, dt: f64, rng: &mut R) -> Result<f64> {
    if !(c_ell > 0.0) {
        return Err(Error::domain(format!(
            "OU transition needs C_l > 0, got {c_ell}"
        )));
    }
    if !(dt >= 0.0) {
        return Err(Error::domain(format!("negative time step {dt}")));
    }
    let (mean, var) = ou_mean_var(a, c_ell, dt);
    let z: f64 = rng.sample(StandardNormal);
    Ok(mean + var.sqrt() * z)
}

fn transition_field<R: Rng + ?Sized>(
    x: &CoeffField,
    spec: &Spectrum,
    dt: f64,
    rng: &mut R,
) -> CoeffField {
    let decay = (-dt / 2.0).exp();
    let noise_var = 1.0 - decay * decay;
    let mut next = CoeffField::zeros(x.band_limit());
    for (flat, &a) in x.coeffs().iter().enumerate() {
        let sd = (spec.c_of_flat(flat) * noise_var).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        next.coeffs_mut()[flat] = decay * a + sd * z;
    }
    next
}

/// States of one forward path on the time grid; `states[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<CoeffField>,
}

/// Sample the forward process at every grid time, chaining exact transitions.
pub fn simulate_forward<R: Rng + ?Sized>(
    x0: &CoeffField,
    spec: &Spectrum,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<ForwardTrajectory> {
    require_same_band(x0, spec)?;
    let h = grid.step();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(x0.clone());
    for _ in 0..grid.steps() {
        let next = transition_field(states.last().expect("nonempty"), spec, h, rng);
        states.push(next);
    }
    Ok(ForwardTrajectory {
        grid: *grid,
        states,
    })
}

/// Draw `X_t | X_0 = x0` in one jump; same joint law of `(X_0, X_t)` as a
/// chained trajectory, the default for building training pairs.
pub fn forward_jump<R: Rng + ?Sized>(
    x0: &CoeffField,
    spec: &Spectrum,
    t: f64,
    rng: &mut R,
) -> Result<CoeffField> {
    require_same_band(x0, spec)?;
    if !(t >= 0.0) {
        return Err(Error::domain(format!("negative forward time {t}")));
    }
    Ok(transition_field(x0, spec, t, rng))
}

fn require_same_band(x: &CoeffField, spec: &Spectrum) -> Result<()> {
    if x.band_limit() != spec.band_limit() {
        return Err(Error::domain(format!(
            "band limit mismatch: field {} vs spectrum {}",
            x.band_limit(),
            spec.band_limit()
        )));
    }
    Ok(())
}

/// A coefficientwise Gaussian law: one mean per coefficient, one variance
/// per coefficient (flat order).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: CoeffField,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: CoeffField, var: Vec<f64>) -> Result<Self> {
        if var.len() != mean.len() {
            return Err(Error::domain(format!(
                "diagonal law has {} means but {} variances",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::domain("negative variance in diagonal law"));
        }
        Ok(DiagGaussian { mean, var })
    }

    /// The stationary law `N(0, C)`.
    pub fn prior(spec: &Spectrum) -> Self {
        DiagGaussian {
            mean: CoeffField::zeros(spec.band_limit()),
            var: spec.per_coeff(),
        }
    }
}

/// Closed-form forward marginal when the start is coefficientwise Gaussian:
/// `mean_t = e^{-t/2} mean_0`, `var_t = e^{-t} var_0 + C_l (1 - e^{-t})`.
pub fn marginal_law_gaussian(
    mean0: &CoeffField,
    var0_by_ell: &[f64],
    spec: &Spectrum,
    t: f64,
) -> Result<DiagGaussian> {
    require_same_band(mean0, spec)?;
    if var0_by_ell.len() != spec.band_limit() as usize + 1 {
        return Err(Error::domain(format!(
            "need one starting variance per degree: got {}, band limit {}",
            var0_by_ell.len(),
            spec.band_limit()
        )));
    }
    if var0_by_ell.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("negative starting variance"));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(format!("negative forward time {t}")));
    }
    let decay = (-t / 2.0).exp();
    let mut mean = CoeffField::zeros(mean0.band_limit());
    let mut var = vec![0.0; mean0.len()];
    for flat in 0..mean0.len() {
        let ell = CoeffField::ell_of_flat(flat) as usize;
        mean.coeffs_mut()[flat] = decay * mean0.coeffs()[flat];
        var[flat] =
            decay * decay * var0_by_ell[ell] + spec.c_of_flat(flat) * (1.0 - decay * decay);
    }
    DiagGaussian::new(mean, var)
}
