//! The Whittle-Matern noise measure: angular power spectrum, prior
//! sampling, Cameron-Martin geometry and trace diagnostics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{coeff_count, CoeffField};

/// Parameters of the Whittle-Matern field `(kappa^2 - Delta)^beta u = W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Correlation parameter, `> 0`.
    pub kappa: f64,
    /// Smoothness parameter, `> 1/2` so the field lives in L2(S2).
    pub beta: f64,
}

impl MaternParams {
    pub fn new(kappa: f64, beta: f64) -> Result<Self> {
        let p = MaternParams { kappa, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::domain(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.beta > 0.5) {
            return Err(Error::domain(format!(
                "beta must exceed 1/2, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Angular power spectrum `(C_l)_{l <= L}` of the noise measure.
///
/// Entries must be nonnegative; operations that divide by `C_l`
/// (Cameron-Martin norms, whitening) reject zero entries at call time.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    c: Vec<f64>,
}

impl Spectrum {
    pub fn from_values(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::domain("spectrum needs at least the l = 0 entry"));
        }
        if let Some(bad) = c.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "spectrum entries must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(Spectrum { c })
    }

    pub fn band_limit(&self) -> u32 {
        (self.c.len() - 1) as u32
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    /// `C_l` for a degree within the band limit.
    pub fn c(&self, ell: u32) -> f64 {
        self.c[ell as usize]
    }

    /// `C_l` looked up by flat coefficient position.
    pub fn c_of_flat(&self, flat: usize) -> f64 {
        self.c[CoeffField::ell_of_flat(flat) as usize]
    }

    /// Largest entry; positive for any valid Matern spectrum.
    pub fn max_c(&self) -> f64 {
        self.c.iter().cloned().fold(f64::MIN, f64::max)
    }

    /// Spectrum expanded to one variance per coefficient in flat order.
    pub fn per_coeff(&self) -> Vec<f64> {
        let n = coeff_count(self.band_limit());
        (0..n).map(|flat| self.c_of_flat(flat)).collect()
    }

    pub fn all_positive(&self) -> bool {
        self.c.iter().all(|&v| v > 0.0)
    }

    fn require_positive(&self) -> Result<()> {
        if self.all_positive() {
            Ok(())
        } else {
            Err(Error::domain(
                "operation needs a strictly positive spectrum (some C_l is zero)",
            ))
        }
    }
}

/// `C_l = (kappa^2 + l(l+1))^(-2 beta)` for `l = 0..=band_limit`.
pub fn matern_spectrum(params: &MaternParams, band_limit: u32) -> Result<Spectrum> {
    params.validate()?;
    let c = (0..=band_limit as u64)
        .map(|l| {
            let lf = l as f64;
            (params.kappa * params.kappa + lf * (lf + 1.0)).powf(-2.0 * params.beta)
        })
        .collect();
    Spectrum::from_values(c)
}

/// Draw a field with independent coefficients `a_{l,m} ~ N(0, C_l)`.
pub fn sample_prior<R: Rng + ?Sized>(spec: &Spectrum, rng: &mut R) -> CoeffField {
    let mut field = CoeffField::zeros(spec.band_limit());
    for flat in 0..field.len() {
        let sd = spec.c_of_flat(flat).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        field.coeffs_mut()[flat] = sd * z;
    }
    field
}

/// Squared Cameron-Martin norm `sum a_{l,m}^2 / C_l`.
pub fn cm_norm_sq(field: &CoeffField, spec: &Spectrum) -> Result<f64> {
    spec.require_positive()?;
    if field.band_limit() != spec.band_limit() {
        return Err(Error::domain(format!(
            "band limit mismatch: field {} vs spectrum {}",
            field.band_limit(),
            spec.band_limit()
        )));
    }
    Ok(field
        .coeffs()
        .iter()
        .enumerate()
        .map(|(flat, a)| a * a / spec.c_of_flat(flat))
        .sum())
}

/// Directly summed trace `sum_l (2l+1) C_l` of the covariance operator.
pub fn trace(spec: &Spectrum) -> f64 {
    spec.values()
        .iter()
        .enumerate()
        .map(|(l, c)| (2 * l + 1) as f64 * c)
        .sum()
}

/// Closed-form reference value `kappa^(2(1-2beta)) / (2beta - 1)`.
///
/// Reported alongside [`trace`] for orientation only: the `l = 0` term of
/// the direct sum can already reach this value, so the full sum may exceed
/// it; as an integral comparison it bounds the `l >= 1` tail. Never used
/// as a correctness assertion.
pub fn trace_reference(params: &MaternParams) -> Result<f64> {
    if !(params.beta > 0.5) {
        return Err(Error::domain(format!(
            "trace reference needs beta > 1/2, got {}",
            params.beta
        )));
    }
    Ok(params.kappa.powf(2.0 * (1.0 - 2.0 * params.beta)) / (2.0 * params.beta - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::HarmonicIndex;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matern_values_small_band() {
        let spec = matern_spectrum(&MaternParams::new(1.0, 1.0).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(spec.c(0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.c(1), 1.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.c(2), 1.0 / 49.0, epsilon = 1e-15);
    }

    #[test]
    fn matern_monopole_value() {
        let spec = matern_spectrum(&MaternParams::new(2.0, 0.75).unwrap(), 0).unwrap();
        assert_abs_diff_eq!(spec.c(0), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn matern_spectrum_is_strictly_decreasing() {
        for &(kappa, beta) in &[(0.5, 0.6), (1.0, 1.0), (3.0, 2.5)] {
            let spec = matern_spectrum(&MaternParams::new(kappa, beta).unwrap(), 12).unwrap();
            for l in 1..=12 {
                assert!(spec.c(l) < spec.c(l - 1));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(MaternParams::new(0.0, 1.0).is_err());
        assert!(MaternParams::new(1.0, 0.5).is_err());
        assert!(MaternParams::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn prior_sample_moments() {
        let spec = matern_spectrum(&MaternParams::new(1.0, 1.0).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let dim = coeff_count(2);
        let mut sums = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut cross = 0.0; // a_{0,0} * a_{1,0}
        for _ in 0..n {
            let f = sample_prior(&spec, &mut rng);
            for (j, &a) in f.coeffs().iter().enumerate() {
                sums[j] += a;
                sq[j] += a * a;
            }
            cross += f.coeffs()[0] * f.coeffs()[2];
        }
        for j in 0..dim {
            let c = spec.c_of_flat(j);
            let var = sq[j] / n as f64 - (sums[j] / n as f64).powi(2);
            // variance of the sample variance ~ 2 C^2 / n
            let se = c * (2.0 / n as f64).sqrt();
            assert!(
                (var - c).abs() < 5.0 * se,
                "flat {j}: var {var} target {c} se {se}"
            );
        }
        // cross covariance of distinct coefficients vanishes
        let se_cross = (spec.c(0) * spec.c(1) / n as f64).sqrt();
        assert!((cross / n as f64).abs() < 5.0 * se_cross);
    }

    #[test]
    fn degenerate_spectrum_sends_only_monopole() {
        let spec = Spectrum::from_values(vec![2.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = sample_prior(&spec, &mut rng);
        assert!(f.coeffs()[0] != 0.0);
        assert!(f.coeffs()[1..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn cm_norm_examples() {
        let spec = matern_spectrum(&MaternParams::new(1.0, 1.0).unwrap(), 1).unwrap();
        let zero = CoeffField::zeros(1);
        assert_eq!(cm_norm_sq(&zero, &spec).unwrap(), 0.0);

        let mut monopole = CoeffField::zeros(1);
        monopole.set(HarmonicIndex::new(0, 0).unwrap(), 1.0);
        assert_abs_diff_eq!(cm_norm_sq(&monopole, &spec).unwrap(), 1.0, epsilon = 1e-15);

        let mut dipole = CoeffField::zeros(1);
        dipole.set(HarmonicIndex::new(1, 0).unwrap(), 1.0);
        assert_abs_diff_eq!(cm_norm_sq(&dipole, &spec).unwrap(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn cm_norm_rejects_zero_entries() {
        let spec = Spectrum::from_values(vec![1.0, 0.0]).unwrap();
        let f = CoeffField::zeros(1);
        assert!(cm_norm_sq(&f, &spec).is_err());
    }

    #[test]
    fn cm_norm_dominates_scaled_h_norm() {
        let spec = matern_spectrum(&MaternParams::new(1.3, 0.8).unwrap(), 4).unwrap();
        let coeffs: Vec<f64> = (0..coeff_count(4))
            .map(|j| (j as f64 * 0.7).sin())
            .collect();
        let f = CoeffField::from_coeffs(4, coeffs).unwrap();
        assert!(cm_norm_sq(&f, &spec).unwrap() >= f.norm_sq() / spec.max_c() - 1e-12);
    }

    #[test]
    fn trace_examples() {
        let params = MaternParams::new(1.0, 1.0).unwrap();
        let spec = matern_spectrum(&params, 2).unwrap();
        assert_abs_diff_eq!(trace(&spec), 1.0 + 3.0 / 9.0 + 5.0 / 49.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_reference(&params).unwrap(), 1.0, epsilon = 1e-15);

        // trace is nondecreasing in the band limit, and at these parameters the
        // l = 0 term alone already reaches the closed-form reference value.
        let mut prev = 0.0;
        for band in 0..8 {
            let t = trace(&matern_spectrum(&params, band).unwrap());
            assert!(t >= prev);
            prev = t;
        }
        let t0 = trace(&matern_spectrum(&params, 0).unwrap());
        assert_abs_diff_eq!(t0, trace_reference(&params).unwrap(), epsilon = 1e-15);
        assert!(trace(&matern_spectrum(&params, 1).unwrap()) > trace_reference(&params).unwrap());
    }

    #[test]
    fn trace_converges_under_doubling() {
        let params = MaternParams::new(1.0, 1.0).unwrap();
        let t128 = trace(&matern_spectrum(&params, 128).unwrap());
        let t256 = trace(&matern_spectrum(&params, 256).unwrap());
        assert!((t256 - t128) / t256 < 1e-4);
    }

    #[test]
    fn power_spectrum_of_prior_draws_is_isotropic() {
        // Empirical C_l over many draws stays inside the chi-square
        // (2l+1 dof) 99% interval around C_l.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let spec = matern_spectrum(&MaternParams::new(1.0, 1.0).unwrap(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let mut sums = vec![0.0; 4];
        for _ in 0..n {
            let f = sample_prior(&spec, &mut rng);
            for (j, &a) in f.coeffs().iter().enumerate() {
                sums[CoeffField::ell_of_flat(j) as usize] += a * a;
            }
        }
        for l in 0..=3u32 {
            let dof = (2 * l + 1) as f64;
            let c_hat = sums[l as usize] / (n as f64 * dof);
            let chi = ChiSquared::new(dof).unwrap();
            let lo = spec.c(l) * chi.inverse_cdf(0.005) / dof;
            let hi = spec.c(l) * chi.inverse_cdf(0.995) / dof;
            assert!(c_hat > lo && c_hat < hi, "l={l} c_hat={c_hat} in [{lo},{hi}]");
        }
    }
}
