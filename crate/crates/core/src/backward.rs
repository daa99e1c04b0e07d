//! Generation by Euler-Maruyama on the approximate time-reversed dynamics,
//! plus an exact affine-recursion oracle for Gaussian scores.
//!
//! A path starts at the stationary Gaussian and, stepping backward-time
//! `t_{j-1} -> t_j`, applies
//!
//! ```text
//! y' = y - (h/2) y + (h / sigma_tau) (d(tau, y) - e^{-tau/2} y) + sqrt(h) xi
//! ```
//!
//! with `tau = T - t_{j-1}` the forward time at the left endpoint (so
//! `sigma_tau` is never evaluated at zero) and `xi ~ N(0, C)` drawn from
//! the noise spectrum.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{sigma, Denoiser, DiagAffineDenoiser};
use crate::error::{Error, Result};
use crate::forward::{DiagGaussian, TimeGrid};
use crate::harmonics::CoeffField;
use crate::spectrum::Spectrum;

fn check_step_index(grid: &TimeGrid, j: usize) -> Result<()> {
    if j == 0 || j > grid.steps() {
        return Err(Error::domain(format!(
            "step index {j} outside 1..={}",
            grid.steps()
        )));
    }
    Ok(())
}

/// Deterministic part of the Euler-Maruyama update for step `j`.
pub fn em_drift(y: &CoeffField, j: usize, grid: &TimeGrid, d: &dyn Denoiser) -> Result<CoeffField> {
    check_step_index(grid, j)?;
    let h = grid.step();
    let tau = grid.horizon() - grid.time(j - 1);
    let sig = sigma(tau);
    let decay = (-tau / 2.0).exp();
    let pred = d.denoise(tau, y)?;
    let mut out = CoeffField::zeros(y.band_limit());
    for (flat, o) in out.coeffs_mut().iter_mut().enumerate() {
        let yc = y.coeffs()[flat];
        *o = yc - 0.5 * h * yc + (h / sig) * (pred.coeffs()[flat] - decay * yc);
    }
    Ok(out)
}

/// One Euler-Maruyama step `t_{j-1} -> t_j` with fresh noise.
pub fn em_step<R: Rng + ?Sized>(
    y: &CoeffField,
    j: usize,
    grid: &TimeGrid,
    spec: &Spectrum,
    d: &dyn Denoiser,
    rng: &mut R,
) -> Result<CoeffField> {
    let mut out = em_drift(y, j, grid, d)?;
    let sqrt_h = grid.step().sqrt();
    for (flat, o) in out.coeffs_mut().iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *o += sqrt_h * spec.c_of_flat(flat).sqrt() * z;
    }
    Ok(out)
}

/// Full backward path `Y_{t_0}, ..., Y_{t_M}` started at the prior.
pub fn sample_backward_path<R: Rng + ?Sized>(
    spec: &Spectrum,
    grid: &TimeGrid,
    d: &dyn Denoiser,
    rng: &mut R,
) -> Result<Vec<CoeffField>> {
    if d.band_limit() != spec.band_limit() {
        return Err(Error::domain(format!(
            "band limit mismatch: denoiser {} vs spectrum {}",
            d.band_limit(),
            spec.band_limit()
        )));
    }
    let mut path = Vec::with_capacity(grid.steps() + 1);
    path.push(crate::spectrum::sample_prior(spec, rng));
    for j in 1..=grid.steps() {
        let next = em_step(path.last().expect("nonempty"), j, grid, spec, d, rng)?;
        path.push(next);
    }
    Ok(path)
}

/// Generate one sample `Y_T`.
pub fn sample_backward<R: Rng + ?Sized>(
    spec: &Spectrum,
    grid: &TimeGrid,
    d: &dyn Denoiser,
    rng: &mut R,
) -> Result<CoeffField> {
    Ok(sample_backward_path(spec, grid, d, rng)?
        .pop()
        .expect("path has M+1 states"))
}

/// Generate samples in parallel, one reproducible stream per sample index.
pub fn sample_backward_batch<D, F>(
    spec: &Spectrum,
    grid: &TimeGrid,
    d: &D,
    n: usize,
    rng_for: F,
) -> Result<Vec<CoeffField>>
where
    D: Denoiser + Sync,
    F: Fn(u64) -> rand_chacha::ChaCha8Rng + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(i as u64);
            sample_backward(spec, grid, d, &mut rng)
        })
        .collect()
}

/// Exact Gaussian law of the Euler-Maruyama chain under a coefficientwise
/// affine denoiser: the marginal at every grid time, no Monte Carlo error.
///
/// Step `j` composes the affine map
/// `y -> (1 - h/2 + (h/sigma)(gain - e^{-tau/2})) y + (h/sigma) offset`
/// with additive `N(0, h C)` noise, so means and variances propagate in
/// closed form from the prior start.
pub fn em_law_path(
    spec: &Spectrum,
    grid: &TimeGrid,
    d: &dyn DiagAffineDenoiser,
) -> Result<Vec<DiagGaussian>> {
    if d.band_limit() != spec.band_limit() {
        return Err(Error::domain(format!(
            "band limit mismatch: denoiser {} vs spectrum {}",
            d.band_limit(),
            spec.band_limit()
        )));
    }
    let h = grid.step();
    let mut law = DiagGaussian::prior(spec);
    let mut path = Vec::with_capacity(grid.steps() + 1);
    path.push(law.clone());
    for j in 1..=grid.steps() {
        let tau = grid.horizon() - grid.time(j - 1);
        let sig = sigma(tau);
        let decay = (-tau / 2.0).exp();
        let (gain, offset) = d.diag_affine(tau)?;
        for flat in 0..law.mean.len() {
            let a = 1.0 - 0.5 * h + (h / sig) * (gain[flat] - decay);
            let c = (h / sig) * offset[flat];
            law.mean.coeffs_mut()[flat] = a * law.mean.coeffs()[flat] + c;
            law.var[flat] = a * a * law.var[flat] + h * spec.c_of_flat(flat);
        }
        path.push(law.clone());
    }
    Ok(path)
}

/// Final-time law of the chain; see [`em_law_path`].
pub fn em_law_final(
    spec: &Spectrum,
    grid: &TimeGrid,
    d: &dyn DiagAffineDenoiser,
) -> Result<DiagGaussian> {
    Ok(em_law_path(spec, grid, d)?
        .pop()
        .expect("path has M+1 states"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataModel, Empirical, ExactDenoiser, GaussianShift};
    use crate::forward::marginal_law_gaussian;
    use crate::rng::{stream, StreamPurpose};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_spec() -> Spectrum {
        Spectrum::from_values(vec![1.0]).unwrap()
    }

    fn scalar_field(v: f64) -> CoeffField {
        CoeffField::from_coeffs(0, vec![v]).unwrap()
    }

    fn stationary_denoiser(spec: &Spectrum) -> ExactDenoiser {
        ExactDenoiser::new(
            DataModel::GaussianShift(
                GaussianShift::new(
                    CoeffField::zeros(spec.band_limit()),
                    spec.values().to_vec(),
                )
                .unwrap(),
            ),
            spec.clone(),
        )
        .unwrap()
    }

    #[test]
    fn drift_under_stationary_score_is_pure_contraction() {
        let spec = unit_spec();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let d = stationary_denoiser(&spec);
        let y = scalar_field(1.0);
        let out = em_drift(&y, 1, &grid, &d).unwrap();
        assert_abs_diff_eq!(out.coeffs()[0], 0.95, epsilon = 1e-12);
    }

    #[test]
    fn zero_state_zero_denoiser_stays_at_zero() {
        struct ZeroDenoiser;
        impl Denoiser for ZeroDenoiser {
            fn band_limit(&self) -> u32 {
                0
            }
            fn denoise(&self, _t: f64, x: &CoeffField) -> Result<CoeffField> {
                Ok(CoeffField::zeros(x.band_limit()))
            }
        }
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let y = scalar_field(0.0);
        let out = em_drift(&y, 3, &grid, &ZeroDenoiser).unwrap();
        assert_eq!(out.coeffs()[0], 0.0);
    }

    #[test]
    fn gaussian_score_adds_decayed_mean_drift() {
        // with s = C the per-step deterministic drift beyond the contraction
        // is h e^{-tau/2} mu
        let spec = unit_spec();
        let mu = 0.8;
        let d = ExactDenoiser::new(
            DataModel::GaussianShift(
                GaussianShift::new(scalar_field(mu), vec![1.0]).unwrap(),
            ),
            spec.clone(),
        )
        .unwrap();
        let grid = TimeGrid::new(4.0, 16).unwrap();
        let h = grid.step();
        for j in [1usize, 5, 16] {
            let tau = grid.horizon() - grid.time(j - 1);
            let y = scalar_field(0.3);
            let out = em_drift(&y, j, &grid, &d).unwrap();
            let expected = (1.0 - 0.5 * h) * 0.3 + h * (-tau / 2.0f64).exp() * mu;
            assert_abs_diff_eq!(out.coeffs()[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn em_law_one_step_stationary() {
        let spec = unit_spec();
        let grid = TimeGrid::new(0.1, 1).unwrap();
        let d = stationary_denoiser(&spec);
        let law = em_law_final(&spec, &grid, &d).unwrap();
        assert_abs_diff_eq!(law.mean.coeffs()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(law.var[0], 0.95f64 * 0.95 + 0.1, epsilon = 1e-15);
    }

    #[test]
    fn em_variance_approaches_prior_as_h_shrinks() {
        let spec = unit_spec();
        let d = stationary_denoiser(&spec);
        let mut last_gap = f64::INFINITY;
        for steps in [40usize, 80, 160, 320] {
            let grid = TimeGrid::new(8.0, steps).unwrap();
            let law = em_law_final(&spec, &grid, &d).unwrap();
            let gap = (law.var[0] - 1.0).abs();
            assert!(gap < last_gap);
            last_gap = gap;
            // v -> (1-h/2)^2 v + h has fixed point 1/(1 - h/4); the start
            // at v = 1 leaves a geometric transient
            let h = grid.step();
            let fp = 1.0 / (1.0 - h / 4.0);
            let expected = fp + (1.0 - fp) * (1.0 - h / 2.0).powi(2 * steps as i32);
            assert_abs_diff_eq!(law.var[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn em_law_limit_leaves_only_initialisation_error() {
        // mu = 1, s = C = 1, T = 8: with a very fine grid the law of Y_T is
        // within e^{-T}-scale of the data law
        let spec = unit_spec();
        let d = ExactDenoiser::new(
            DataModel::GaussianShift(
                GaussianShift::new(scalar_field(1.0), vec![1.0]).unwrap(),
            ),
            spec.clone(),
        )
        .unwrap();
        let grid = TimeGrid::new(8.0, 10_000).unwrap();
        let law = em_law_final(&spec, &grid, &d).unwrap();
        assert!((law.mean.coeffs()[0] - 1.0).abs() < 1e-3);
        assert!((law.var[0] - 1.0).abs() < 1e-3);
        let kl = 0.5
            * (1.0 / law.var[0] - 1.0 - (1.0 / law.var[0]).ln()
                + (1.0 - law.mean.coeffs()[0]).powi(2) / law.var[0]);
        assert!(kl < 1e-6, "kl {kl}");
    }

    #[test]
    fn reference_config_law_values() {
        // T = 8, h = 0.05: mean within a few percent of 1, variance near 1
        let spec = unit_spec();
        let d = ExactDenoiser::new(
            DataModel::GaussianShift(
                GaussianShift::new(scalar_field(1.0), vec![1.0]).unwrap(),
            ),
            spec.clone(),
        )
        .unwrap();
        let grid = TimeGrid::new(8.0, 160).unwrap();
        let law = em_law_final(&spec, &grid, &d).unwrap();
        assert!((law.mean.coeffs()[0] - 1.0).abs() < 0.03);
        assert!((law.var[0] - 1.0).abs() < 0.03);
    }

    #[test]
    fn monte_carlo_matches_em_law() {
        let spec = unit_spec();
        let d = ExactDenoiser::new(
            DataModel::GaussianShift(
                GaussianShift::new(scalar_field(0.7), vec![0.6]).unwrap(),
            ),
            spec.clone(),
        )
        .unwrap();
        let grid = TimeGrid::new(4.0, 20).unwrap();
        let oracle = em_law_final(&spec, &grid, &d).unwrap();
        let n = 100_000;
        let samples = sample_backward_batch(&spec, &grid, &d, n, |i| {
            stream(4242, StreamPurpose::BackwardSample, i)
        })
        .unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in &samples {
            sum += s.coeffs()[0];
            sq += s.coeffs()[0] * s.coeffs()[0];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let se_mean = (oracle.var[0] / n as f64).sqrt();
        let se_var = oracle.var[0] * (2.0 / n as f64).sqrt();
        assert!(
            (mean - oracle.mean.coeffs()[0]).abs() < 4.0 * se_mean,
            "mean {mean} oracle {}",
            oracle.mean.coeffs()[0]
        );
        assert!(
            (var - oracle.var[0]).abs() < 4.0 * se_var,
            "var {var} oracle {}",
            oracle.var[0]
        );
    }

    #[test]
    fn single_atom_denoiser_contracts_to_atom() {
        let spec = unit_spec();
        let atom = 1.4;
        let d = ExactDenoiser::new(
            DataModel::Empirical(Empirical::new(vec![scalar_field(atom)]).unwrap()),
            spec.clone(),
        )
        .unwrap();
        let grid = TimeGrid::new(8.0, 80).unwrap();
        let n = 10_000;
        let samples = sample_backward_batch(&spec, &grid, &d, n, |i| {
            stream(7, StreamPurpose::BackwardSample, i)
        })
        .unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in &samples {
            sum += s.coeffs()[0];
            sq += s.coeffs()[0] * s.coeffs()[0];
        }
        let mean = sum / n as f64;
        let sd = (sq / n as f64 - mean * mean).sqrt();
        assert!(
            (mean - atom).abs() < 5.0 * sd / (n as f64).sqrt(),
            "mean {mean} vs atom {atom} (sd {sd})"
        );
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let spec = unit_spec();
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let d = stationary_denoiser(&spec);
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let a = sample_backward(&spec, &grid, &d, &mut rng_a).unwrap();
        let b = sample_backward(&spec, &grid, &d, &mut rng_b).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
    }

    #[test]
    fn backward_marginals_track_forward_marginals() {
        // the law at backward time t approximates the forward marginal at
        // T - t, with error shrinking as h does
        let spec = unit_spec();
        let model = GaussianShift::new(scalar_field(0.9), vec![0.5]).unwrap();
        let d = ExactDenoiser::new(DataModel::GaussianShift(model.clone()), spec.clone()).unwrap();
        let t_horizon = 6.0;
        let mut worst_by_h = Vec::new();
        for steps in [60usize, 120, 240] {
            let grid = TimeGrid::new(t_horizon, steps).unwrap();
            let path = em_law_path(&spec, &grid, &d).unwrap();
            let mut worst: f64 = 0.0;
            for j in (steps / 6..=steps).step_by(steps / 6) {
                let forward_t = t_horizon - grid.time(j);
                let fwd = marginal_law_gaussian(
                    &model.mean,
                    &model.var_by_ell,
                    &spec,
                    forward_t,
                )
                .unwrap();
                worst = worst
                    .max((path[j].mean.coeffs()[0] - fwd.mean.coeffs()[0]).abs())
                    .max((path[j].var[0] - fwd.var[0]).abs());
            }
            worst_by_h.push(worst);
        }
        assert!(worst_by_h[1] < worst_by_h[0]);
        assert!(worst_by_h[2] < worst_by_h[1]);
        // the T-x comparison ignores the e^{-T} initialisation gap, which is
        // far below the discretisation error here
        assert!(worst_by_h[0] < 0.05, "O(h) error too large: {worst_by_h:?}");
    }

    #[test]
    fn steps_stay_finite_for_coarse_grids() {
        let spec = unit_spec();
        let d = stationary_denoiser(&spec);
        for steps_per_unit in [1usize, 2, 4] {
            let grid = TimeGrid::new(4.0, 4 * steps_per_unit).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let y = sample_backward(&spec, &grid, &d, &mut rng).unwrap();
            assert!(y.coeffs()[0].is_finite());
        }
    }

    #[test]
    fn learned_affine_law_matches_exact_when_initialised_at_truth() {
        // AffineByTime initialised at the stationary denoiser realises the
        // same chain as the exact stationary denoiser
        let spec = unit_spec();
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let learned = crate::learn::AffineByTime::new(&spec, &grid).unwrap();
        let exact = stationary_denoiser(&spec);
        let a = em_law_final(&spec, &grid, &learned).unwrap();
        let b = em_law_final(&spec, &grid, &exact).unwrap();
        assert_abs_diff_eq!(a.var[0], b.var[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a.mean.coeffs()[0], b.mean.coeffs()[0], epsilon = 1e-12);
    }
}
