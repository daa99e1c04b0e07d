//! Data-distribution families with exact Bayes denoisers, the score they
//! induce, and their closed-form KL / Fisher-information diagnostics.
//!
//! A denoiser maps `(t, X_t)` to a prediction of `E[X_0 | X_t]`; the score
//! of the noised marginal is recovered from it as
//! `V = (d(t, x) - e^{-t/2} x) / sigma_t` with `sigma_t = e^{t/2} - e^{-t/2}`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forward::DiagGaussian;
use crate::harmonics::CoeffField;
use crate::spectrum::Spectrum;

/// Coefficientwise Gaussian data: per-coefficient mean, per-degree variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianShift {
    pub mean: CoeffField,
    /// Variance `s_l` of every degree-`l` coefficient; `s_l = 0` degenerates
    /// to a deterministic coefficient and makes KL diagnostics infinite.
    pub var_by_ell: Vec<f64>,
}

/// Mixture of Gaussian shifts with a shared variance profile.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<CoeffField>,
    pub var_by_ell: Vec<f64>,
}

/// Finitely many atoms with uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    pub atoms: Vec<CoeffField>,
}

/// A family of data distributions over coefficient fields.
#[derive(Debug, Clone, PartialEq)]
pub enum DataModel {
    GaussianShift(GaussianShift),
    GaussianMixture(GaussianMixture),
    Empirical(Empirical),
}

impl GaussianShift {
    pub fn new(mean: CoeffField, var_by_ell: Vec<f64>) -> Result<Self> {
        let model = GaussianShift { mean, var_by_ell };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        validate_var_profile(&self.var_by_ell, self.mean.band_limit())
    }

    pub fn band_limit(&self) -> u32 {
        self.mean.band_limit()
    }

    /// The data law as a diagonal Gaussian in coefficient space.
    pub fn law(&self) -> DiagGaussian {
        let var = (0..self.mean.len())
            .map(|flat| self.var_by_ell[CoeffField::ell_of_flat(flat) as usize])
            .collect();
        DiagGaussian::new(self.mean.clone(), var).expect("validated profile")
    }

    fn var_of_flat(&self, flat: usize) -> f64 {
        self.var_by_ell[CoeffField::ell_of_flat(flat) as usize]
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<CoeffField>, var_by_ell: Vec<f64>) -> Result<Self> {
        let model = GaussianMixture {
            weights,
            means,
            var_by_ell,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.weights.len() != self.means.len() {
            return Err(Error::domain(
                "mixture needs matching, nonempty weight and mean lists",
            ));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::domain("mixture weights must be positive"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let band = self.means[0].band_limit();
        if self.means.iter().any(|m| m.band_limit() != band) {
            return Err(Error::domain("mixture means have mixed band limits"));
        }
        validate_var_profile(&self.var_by_ell, band)
    }

    pub fn band_limit(&self) -> u32 {
        self.means[0].band_limit()
    }

    /// `sum_i w_i mean_i`.
    pub fn mean(&self) -> CoeffField {
        let mut out = CoeffField::zeros(self.band_limit());
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, &a) in out.coeffs_mut().iter_mut().zip(m.coeffs()) {
                *o += w * a;
            }
        }
        out
    }
}

impl Empirical {
    pub fn new(atoms: Vec<CoeffField>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::domain("empirical model needs at least one atom"));
        }
        let band = atoms[0].band_limit();
        if atoms.iter().any(|a| a.band_limit() != band) {
            return Err(Error::domain("empirical atoms have mixed band limits"));
        }
        Ok(Empirical { atoms })
    }

    pub fn band_limit(&self) -> u32 {
        self.atoms[0].band_limit()
    }
}

fn validate_var_profile(var_by_ell: &[f64], band_limit: u32) -> Result<()> {
    if var_by_ell.len() != band_limit as usize + 1 {
        return Err(Error::domain(format!(
            "variance profile has {} entries, band limit {} needs {}",
            var_by_ell.len(),
            band_limit,
            band_limit + 1
        )));
    }
    if var_by_ell.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::domain("variance profile entries must be >= 0"));
    }
    Ok(())
}

impl DataModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            DataModel::GaussianShift(m) => m.validate(),
            DataModel::GaussianMixture(m) => m.validate(),
            DataModel::Empirical(m) => {
                if m.atoms.is_empty() {
                    Err(Error::domain("empirical model needs at least one atom"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn band_limit(&self) -> u32 {
        match self {
            DataModel::GaussianShift(m) => m.band_limit(),
            DataModel::GaussianMixture(m) => m.band_limit(),
            DataModel::Empirical(m) => m.band_limit(),
        }
    }

    /// Whether `KL(data | prior)` is finite, i.e. the data law is absolutely
    /// continuous with respect to the noise measure.
    pub fn kl_defined(&self) -> bool {
        match self {
            DataModel::GaussianShift(m) => m.var_by_ell.iter().all(|&s| s > 0.0),
            DataModel::GaussianMixture(m) => m.var_by_ell.iter().all(|&s| s > 0.0),
            DataModel::Empirical(_) => false,
        }
    }
}

/// Draw one sample from the data distribution.
pub fn sample_data<R: Rng + ?Sized>(model: &DataModel, rng: &mut R) -> CoeffField {
    match model {
        DataModel::GaussianShift(m) => gaussian_component(&m.mean, &m.var_by_ell, rng),
        DataModel::GaussianMixture(m) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = m.means.len() - 1;
            for (i, w) in m.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            gaussian_component(&m.means[pick], &m.var_by_ell, rng)
        }
        DataModel::Empirical(m) => {
            let pick = rng.random_range(0..m.atoms.len());
            m.atoms[pick].clone()
        }
    }
}

fn gaussian_component<R: Rng + ?Sized>(
    mean: &CoeffField,
    var_by_ell: &[f64],
    rng: &mut R,
) -> CoeffField {
    let mut out = CoeffField::zeros(mean.band_limit());
    for (flat, &mu) in mean.coeffs().iter().enumerate() {
        let sd = var_by_ell[CoeffField::ell_of_flat(flat) as usize].sqrt();
        let z: f64 = rng.sample(StandardNormal);
        out.coeffs_mut()[flat] = mu + sd * z;
    }
    out
}

/// `sigma_t = e^{t/2} - e^{-t/2}`, the score normalisation of the
/// time-reversed drift.
pub fn sigma(t: f64) -> f64 {
    (t / 2.0).exp() - (-t / 2.0).exp()
}

/// Anything that predicts the clean field from a noisy one at a given
/// forward time.
pub trait Denoiser {
    fn band_limit(&self) -> u32;

    /// Approximation of `E[X_0 | X_t = x]`; requires `t > 0`.
    fn denoise(&self, t: f64, x: &CoeffField) -> Result<CoeffField>;
}

/// A denoiser that acts coefficientwise as `x -> gain * x + offset`.
///
/// Exact Gaussian denoisers and the per-time affine learned model are of
/// this form, which lets the backward sampler propagate exact Gaussian laws.
pub trait DiagAffineDenoiser: Denoiser {
    /// `(gain, offset)` per flat coefficient at forward time `t > 0`.
    fn diag_affine(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// The exact Bayes denoiser of a [`DataModel`] under the forward dynamics.
#[derive(Debug, Clone)]
pub struct ExactDenoiser {
    model: DataModel,
    spec: Spectrum,
}

impl ExactDenoiser {
    pub fn new(model: DataModel, spec: Spectrum) -> Result<Self> {
        model.validate()?;
        if model.band_limit() != spec.band_limit() {
            return Err(Error::domain(format!(
                "band limit mismatch: data {} vs spectrum {}",
                model.band_limit(),
                spec.band_limit()
            )));
        }
        if !spec.all_positive() {
            return Err(Error::domain(
                "exact denoisers need a strictly positive spectrum",
            ));
        }
        Ok(ExactDenoiser { model, spec })
    }

    pub fn model(&self) -> &DataModel {
        &self.model
    }
}

impl Denoiser for ExactDenoiser {
    fn band_limit(&self) -> u32 {
        self.model.band_limit()
    }

    fn denoise(&self, t: f64, x: &CoeffField) -> Result<CoeffField> {
        match &self.model {
            DataModel::GaussianShift(m) => gaussian_denoiser(m, &self.spec, t, x),
            DataModel::GaussianMixture(m) => {
                mixture_denoiser(&m.weights, &m.means, &m.var_by_ell, &self.spec, t, x)
            }
            DataModel::Empirical(m) => {
                let w = vec![1.0 / m.atoms.len() as f64; m.atoms.len()];
                let s = vec![0.0; self.spec.band_limit() as usize + 1];
                mixture_denoiser(&w, &m.atoms, &s, &self.spec, t, x)
            }
        }
    }
}

impl DiagAffineDenoiser for ExactDenoiser {
    fn diag_affine(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = match &self.model {
            DataModel::GaussianShift(m) => m,
            _ => {
                return Err(Error::domain(
                    "only Gaussian data has an affine exact denoiser",
                ))
            }
        };
        require_positive_time(t)?;
        let decay = (-t / 2.0).exp();
        let wet = 1.0 - decay * decay; // 1 - e^{-t}
        let n = m.mean.len();
        let mut gain = vec![0.0; n];
        let mut offset = vec![0.0; n];
        for flat in 0..n {
            let s = m.var_of_flat(flat);
            let c = self.spec.c_of_flat(flat);
            let v = decay * decay * s + c * wet;
            gain[flat] = decay * s / v;
            offset[flat] = c * wet * m.mean.coeffs()[flat] / v;
        }
        Ok((gain, offset))
    }
}

fn require_positive_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "denoiser needs a positive forward time, got {t}"
        )))
    }
}

fn check_band(x: &CoeffField, band: u32) -> Result<()> {
    if x.band_limit() != band {
        return Err(Error::domain(format!(
            "band limit mismatch: field {} vs model {}",
            x.band_limit(),
            band
        )));
    }
    Ok(())
}

/// Exact posterior mean of Gaussian data observed through the OU channel:
/// `d = (e^{-t/2} s x + C (1 - e^{-t}) mu) / (e^{-t} s + C (1 - e^{-t}))`
/// per coefficient.
pub fn gaussian_denoiser(
    model: &GaussianShift,
    spec: &Spectrum,
    t: f64,
    x: &CoeffField,
) -> Result<CoeffField> {
    require_positive_time(t)?;
    check_band(x, model.band_limit())?;
    let decay = (-t / 2.0).exp();
    let wet = 1.0 - decay * decay;
    let mut out = CoeffField::zeros(x.band_limit());
    for (flat, &xc) in x.coeffs().iter().enumerate() {
        let s = model.var_of_flat(flat);
        let c = spec.c_of_flat(flat);
        let v = decay * decay * s + c * wet;
        out.coeffs_mut()[flat] = (decay * s * xc + c * wet * model.mean.coeffs()[flat]) / v;
    }
    Ok(out)
}

/// Bayes denoiser of a Gaussian mixture (atoms when the shared variance is
/// zero): responsibility-weighted component posterior means, with the
/// responsibilities formed in log space.
pub fn mixture_denoiser(
    weights: &[f64],
    means: &[CoeffField],
    var_by_ell: &[f64],
    spec: &Spectrum,
    t: f64,
    x: &CoeffField,
) -> Result<CoeffField> {
    require_positive_time(t)?;
    if means.is_empty() || weights.len() != means.len() {
        return Err(Error::domain("mixture needs matching weights and means"));
    }
    check_band(x, means[0].band_limit())?;
    let decay = (-t / 2.0).exp();
    let wet = 1.0 - decay * decay;
    let n = x.len();

    // marginal variance of X_t per coefficient (shared across components)
    let var_t: Vec<f64> = (0..n)
        .map(|flat| {
            let s = var_by_ell[CoeffField::ell_of_flat(flat) as usize];
            decay * decay * s + spec.c_of_flat(flat) * wet
        })
        .collect();

    // log responsibilities up to a common constant
    let mut log_resp: Vec<f64> = weights
        .iter()
        .zip(means)
        .map(|(w, mean_i)| {
            let mut quad = 0.0;
            for (flat, &xc) in x.coeffs().iter().enumerate() {
                let r = xc - decay * mean_i.coeffs()[flat];
                quad += r * r / var_t[flat];
            }
            w.ln() - 0.5 * quad
        })
        .collect();
    let max_log = log_resp.iter().cloned().fold(f64::MIN, f64::max);
    let mut total = 0.0;
    for lr in log_resp.iter_mut() {
        *lr = (*lr - max_log).exp();
        total += *lr;
    }

    let mut out = CoeffField::zeros(x.band_limit());
    for (resp, mean_i) in log_resp.iter().zip(means) {
        let weight = resp / total;
        for (flat, &xc) in x.coeffs().iter().enumerate() {
            let s = var_by_ell[CoeffField::ell_of_flat(flat) as usize];
            let c = spec.c_of_flat(flat);
            let post = (decay * s * xc + c * wet * mean_i.coeffs()[flat]) / var_t[flat];
            out.coeffs_mut()[flat] += weight * post;
        }
    }
    Ok(out)
}

/// Score in coefficient coordinates, `V = (d(t, x) - e^{-t/2} x) / sigma_t`;
/// equals `C_l d/dx log rho_t(x)` for the exact denoiser.
pub fn score_from_denoiser(d: &dyn Denoiser, t: f64, x: &CoeffField) -> Result<CoeffField> {
    require_positive_time(t)?;
    let pred = d.denoise(t, x)?;
    let decay = (-t / 2.0).exp();
    let sig = sigma(t);
    let mut out = CoeffField::zeros(x.band_limit());
    for (flat, o) in out.coeffs_mut().iter_mut().enumerate() {
        *o = (pred.coeffs()[flat] - decay * x.coeffs()[flat]) / sig;
    }
    Ok(out)
}

/// `KL(data | prior)` for Gaussian data, summed over coefficients:
/// `1/2 (s/C - 1 - ln(s/C) + mu^2/C)`. Infinite when some `s_l = 0`.
pub fn kl_to_prior(model: &GaussianShift, spec: &Spectrum) -> Result<f64> {
    model.validate()?;
    check_band(&model.mean, spec.band_limit())?;
    if !spec.all_positive() {
        return Err(Error::domain("KL to prior needs a positive spectrum"));
    }
    let mut total = 0.0;
    for (flat, &mu) in model.mean.coeffs().iter().enumerate() {
        let s = model.var_of_flat(flat);
        let c = spec.c_of_flat(flat);
        if s == 0.0 {
            return Ok(f64::INFINITY);
        }
        let r = s / c;
        total += 0.5 * (r - 1.0 - r.ln() + mu * mu / c);
    }
    Ok(total)
}

/// Fisher information of Gaussian data relative to the prior, in the
/// Cameron-Martin geometry: `sum_c C_l E_data[g(a)^2]` with
/// `g(a) = a (1/(2C) - 1/(2s)) + mu/(2s)`. Infinite when some `s_l = 0`.
pub fn fisher_info(model: &GaussianShift, spec: &Spectrum) -> Result<f64> {
    model.validate()?;
    check_band(&model.mean, spec.band_limit())?;
    if !spec.all_positive() {
        return Err(Error::domain("Fisher information needs a positive spectrum"));
    }
    let mut total = 0.0;
    for (flat, &mu) in model.mean.coeffs().iter().enumerate() {
        let s = model.var_of_flat(flat);
        let c = spec.c_of_flat(flat);
        if s == 0.0 {
            return Ok(f64::INFINITY);
        }
        let p = 1.0 / (2.0 * c) - 1.0 / (2.0 * s);
        let q = mu / (2.0 * s);
        // E[(p a + q)^2] with a ~ N(mu, s)
        let e_g_sq = p * p * s + (p * mu + q).powi(2);
        total += c * e_g_sq;
    }
    Ok(total)
}
