//! Real spherical harmonics, Gauss-Legendre quadrature on the sphere and
//! the transforms between grid-sampled fields and harmonic coefficients.
//!
//! Convention: `Y_{l,0} = sqrt((2l+1)/4pi) P_l(cos theta)`, and for `m > 0`
//!
//! ```text
//! Y_{l, m} = sqrt(2) N_{l,m} P_l^m(cos theta) cos(m phi)
//! Y_{l,-m} = sqrt(2) N_{l,m} P_l^m(cos theta) sin(m phi)
//! ```
//!
//! with `N_{l,m} = sqrt((2l+1)/4pi * (l-m)!/(l+m)!)` and the Condon-Shortley
//! phase `(-1)^m` folded into `P_l^m`. The basis is orthonormal with respect
//! to the surface measure of total mass `4pi`. The normalisation is carried
//! inside the three-term recurrence so no factorial is ever formed.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A degree/order pair `(l, m)` with `|m| <= l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HarmonicIndex {
    ell: u32,
    m: i32,
}

impl HarmonicIndex {
    pub fn new(ell: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > ell {
            return Err(Error::InvalidIndex { ell, m });
        }
        Ok(HarmonicIndex { ell, m })
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn m(&self) -> i32 {
        self.m
    }

    /// Flat position `l^2 + (m + l)`; bijective onto `0..(L+1)^2` for `l <= L`.
    pub fn flat(&self) -> usize {
        let l = self.ell as usize;
        l * l + (self.m + self.ell as i32) as usize
    }

    /// Inverse of [`HarmonicIndex::flat`].
    pub fn from_flat(flat: usize) -> Self {
        let ell = (flat as f64).sqrt() as u32;
        // Guard against rounding at perfect squares.
        let ell = if ((ell + 1) as usize).pow(2) <= flat {
            ell + 1
        } else if (ell as usize).pow(2) > flat {
            ell - 1
        } else {
            ell
        };
        let m = flat as i64 - (ell as i64) * (ell as i64) - ell as i64;
        HarmonicIndex {
            ell,
            m: m as i32,
        }
    }
}

/// Number of coefficients of a band-limited field: `(L+1)^2`.
pub fn coeff_count(band_limit: u32) -> usize {
    ((band_limit + 1) as usize).pow(2)
}

/// A spherical field given by its harmonic coefficients up to a band limit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffField {
    band_limit: u32,
    coeffs: Vec<f64>,
}

impl CoeffField {
    pub fn zeros(band_limit: u32) -> Self {
        CoeffField {
            band_limit,
            coeffs: vec![0.0; coeff_count(band_limit)],
        }
    }

    pub fn from_coeffs(band_limit: u32, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != coeff_count(band_limit) {
            return Err(Error::domain(format!(
                "coefficient vector has length {}, band limit {} needs {}",
                coeffs.len(),
                band_limit,
                coeff_count(band_limit)
            )));
        }
        Ok(CoeffField { band_limit, coeffs })
    }

    pub fn band_limit(&self) -> u32 {
        self.band_limit
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, idx: HarmonicIndex) -> f64 {
        self.coeffs[idx.flat()]
    }

    pub fn set(&mut self, idx: HarmonicIndex, value: f64) {
        self.coeffs[idx.flat()] = value;
    }

    /// Degree of the coefficient at a flat position.
    pub fn ell_of_flat(flat: usize) -> u32 {
        HarmonicIndex::from_flat(flat).ell()
    }

    /// Sum of squared coefficients; equals the squared L2(S2) norm of the
    /// synthesised field by Parseval.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum()
    }

    /// Iterate `(index, value)` pairs in flat order.
    pub fn iter(&self) -> impl Iterator<Item = (HarmonicIndex, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(flat, &v)| (HarmonicIndex::from_flat(flat), v))
    }
}

/// Gauss-Legendre colatitudes crossed with equispaced longitudes.
///
/// Quadrature weights integrate products of harmonics up to degree `2L`
/// exactly when `n_theta >= L+1` and `n_phi >= 2L+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    cos_thetas: Vec<f64>,
    theta_weights: Vec<f64>,
    phis: Vec<f64>,
    phi_weight: f64,
}

impl SphereGrid {
    /// Grid with explicit node counts.
    pub fn with_nodes(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::domain("grid needs at least one node per axis"));
        }
        let (nodes, weights) = gauss_legendre(n_theta);
        let phis = (0..n_phi)
            .map(|k| 2.0 * PI * k as f64 / n_phi as f64)
            .collect();
        Ok(SphereGrid {
            cos_thetas: nodes,
            theta_weights: weights,
            phis,
            phi_weight: 2.0 * PI / n_phi as f64,
        })
    }

    /// Default grid for a band limit: one node of margin on each axis.
    pub fn for_band_limit(band_limit: u32) -> Self {
        let l = band_limit as usize;
        SphereGrid::with_nodes(l + 2, 2 * l + 2).expect("node counts are positive")
    }

    /// Smallest grid that still resolves the band limit exactly.
    pub fn minimal(band_limit: u32) -> Self {
        let l = band_limit as usize;
        SphereGrid::with_nodes(l + 1, 2 * l + 1).expect("node counts are positive")
    }

    pub fn n_theta(&self) -> usize {
        self.cos_thetas.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phis.len()
    }

    pub fn cos_thetas(&self) -> &[f64] {
        &self.cos_thetas
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.cos_thetas.iter().map(|x| x.acos()).collect()
    }

    pub fn theta_weights(&self) -> &[f64] {
        &self.theta_weights
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn phi_weight(&self) -> f64 {
        self.phi_weight
    }

    /// Total quadrature mass; 4pi up to roundoff.
    pub fn total_weight(&self) -> f64 {
        self.theta_weights.iter().sum::<f64>() * self.phi_weight * self.n_phi() as f64
    }

    /// Whether products of harmonics up to this band limit integrate exactly.
    pub fn resolves(&self, band_limit: u32) -> bool {
        self.n_theta() >= band_limit as usize + 1 && self.n_phi() >= 2 * band_limit as usize + 1
    }

    fn require_resolves(&self, band_limit: u32) -> Result<()> {
        if self.resolves(band_limit) {
            Ok(())
        } else {
            Err(Error::GridTooCoarse {
                band_limit,
                need_theta: band_limit as usize + 1,
                need_phi: 2 * band_limit as usize + 1,
                have_theta: self.n_theta(),
                have_phi: self.n_phi(),
            })
        }
    }
}

/// A field sampled on a [`SphereGrid`], row-major over `(theta_i, phi_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: SphereGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: SphereGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_theta() * grid.n_phi() {
            return Err(Error::domain(format!(
                "grid field has {} values, grid is {} x {}",
                values.len(),
                grid.n_theta(),
                grid.n_phi()
            )));
        }
        Ok(GridField { grid, values })
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i_theta: usize, k_phi: usize) -> f64 {
        self.values[i_theta * self.grid.n_phi() + k_phi]
    }

    /// Quadrature approximation of `integral f^2 dvol`.
    pub fn norm_sq_quadrature(&self) -> f64 {
        let n_phi = self.grid.n_phi();
        let mut total = 0.0;
        for (i, w) in self.grid.theta_weights.iter().enumerate() {
            for k in 0..n_phi {
                let v = self.values[i * n_phi + k];
                total += w * self.grid.phi_weight * v * v;
            }
        }
        total
    }
}

/// Evaluate one real spherical harmonic at a point of the sphere.
pub fn eval_harmonic(idx: HarmonicIndex, theta: f64, phi: f64) -> f64 {
    let x = theta.cos();
    let s = theta.sin();
    let m_abs = idx.m().unsigned_abs();
    let q = normalized_legendre(idx.ell(), m_abs, x, s);
    if idx.m() == 0 {
        q
    } else if idx.m() > 0 {
        std::f64::consts::SQRT_2 * q * (m_abs as f64 * phi).cos()
    } else {
        std::f64::consts::SQRT_2 * q * (m_abs as f64 * phi).sin()
    }
}

/// Normalised associated Legendre `N_{l,m} P_l^m(x)` (Condon-Shortley phase
/// included) climbing first the diagonal and then the degree.
fn normalized_legendre(ell: u32, m: u32, x: f64, s: f64) -> f64 {
    debug_assert!(m <= ell);
    // Q_m^m
    let mut q_diag = (1.0 / (4.0 * PI)).sqrt();
    for k in 1..=m {
        q_diag *= -((2.0 * k as f64 + 1.0) / (2.0 * k as f64)).sqrt() * s;
    }
    if ell == m {
        return q_diag;
    }
    // Q_{m+1}^m
    let mut q_prev = q_diag;
    let mut q_cur = (2.0 * m as f64 + 3.0).sqrt() * x * q_diag;
    if ell == m + 1 {
        return q_cur;
    }
    let mut alpha_prev = (2.0 * m as f64 + 3.0).sqrt();
    for l in (m + 2)..=ell {
        let lf = l as f64;
        let mf = m as f64;
        let alpha = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let beta = alpha / alpha_prev;
        let q_next = alpha * x * q_cur - beta * q_prev;
        q_prev = q_cur;
        q_cur = q_next;
        alpha_prev = alpha;
    }
    q_cur
}

/// Table of `N_{l,m} P_l^m(x)` for all `l <= band_limit`, `0 <= m <= l`,
/// addressed by `[tri(l) + m]` with `tri(l) = l(l+1)/2`.
fn legendre_table(band_limit: u32, x: f64, s: f64, out: &mut [f64]) {
    let lmax = band_limit as usize;
    debug_assert_eq!(out.len(), (lmax + 1) * (lmax + 2) / 2);
    let tri = |l: usize| l * (l + 1) / 2;
    let mut q_diag = (1.0 / (4.0 * PI)).sqrt();
    out[0] = q_diag;
    for m in 0..=lmax {
        if m > 0 {
            q_diag *= -((2.0 * m as f64 + 1.0) / (2.0 * m as f64)).sqrt() * s;
            out[tri(m) + m] = q_diag;
        }
        if m + 1 <= lmax {
            out[tri(m + 1) + m] = (2.0 * m as f64 + 3.0).sqrt() * x * q_diag;
        }
        let mut alpha_prev = (2.0 * m as f64 + 3.0).sqrt();
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let alpha = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let beta = alpha / alpha_prev;
            out[tri(l) + m] = alpha * x * out[tri(l - 1) + m] - beta * out[tri(l - 2) + m];
            alpha_prev = alpha;
        }
    }
}

/// All `(L+1)^2` real harmonics at one point, in flat-index order.
pub fn harmonic_row(band_limit: u32, cos_theta: f64, phi: f64, row: &mut [f64]) {
    let lmax = band_limit as usize;
    debug_assert_eq!(row.len(), coeff_count(band_limit));
    let s = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let tri = |l: usize| l * (l + 1) / 2;
    let mut q = vec![0.0; (lmax + 1) * (lmax + 2) / 2];
    legendre_table(band_limit, cos_theta, s, &mut q);
    for l in 0..=lmax {
        let base = l * l + l;
        row[base] = q[tri(l)]; // m = 0
        for m in 1..=l {
            let qlm = q[tri(l) + m];
            let c = std::f64::consts::SQRT_2 * qlm * (m as f64 * phi).cos();
            let sn = std::f64::consts::SQRT_2 * qlm * (m as f64 * phi).sin();
            row[base + m] = c;
            row[base - m] = sn;
        }
    }
}

/// Sum the truncated harmonic expansion at every grid node.
pub fn synthesize(coeffs: &CoeffField, grid: &SphereGrid) -> GridField {
    let n_phi = grid.n_phi();
    let n = coeffs.len();
    let mut values = vec![0.0; grid.n_theta() * n_phi];
    let mut row = vec![0.0; n];
    for (i, &x) in grid.cos_thetas.iter().enumerate() {
        for (k, &phi) in grid.phis.iter().enumerate() {
            harmonic_row(coeffs.band_limit(), x, phi, &mut row);
            let mut acc = 0.0;
            for (a, y) in coeffs.coeffs().iter().zip(row.iter()) {
                acc += a * y;
            }
            values[i * n_phi + k] = acc;
        }
    }
    GridField { grid: grid.clone(), values }
}

/// Project a sampled field back onto the harmonics by quadrature.
///
/// Exact (to roundoff) when the input is band-limited at `band_limit` and
/// the grid resolves it.
pub fn analyze(field: &GridField, band_limit: u32) -> Result<CoeffField> {
    field.grid.require_resolves(band_limit)?;
    let n = coeff_count(band_limit);
    let n_phi = field.grid.n_phi();
    let mut coeffs = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (i, &x) in field.grid.cos_thetas.iter().enumerate() {
        let w_theta = field.grid.theta_weights[i];
        for (k, &phi) in field.grid.phis.iter().enumerate() {
            harmonic_row(band_limit, x, phi, &mut row);
            let w = w_theta * field.grid.phi_weight * field.values[i * n_phi + k];
            for (c, y) in coeffs.iter_mut().zip(row.iter()) {
                *c += w * y;
            }
        }
    }
    CoeffField::from_coeffs(band_limit, coeffs)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative by the recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n == 1 {
        nodes[0] = 0.0;
        weights[0] = 2.0;
    }
    (nodes, weights)
}
