//! Stability diagnostics of a finite evolution matrix `M`.
//!
//! `s(M) = Σₜ ‖Mᵗ‖`, `p(M) = supₜ ‖Mᵗ‖`, the Kreiss constant
//! `η(M) = sup_{|z|>1} (|z| - 1) ‖(M - zI)⁻¹‖` and the distance to instability
//! `d(M) = inf_{|z|≥1} σ_min(M - zI)`. All norms are matrix 2-norms of `M`,
//! which stand in for the operator norms of the underlying estimator.
//!
//! `η` and `d` are grid estimates with the resolution recorded in the report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{check_finite, op_norm_2, smallest_singular_shifted, Complex64, Matrix};
use crate::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Target for the certified remainder of the cumulative norm.
pub const S_TOL: f64 = 1e-8;

/// Power norms beyond this size end the profile without a certificate.
pub const GROWTH_CUTOFF: f64 = 1e100;

/// Dense SVD is used below this size; inverse iteration above.
const DENSE_SVD_MAX: usize = 96;

fn check_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!("evolution matrix is {:?}", m.shape())));
    }
    check_finite(m, "evolution matrix")
}

fn norm2(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.nrows() <= DENSE_SVD_MAX {
        if let Some(svd) = m.clone().try_svd(false, false, f64::EPSILON, 0) {
            return Ok(svd.singular_values.max());
        }
    }
    op_norm_2(m)
}

fn sigma_min(m: &Matrix, z: Complex64) -> Result<f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(z.norm());
    }
    if n <= DENSE_SVD_MAX {
        let shifted = m.map(|v| Complex64::new(v, 0.0)) - crate::numerics::ComplexMatrix::identity(n, n) * z;
        if let Some(svd) = shifted.try_svd(false, false, f64::EPSILON, 0) {
            return Ok(svd.singular_values.min());
        }
    }
    smallest_singular_shifted(m, z)
}

pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    check_square(m)?;
    crate::numerics::spectral_radius(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    /// `‖Mᵗ‖₂` for `t = 0..=stop`.
    pub norms: Vec<f64>,
    pub p_hat: f64,
    /// Partial sum of `norms`; `None` when no power contracted.
    pub s_hat: Option<f64>,
    /// Upper bound on `Σ_{t>stop} ‖Mᵗ‖`.
    pub s_remainder: Option<f64>,
    /// Remainder bound reached [`S_TOL`], which also makes `p_hat` exact.
    pub certified: bool,
}

/// Powers of `M` until the geometric tail bound certifies the remainder of
/// `Σ‖Mᵗ‖` below [`S_TOL`], `max_t` is reached, or the norms exceed
/// [`GROWTH_CUTOFF`].
///
/// If `q = ‖M^ℓ‖ < 1` for some `ℓ ≤ t`, every later power is a product of a
/// power of `M^ℓ` with one of the last `ℓ` computed powers, so
/// `Σ_{k>t} ‖Mᵏ‖ ≤ q/(1-q) · Σ_{k=t-ℓ+1..t} ‖Mᵏ‖`.
pub fn power_norm_profile(m: &Matrix, max_t: usize) -> Result<PowerProfile> {
    check_square(m)?;
    let n = m.nrows();
    let mut norms = vec![1.0];
    let mut prefix = vec![1.0];
    let mut power = Matrix::identity(n, n);
    let mut first_contraction: Option<usize> = None;
    let mut best_contraction: Option<usize> = None;
    let mut remainder: Option<f64> = None;
    for t in 1..=max_t {
        power = &power * m;
        let norm = norm2(&power)?;
        if !norm.is_finite() {
            return Err(Error::NonFinite("matrix power"));
        }
        norms.push(norm);
        prefix.push(prefix[t - 1] + norm);
        if norm < 1.0 {
            first_contraction.get_or_insert(t);
            if best_contraction.is_none_or(|b| norm < norms[b]) {
                best_contraction = Some(t);
            }
        }
        let bound = [first_contraction, best_contraction, (norm < 1.0).then_some(t)]
            .into_iter()
            .flatten()
            .map(|l| {
                let q = norms[l];
                q / (1.0 - q) * (prefix[t] - prefix[t - l])
            })
            .fold(f64::INFINITY, f64::min);
        if bound.is_finite() {
            remainder = Some(bound);
        }
        if norm == 0.0 || bound <= S_TOL || norm > GROWTH_CUTOFF {
            break;
        }
    }
    let certified = remainder.is_some_and(|r| r <= S_TOL);
    let p_hat = norms.iter().copied().fold(0.0, f64::max);
    let partial = *prefix.last().unwrap();
    Ok(PowerProfile {
        norms,
        p_hat,
        s_hat: remainder.map(|_| partial),
        s_remainder: remainder,
        certified,
    })
}

/// Radius and angle schedule for the Kreiss estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KreissGrid {
    /// Radii are `1 + 10^k` for `k` from `min_exponent` to `max_exponent`.
    pub min_exponent: f64,
    pub max_exponent: f64,
    pub radii_per_decade: usize,
    pub angles: usize,
    pub refinement_rounds: usize,
    /// Grid maxima used as starting points for refinement.
    pub refinement_starts: usize,
}

impl Default for KreissGrid {
    fn default() -> Self {
        Self {
            min_exponent: -6.0,
            max_exponent: 2.0,
            radii_per_decade: 4,
            angles: 256,
            refinement_rounds: 2,
            refinement_starts: 4,
        }
    }
}

impl KreissGrid {
    /// Twice the density in both radius and angle.
    pub fn doubled(&self) -> Self {
        Self {
            radii_per_decade: self.radii_per_decade * 2,
            angles: self.angles * 2,
            ..self.clone()
        }
    }

    fn exponents(&self) -> Vec<f64> {
        let steps = ((self.max_exponent - self.min_exponent) * self.radii_per_decade as f64).round()
            as usize;
        (0..=steps)
            .map(|i| self.min_exponent + i as f64 / self.radii_per_decade as f64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.angles == 0 || self.radii_per_decade == 0 || self.max_exponent < self.min_exponent {
            return Err(Error::invalid("empty Kreiss grid"));
        }
        Ok(())
    }
}

fn kreiss_objective(m: &Matrix, exponent: f64, theta: f64) -> Result<f64> {
    let excess = 10f64.powf(exponent);
    let z = Complex64::from_polar(1.0 + excess, theta);
    let s = sigma_min(m, z)?;
    Ok(if s == 0.0 { f64::INFINITY } else { excess / s })
}

/// Lower estimate of the Kreiss constant.
///
/// The objective tends to 1 as `|z| → ∞`, so that limit is included and the
/// estimate is never below 1.
pub fn kreiss_constant(m: &Matrix, grid: &KreissGrid) -> Result<f64> {
    check_square(m)?;
    grid.validate()?;
    let exponents = grid.exponents();
    let angle_step = std::f64::consts::TAU / grid.angles as f64;
    let mut samples: Vec<(f64, f64, f64)> = exponents
        .par_iter()
        .flat_map_iter(|&e| (0..grid.angles).map(move |k| (e, k as f64 * angle_step)))
        .map(|(e, th)| kreiss_objective(m, e, th).map(|v| (v, e, th)))
        .collect::<Result<_>>()?;
    samples.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let mut best = samples.first().map_or(1.0, |s| s.0).max(1.0);

    // Pattern search in (log₁₀(|z|-1), θ) around the best grid points.
    let radius_step = 1.0 / grid.radii_per_decade as f64;
    let starts: Vec<(f64, f64, f64)> = samples.iter().take(grid.refinement_starts).copied().collect();
    for start in starts {
        let (mut val, mut e, mut th) = start;
        let (mut de, mut dth) = (radius_step, angle_step);
        for _ in 0..grid.refinement_rounds {
            for _ in 0..60 {
                let mut moved = false;
                for (se, st) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                    let ne = (e + se * de).clamp(grid.min_exponent, grid.max_exponent);
                    let nt = th + st * dth;
                    let v = kreiss_objective(m, ne, nt)?;
                    if v > val {
                        (val, e, th) = (v, ne, nt);
                        moved = true;
                    }
                }
                if !moved {
                    de *= 0.5;
                    dth *= 0.5;
                    if de < 1e-9 && dth < 1e-9 {
                        break;
                    }
                }
            }
            de = radius_step * 0.5;
            dth = angle_step * 0.5;
        }
        best = best.max(val);
    }
    Ok(best)
}

/// Angle grid and golden-section refinement for the distance to instability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleGrid {
    pub angles: usize,
    pub refinement_starts: usize,
    pub angle_tol: f64,
}

impl Default for CircleGrid {
    fn default() -> Self {
        Self {
            angles: 256,
            refinement_starts: 4,
            angle_tol: 1e-10,
        }
    }
}

/// `inf_{|z|≥1} σ_min(M - zI)`: zero when `ρ(M) ≥ 1`, otherwise attained on
/// the unit circle.
pub fn distance_to_instability(m: &Matrix, grid: &CircleGrid) -> Result<f64> {
    check_square(m)?;
    if grid.angles == 0 {
        return Err(Error::invalid("empty angle grid"));
    }
    if spectral_radius(m)? >= 1.0 {
        return Ok(0.0);
    }
    let f = |th: f64| sigma_min(m, Complex64::from_polar(1.0, th));
    let step = std::f64::consts::TAU / grid.angles as f64;
    let values: Vec<f64> = (0..grid.angles)
        .into_par_iter()
        .map(|k| f(k as f64 * step))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..grid.angles).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut best = values[order[0]];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for &k in order.iter().take(grid.refinement_starts) {
        let center = k as f64 * step;
        let (mut a, mut b) = (center - step, center + step);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        while b - a > grid.angle_tol {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d)?;
            }
        }
        best = best.min(fc).min(fd);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Check {
    pub rank: usize,
    pub p_hat: f64,
    /// `½ exp(2 r ‖M‖ / (1 - ρ) + 1)`; infinite when `ρ ≥ 1`.
    pub bound: f64,
    pub holds: bool,
}

/// Checks the finite-rank bound `p(M) ≤ ½ exp(2 r ‖M‖/(1 - ρ) + 1)`.
pub fn lemma2_bound_check(m: &Matrix, rank: usize, p_hat: f64) -> Result<Lemma2Check> {
    check_square(m)?;
    let rho = spectral_radius(m)?;
    let bound = if rho < 1.0 {
        0.5 * (2.0 * rank as f64 * norm2(m)? / (1.0 - rho) + 1.0).exp()
    } else {
        f64::INFINITY
    };
    Ok(Lemma2Check {
        rank,
        p_hat,
        bound,
        holds: rho < 1.0 && p_hat <= bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Marginal,
    Unstable,
}

/// Distance of `ρ` from 1 within which the verdict is marginal.
pub const MARGINAL_TOL: f64 = 1e-9;

impl Verdict {
    pub fn from_radius(rho: f64) -> Self {
        if rho < 1.0 - MARGINAL_TOL {
            Verdict::Stable
        } else if rho <= 1.0 + MARGINAL_TOL {
            Verdict::Marginal
        } else {
            Verdict::Unstable
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub max_steps: usize,
    pub kreiss: KreissGrid,
    pub circle: CircleGrid,
    /// Rank for the finite-rank bound check; skipped when absent.
    pub rank: Option<usize>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            max_steps: 20_000,
            kreiss: KreissGrid::default(),
            circle: CircleGrid::default(),
            rank: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub format_version: u32,
    pub scope: String,
    pub dimension: usize,
    pub rho: f64,
    pub verdict: Verdict,
    pub power_norms: Vec<f64>,
    pub p_hat: f64,
    pub s_hat: Option<f64>,
    pub s_remainder: Option<f64>,
    pub certified: bool,
    pub eta_hat: f64,
    pub d_hat: f64,
    /// `(e/2) η̂²`, the upper half of `η ≤ p ≤ (e/2) η²`.
    pub p_upper_from_eta: f64,
    pub lemma2: Option<Lemma2Check>,
    pub options: SpectralOptions,
}

pub fn spectral_report(m: &Matrix, options: &SpectralOptions) -> Result<SpectralReport> {
    check_square(m)?;
    let rho = spectral_radius(m)?;
    let profile = power_norm_profile(m, options.max_steps)?;
    let eta_hat = kreiss_constant(m, &options.kreiss)?;
    let d_hat = distance_to_instability(m, &options.circle)?;
    let lemma2 = options
        .rank
        .map(|r| lemma2_bound_check(m, r, profile.p_hat))
        .transpose()?;
    Ok(SpectralReport {
        format_version: REPORT_FORMAT_VERSION,
        scope: "evolution-matrix diagnostics".into(),
        dimension: m.nrows(),
        rho,
        verdict: Verdict::from_radius(rho),
        power_norms: profile.norms,
        p_hat: profile.p_hat,
        s_hat: profile.s_hat,
        s_remainder: profile.s_remainder,
        certified: profile.certified,
        eta_hat,
        d_hat,
        p_upper_from_eta: std::f64::consts::E / 2.0 * eta_hat * eta_hat,
        lemma2,
        options: options.clone(),
    })
}
