//! Ground-truth stochastic systems: exact Ornstein-Uhlenbeck sampling and
//! flows, and a Cox-Ingersoll-Ross simulator with least-squares calibration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kernels::{scalar_points, Gaussian1d, Points};
use crate::metrics::{GaussianMixture, MixtureComponent, WeightedMeasure};
use crate::numerics::Vector;
use crate::{Error, Result};

/// Reproducible random stream: ChaCha8 keyed by a 64-bit seed, with
/// independent streams selected by a counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Stream `index` of the same master seed.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Consecutive-state training pairs `(xᵢ, yᵢ)`, one point per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePairs {
    pub x: Points,
    pub y: Points,
}

impl SamplePairs {
    pub fn new(x: Points, y: Points) -> Result<Self> {
        if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(Error::dim(format!(
                "inputs {}x{} and outputs {}x{} differ",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Empty("sample pairs"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample pairs"));
        }
        Ok(Self { x, y })
    }

    pub fn from_scalars(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(scalar_points(x), scalar_points(y))
    }

    /// Pairs `(sₜ, sₜ₊₁)` of a scalar series.
    pub fn from_series(series: &[f64]) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::Empty("series needs at least two states"));
        }
        Self::from_scalars(&series[..series.len() - 1], &series[1..])
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// `dXₜ = -θ Xₜ dt + σ dWₜ` observed every `dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            sigma: 1.0,
            dt: 0.05,
        }
    }
}

impl OuParams {
    pub fn new(theta: f64, sigma: f64, dt: f64) -> Result<Self> {
        let p = Self { theta, sigma, dt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("theta", self.theta)?;
        check_positive("sigma", self.sigma)?;
        check_positive("dt", self.dt)
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }

    pub fn invariant(&self) -> Gaussian1d {
        Gaussian1d {
            mean: 0.0,
            variance: self.stationary_variance(),
        }
    }
}

/// Law of `Xₜ` given `X₀ = x`.
pub fn ou_transition(params: &OuParams, x: f64, t: f64) -> Result<Gaussian1d> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("negative time {t}")));
    }
    if t.is_infinite() {
        return Ok(params.invariant());
    }
    let decay = (-params.theta * t).exp();
    Gaussian1d::new(
        x * decay,
        params.stationary_variance() * -(-2.0 * params.theta * t).exp_m1(),
    )
}

/// `n` i.i.d. pairs with `X` from the invariant law and `Y | X` one exact
/// transition of length `dt`.
pub fn ou_sample_pairs<R: Rng + ?Sized>(
    params: &OuParams,
    n: usize,
    rng: &mut R,
) -> Result<SamplePairs> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let inv = params.invariant();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = inv.sample(rng);
        let y = ou_transition(params, x, params.dt)?.sample(rng);
        xs.push(x);
        ys.push(y);
    }
    SamplePairs::from_scalars(&xs, &ys)
}

/// Pushes each mixture component through the OU transition of length `t`.
pub fn mixture_flow(
    params: &OuParams,
    initial: &GaussianMixture,
    t: f64,
) -> Result<GaussianMixture> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("negative time {t}")));
    }
    let decay = (-params.theta * t).exp();
    let added = params.stationary_variance() * -(-2.0 * params.theta * t).exp_m1();
    let components = initial
        .components()
        .iter()
        .map(|c| MixtureComponent {
            weight: c.weight,
            mean: c.mean * decay,
            variance: c.variance * decay * decay + added,
        })
        .collect();
    GaussianMixture::new(components)
}

/// `dXₜ = κ(b - Xₜ)dt + σ√Xₜ dWₜ` observed every `dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub kappa: f64,
    pub b: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl CirParams {
    pub fn new(kappa: f64, b: f64, sigma: f64, dt: f64) -> Result<Self> {
        let p = Self { kappa, b, sigma, dt };
        p.validate()?;
        Ok(p)
    }

    /// Zero volatility is accepted so that noiseless limits can be simulated.
    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        check_positive("b", self.b)?;
        check_positive("dt", self.dt)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// `2κb ≥ σ²`.
    pub fn feller(&self) -> bool {
        2.0 * self.kappa * self.b >= self.sigma * self.sigma
    }

    /// `E[Xₜ | X₀ = x₀] = b + (x₀ - b)e^{-κt}`.
    pub fn conditional_mean(&self, x0: f64, t: f64) -> f64 {
        self.b + (x0 - self.b) * (-self.kappa * t).exp()
    }
}

/// Full-truncation Euler path `x₀, x₁, …, x_steps`.
///
/// The latent Euler state may dip below zero; drift and diffusion use its
/// positive part and the returned path is the positive part as well.
pub fn cir_simulate<R: Rng + ?Sized>(
    params: &CirParams,
    x0: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(Error::invalid(format!("initial state must be >= 0, got {x0}")));
    }
    let sqrt_dt = params.dt.sqrt();
    let mut latent = x0;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x0);
    for _ in 0..steps {
        let pos = latent.max(0.0);
        let xi: f64 = if params.sigma > 0.0 {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        latent += params.kappa * (params.b - pos) * params.dt + params.sigma * pos.sqrt() * sqrt_dt * xi;
        path.push(latent.max(0.0));
    }
    Ok(path)
}

/// Ordinary least squares on `Δx = κ(b - x)dt + ε`, i.e. `Δx = a + c x`
/// with `κ = -c/dt`, `b = -a/c`. The volatility is the residual-based moment
/// estimate `σ² = Σ εᵢ² / (xᵢ dt) / (N - 2)` over states with `xᵢ > 0`.
pub fn cir_calibrate_ls(path: &[f64], dt: f64) -> Result<CirParams> {
    check_positive("dt", dt)?;
    if path.len() < 3 {
        return Err(Error::Empty("calibration path needs at least three states"));
    }
    if path.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration path"));
    }
    let xs = &path[..path.len() - 1];
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let dx: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_dx = dx.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let scale = xs.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    if sxx <= (1e-12 * scale).powi(2) * n {
        return Err(Error::Numerical(
            "degenerate regressor: calibration path is constant".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&dx).map(|(x, d)| (x - mean_x) * (d - mean_dx)).sum();
    let slope = sxy / sxx;
    let intercept = mean_dx - slope * mean_x;
    if slope >= 0.0 {
        return Err(Error::Numerical(format!(
            "non mean-reverting fit (slope {slope:e})"
        )));
    }
    let kappa = -slope / dt;
    let b = -intercept / slope;

    let (mut acc, mut count) = (0.0, 0usize);
    for (x, d) in xs.iter().zip(&dx) {
        if *x > 0.0 {
            let e = d - intercept - slope * x;
            acc += e * e / (x * dt);
            count += 1;
        }
    }
    let sigma = if count > 2 {
        (acc / (count - 2) as f64).sqrt()
    } else {
        0.0
    };
    CirParams::new(kappa, b, sigma, dt)
}

/// Monte-Carlo forecast: uniform measure over `n_samples` simulated states
/// after `horizon` steps from `x0`.
pub fn cir_forecast_distribution<R: Rng + ?Sized>(
    params: &CirParams,
    x0: f64,
    horizon: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<WeightedMeasure> {
    if n_samples == 0 {
        return Err(Error::Empty("forecast sample count"));
    }
    let ends = (0..n_samples)
        .map(|_| cir_simulate(params, x0, horizon, rng).map(|p| p[horizon]))
        .collect::<Result<Vec<_>>>()?;
    WeightedMeasure::uniform(scalar_points(&ends))
}

/// Uniform forecast measures for every step `1..=horizon`, sharing one batch
/// of simulated paths.
pub fn cir_forecast_trajectory<R: Rng + ?Sized>(
    params: &CirParams,
    x0: f64,
    horizon: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<WeightedMeasure>> {
    if n_samples == 0 {
        return Err(Error::Empty("forecast sample count"));
    }
    let paths = (0..n_samples)
        .map(|_| cir_simulate(params, x0, horizon, rng))
        .collect::<Result<Vec<_>>>()?;
    (1..=horizon)
        .map(|t| {
            let pts: Vec<f64> = paths.iter().map(|p| p[t]).collect();
            WeightedMeasure::new(
                scalar_points(&pts),
                Vector::from_element(n_samples, 1.0 / n_samples as f64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_rng_streams_are_reproducible_and_distinct() {
        let s = SeededRng::new(42);
        let a: Vec<u64> = (0..4).map({
            let mut r = s.child(3).rng();
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = s.child(3).rng();
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..4).map({
            let mut r = s.child(4).rng();
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ou_transition_limits_and_plug_in() {
        let p = OuParams::new(1.0, 2f64.sqrt(), 0.05).unwrap();
        let g0 = ou_transition(&p, 0.7, 0.0).unwrap();
        assert_eq!((g0.mean, g0.variance), (0.7, 0.0));
        let ginf = ou_transition(&p, 0.7, f64::INFINITY).unwrap();
        assert_eq!(ginf.mean, 0.0);
        assert!((ginf.variance - 1.0).abs() < 1e-15);
        let g = ou_transition(&p, 1.0, 2f64.ln()).unwrap();
        assert!((g.mean - 0.5).abs() < 1e-15 && (g.variance - 0.75).abs() < 1e-15);
        assert!(ou_transition(&p, 0.0, -1.0).is_err());
        assert!(OuParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn ou_chapman_kolmogorov_is_exact() {
        let p = OuParams::new(0.7, 1.3, 0.05).unwrap();
        let (x, s, t) = (1.4, 0.3, 0.9);
        let one = ou_transition(&p, x, s + t).unwrap();
        let first = ou_transition(&p, x, s).unwrap();
        let mix = GaussianMixture::single(first.mean, first.variance).unwrap();
        let two = mixture_flow(&p, &mix, t).unwrap().components()[0];
        assert!((one.mean - two.mean).abs() < 1e-14);
        assert!((one.variance - two.variance).abs() < 1e-14);
    }

    #[test]
    fn ou_pairs_moments() {
        let p = OuParams::default();
        let mut rng = SeededRng::new(7).rng();
        let n = 100_000;
        let pairs = ou_sample_pairs(&p, n, &mut rng).unwrap();
        let x = pairs.x.column(0);
        let y = pairs.y.column(0);
        let var = p.stationary_variance();
        let mean = x.mean();
        assert!(mean.abs() < 4.0 * (var / n as f64).sqrt());
        let sample_var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // var of the sample variance of a normal is 2σ⁴/(n-1)
        assert!((sample_var - var).abs() < 4.0 * (2.0 * var * var / n as f64).sqrt());
        let my = y.mean();
        let cov = x.iter().zip(y.iter()).map(|(a, b)| (a - mean) * (b - my)).sum::<f64>() / n as f64;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n as f64;
        let corr = cov / (sample_var * vy).sqrt();
        let rho = (-p.theta * p.dt).exp();
        assert!((corr - rho).abs() < 4.0 * (1.0 - rho * rho) / (n as f64).sqrt());
    }

    #[test]
    fn mixture_flow_fixed_points_and_bimodal_mixture() {
        let p = OuParams::default();
        let inv = GaussianMixture::single(0.0, p.stationary_variance()).unwrap();
        for t in [0.0, 0.3, 5.0] {
            let f = mixture_flow(&p, &inv, t).unwrap();
            assert!((f.components()[0].variance - 0.5).abs() < 1e-15);
            assert_eq!(f.components()[0].mean, 0.0);
        }
        let init = GaussianMixture::new(vec![
            MixtureComponent { weight: 0.5, mean: -2.0, variance: 0.04 },
            MixtureComponent { weight: 0.5, mean: 2.0, variance: 0.04 },
        ])
        .unwrap();
        assert_eq!(mixture_flow(&p, &init, 0.0).unwrap(), init);
        let f = mixture_flow(&p, &init, 1.0).unwrap();
        let e = (-1.0f64).exp();
        let want_var = 0.04 * e * e + 0.5 * (1.0 - e * e);
        for (c, sign) in f.components().iter().zip([-1.0, 1.0]) {
            assert!((c.mean - sign * 2.0 * e).abs() < 1e-15);
            assert!((c.variance - want_var).abs() < 1e-15);
            assert_eq!(c.weight, 0.5);
        }
        let total: f64 = f.components().iter().map(|c| c.weight).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn mixture_flow_matches_simulation() {
        let p = OuParams::default();
        let init = GaussianMixture::new(vec![
            MixtureComponent { weight: 0.5, mean: -2.0, variance: 0.04 },
            MixtureComponent { weight: 0.5, mean: 2.0, variance: 0.04 },
        ])
        .unwrap();
        let f = mixture_flow(&p, &init, 1.0).unwrap();
        let mut rng = SeededRng::new(8).rng();
        let n = 1_000_000;
        let (mut s1, mut s2, mut pos) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x0 = init.sample(&mut rng);
            let x1 = ou_transition(&p, x0, 1.0).unwrap().sample(&mut rng);
            s1 += x1;
            s2 += x1 * x1;
            if x1 > 0.0 {
                pos += x1;
            }
        }
        let nf = n as f64;
        let c = f.components()[1];
        let second = c.variance + c.mean * c.mean;
        assert!((s1 / nf).abs() < 4.0 * (second / nf).sqrt());
        assert!((s2 / nf - second).abs() < 4.0 * (2.0 * second * second / nf).sqrt() * 2.0);
        // E[X 1{X>0}] for the symmetric mixture equals half the component
        // partial mean; check against numerical integration of the flowed law.
        let partial = {
            let mut acc = 0.0;
            let h = 1e-4;
            let mut x = h / 2.0;
            while x < 10.0 {
                let dens: f64 = f
                    .components()
                    .iter()
                    .map(|c| {
                        c.weight * (-(x - c.mean).powi(2) / (2.0 * c.variance)).exp()
                            / (2.0 * std::f64::consts::PI * c.variance).sqrt()
                    })
                    .sum();
                acc += x * dens * h;
                x += h;
            }
            acc
        };
        assert!((pos / nf - partial).abs() < 4.0 * (second / nf).sqrt());
    }

    #[test]
    fn cir_noiseless_path_is_exponential_approach() {
        let p = CirParams::new(0.5, 4.0, 0.0, 1.0 / 52.0).unwrap();
        let mut rng = SeededRng::new(1).rng();
        let path = cir_simulate(&p, 2.0, 200, &mut rng).unwrap();
        // Euler recursion for σ = 0: x_{k+1} - b = (1 - κdt)(x_k - b)
        for (k, x) in path.iter().enumerate() {
            let want = 4.0 + (2.0 - 4.0) * (1.0 - 0.5 / 52.0f64).powi(k as i32);
            assert!((x - want).abs() < 1e-12);
        }
        // and the recursion tracks the ODE solution b + (x0 - b)e^{-κt}
        let t = 200.0 / 52.0;
        assert!((path[200] - p.conditional_mean(2.0, t)).abs() < 5e-3);
        let flat = cir_simulate(&p, 4.0, 50, &mut rng).unwrap();
        assert!(flat.iter().all(|&x| x == 4.0));
    }

    #[test]
    fn cir_path_is_nonnegative_and_reverts_to_b() {
        // Feller violated on purpose so that truncation is exercised
        let p = CirParams::new(0.5, 0.2, 0.8, 1.0 / 52.0).unwrap();
        assert!(!p.feller());
        let mut rng = SeededRng::new(2).rng();
        let path = cir_simulate(&p, 0.2, 200_000, &mut rng).unwrap();
        assert!(path.iter().all(|&x| x >= 0.0));

        let p = CirParams::new(0.5, 4.0, 0.3, 1.0 / 52.0).unwrap();
        assert!(p.feller());
        let path = cir_simulate(&p, 4.0, 400_000, &mut rng).unwrap();
        let mean = path.iter().sum::<f64>() / path.len() as f64;
        // stationary sd √(bσ²/2κ) = 0.6; correlation time 1/κ = 2 years = 104 steps
        let eff = path.len() as f64 / (2.0 * 104.0);
        assert!((mean - 4.0).abs() < 4.0 * 0.6 / eff.sqrt(), "{mean}");
    }

    #[test]
    fn cir_calibration_recovers_noiseless_parameters() {
        let truth = CirParams::new(0.5, 4.0, 0.0, 1.0 / 52.0).unwrap();
        let mut rng = SeededRng::new(3).rng();
        let path = cir_simulate(&truth, 1.0, 400, &mut rng).unwrap();
        let fit = cir_calibrate_ls(&path, truth.dt).unwrap();
        assert!(((fit.kappa - 0.5) / 0.5).abs() < 1e-6);
        assert!(((fit.b - 4.0) / 4.0).abs() < 1e-6);
        assert!(fit.sigma < 1e-6);
    }

    #[test]
    fn cir_calibration_rejects_constant_path() {
        assert!(matches!(
            cir_calibrate_ls(&[4.0; 20], 0.1),
            Err(Error::Numerical(_))
        ));
        assert!(cir_calibrate_ls(&[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn cir_calibration_noisy_path_within_standard_errors() {
        let truth = CirParams::new(0.5, 4.0, 0.3, 1.0 / 52.0).unwrap();
        let mut rng = SeededRng::new(4).rng();
        let path = cir_simulate(&truth, 4.0, 100_000, &mut rng).unwrap();
        let fit = cir_calibrate_ls(&path, truth.dt).unwrap();

        // OLS standard errors of the slope and intercept from the residuals
        let xs = &path[..path.len() - 1];
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = -fit.kappa * truth.dt;
        let intercept = fit.kappa * fit.b * truth.dt;
        let s2 = path
            .windows(2)
            .map(|w| (w[1] - w[0] - intercept - slope * w[0]).powi(2))
            .sum::<f64>()
            / (n - 2.0);
        let se_slope = (s2 / sxx).sqrt();
        let se_kappa = se_slope / truth.dt;
        assert!((fit.kappa - truth.kappa).abs() < 3.0 * se_kappa, "{fit:?} se {se_kappa}");
        // b = -a/c; delta method with the dominant slope uncertainty
        let se_b = (fit.b - mx).abs() * se_slope / slope.abs() + (s2 / n).sqrt() / slope.abs();
        assert!((fit.b - truth.b).abs() < 3.0 * se_b, "{fit:?} se {se_b}");
        assert!((fit.sigma - truth.sigma).abs() < 0.01);
    }

    #[test]
    fn cir_forecast_distribution_cases() {
        let noiseless = CirParams::new(0.5, 4.0, 0.0, 1.0 / 52.0).unwrap();
        let mut rng = SeededRng::new(5).rng();
        let m = cir_forecast_distribution(&noiseless, 3.0, 10, 50, &mut rng).unwrap();
        assert!(m.is_probability());
        let first = m.support()[(0, 0)];
        assert!(m.support().iter().all(|&x| x == first));

        let p = CirParams::new(0.5, 4.0, 0.3, 1.0 / 52.0).unwrap();
        let m0 = cir_forecast_distribution(&p, 3.0, 0, 10, &mut rng).unwrap();
        assert!(m0.support().iter().all(|&x| x == 3.0));

        let horizon = 52;
        let m = cir_forecast_distribution(&p, 3.0, horizon, 20_000, &mut rng).unwrap();
        let mean = m.support().column(0).mean();
        let want = p.conditional_mean(3.0, horizon as f64 * p.dt);
        // Euler bias at dt = 1/52 is O(κ²dt) relative; allow it on top of MC error
        let sd = m.support().column(0).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 20_000.0;
        assert!((mean - want).abs() < 4.0 * (sd / 20_000.0).sqrt() + 0.01, "{mean} vs {want}");
    }
}
