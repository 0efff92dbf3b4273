//! Weighted empirical measures and the forecast-error metrics built on them:
//! MMD (against empirical or Gaussian-mixture targets), relative MMD and CRPS.

use serde::{Deserialize, Serialize};

use crate::kernels::{
    gaussian_kernel_double, gaussian_kernel_mean, gram, Gaussian1d, GaussianKernel, Kernel,
    Normalization, Points,
};
use crate::numerics::{Matrix, Vector};
use crate::{Error, Result};

const MASS_TOL: f64 = 1e-10;
const RADICAND_TOL: f64 = 1e-12;

/// `Σᵢ wᵢ δ_{sᵢ}` with possibly signed weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMeasure {
    support: Points,
    weights: Vector,
}

impl WeightedMeasure {
    pub fn new(support: Points, weights: Vector) -> Result<Self> {
        if support.nrows() != weights.len() {
            return Err(Error::dim(format!(
                "{} support points but {} weights",
                support.nrows(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("measure weights"));
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure support"));
        }
        Ok(Self { support, weights })
    }

    pub fn uniform(support: Points) -> Result<Self> {
        let n = support.nrows();
        if n == 0 {
            return Err(Error::Empty("measure support"));
        }
        Self::new(support, Vector::from_element(n, 1.0 / n as f64))
    }

    pub fn dirac(point: f64) -> Self {
        Self {
            support: Points::from_element(1, 1, point),
            weights: Vector::from_element(1, 1.0),
        }
    }

    pub fn support(&self) -> &Points {
        &self.support
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - 1.0).abs() <= MASS_TOL
    }

    fn scalar_support(&self) -> Result<Vec<f64>> {
        if self.support.ncols() != 1 {
            return Err(Error::dim(format!(
                "scalar support required, got dimension {}",
                self.support.ncols()
            )));
        }
        Ok(self.support.column(0).iter().copied().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl MixtureComponent {
    pub fn gaussian(&self) -> Gaussian1d {
        Gaussian1d {
            mean: self.mean,
            variance: self.variance,
        }
    }
}

/// Scalar Gaussian mixture with nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        for c in &components {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::invalid(format!("bad mixture weight {}", c.weight)));
            }
            c.gaussian().validate()?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            variance,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc || i == last {
                return c.gaussian().sample(rng);
            }
        }
        unreachable!("mixture has at least one component")
    }
}

fn sqrt_radicand(radicand: f64, scale: f64) -> Result<f64> {
    if radicand >= 0.0 {
        Ok(radicand.sqrt())
    } else if radicand >= -RADICAND_TOL * scale.max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "negative MMD radicand {radicand:e} at scale {scale:e}"
        )))
    }
}

/// MMD between two weighted measures in the RKHS of `kernel`.
pub fn mmd_empirical<K: Kernel + ?Sized>(
    mu: &WeightedMeasure,
    nu: &WeightedMeasure,
    kernel: &K,
) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::Empty("MMD support"));
    }
    let kaa = gram(kernel, &mu.support, &mu.support, Normalization::Raw)?.matrix;
    let kab = gram(kernel, &mu.support, &nu.support, Normalization::Raw)?.matrix;
    let kbb = gram(kernel, &nu.support, &nu.support, Normalization::Raw)?.matrix;
    let (w, v) = (&mu.weights, &nu.weights);
    let aa = w.dot(&(&kaa * w));
    let ab = w.dot(&(&kab * v));
    let bb = v.dot(&(&kbb * v));
    sqrt_radicand(aa - 2.0 * ab + bb, aa.abs() + 2.0 * ab.abs() + bb.abs())
}

/// `‖g_μ‖²_H = E[k(X, X')]` for independent draws from the mixture.
pub fn mixture_norm_sq(target: &GaussianMixture, kernel: &GaussianKernel) -> Result<f64> {
    let mut acc = 0.0;
    for a in &target.components {
        for b in &target.components {
            acc += a.weight * b.weight * gaussian_kernel_double(kernel, &a.gaussian(), &b.gaussian())?;
        }
    }
    Ok(acc)
}

/// RKHS norm of the mixture's kernel mean embedding.
pub fn mmd_norm(target: &GaussianMixture, kernel: &GaussianKernel) -> Result<f64> {
    Ok(mixture_norm_sq(target, kernel)?.max(0.0).sqrt())
}

/// MMD evaluations against analytic targets for a fixed scalar support.
///
/// The support Gram matrix is built once, so evaluating a whole forecast
/// trajectory costs `O(n²)` per step.
#[derive(Clone, Debug)]
pub struct MmdEvaluator {
    kernel: GaussianKernel,
    support: Vec<f64>,
    gram: Matrix,
}

impl MmdEvaluator {
    pub fn new(kernel: GaussianKernel, support: &Points) -> Result<Self> {
        if support.ncols() != 1 {
            return Err(Error::dim("mixture MMD requires scalar support"));
        }
        let gram = gram(&kernel, support, support, Normalization::Raw)?.matrix;
        Ok(Self {
            kernel,
            support: support.column(0).iter().copied().collect(),
            gram,
        })
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    /// `MMD(Σ wᵢ δ_{sᵢ}, target)`.
    pub fn mmd(&self, weights: &Vector, target: &GaussianMixture) -> Result<f64> {
        if weights.len() != self.support.len() {
            return Err(Error::dim("weight vector does not match support"));
        }
        let self_term = weights.dot(&(&self.gram * weights));
        let mut cross = 0.0;
        for (w, &s) in weights.iter().zip(&self.support) {
            if *w == 0.0 {
                continue;
            }
            let mut e = 0.0;
            for c in &target.components {
                e += c.weight * gaussian_kernel_mean(&self.kernel, s, &c.gaussian())?;
            }
            cross += w * e;
        }
        let target_term = mixture_norm_sq(target, &self.kernel)?;
        sqrt_radicand(
            self_term - 2.0 * cross + target_term,
            self_term.abs() + 2.0 * cross.abs() + target_term.abs(),
        )
    }

    pub fn relative(&self, weights: &Vector, target: &GaussianMixture) -> Result<f64> {
        let denom = mmd_norm(target, &self.kernel)?;
        if denom == 0.0 {
            return Err(Error::Numerical("target embedding has zero norm".into()));
        }
        Ok(self.mmd(weights, target)? / denom)
    }
}

pub fn mmd_vs_mixture(
    mu: &WeightedMeasure,
    target: &GaussianMixture,
    kernel: &GaussianKernel,
) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::Empty("MMD support"));
    }
    MmdEvaluator::new(*kernel, &mu.support)?.mmd(&mu.weights, target)
}

/// `MMD(μ̂, target) / ‖g_target‖_H`.
pub fn relative_mmd(
    mu: &WeightedMeasure,
    target: &GaussianMixture,
    kernel: &GaussianKernel,
) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::Empty("MMD support"));
    }
    MmdEvaluator::new(*kernel, &mu.support)?.relative(&mu.weights, target)
}

/// Continuous ranked probability score of a scalar weighted measure.
///
/// Evaluates `∫_{-∞}^{x} F̂² + ∫_{x}^{∞} (1 - F̂)²` segment by segment on the
/// piecewise-constant cdf `F̂(t) = Σ wᵢ 1{yᵢ ≤ t}`, which may be non-monotone
/// for signed weights. The integral is taken over the hull of the support and
/// the observation. Outside the hull the integrand vanishes whenever the total
/// mass is one; for other masses the unbounded tails are excluded.
pub fn crps(mu: &WeightedMeasure, observed: f64) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::Empty("CRPS support"));
    }
    if !observed.is_finite() {
        return Err(Error::NonFinite("CRPS observation"));
    }
    let support = mu.scalar_support()?;
    let mut pts: Vec<(f64, f64)> = support
        .into_iter()
        .zip(mu.weights.iter().copied())
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut breaks: Vec<f64> = pts.iter().map(|p| p.0).collect();
    breaks.push(observed);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut total = 0.0;
    let mut cdf = 0.0;
    let mut next = 0;
    for seg in breaks.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        while next < pts.len() && pts[next].0 <= a {
            cdf += pts[next].1;
            next += 1;
        }
        let integrand = if b <= observed {
            cdf * cdf
        } else {
            (1.0 - cdf) * (1.0 - cdf)
        };
        total += (b - a) * integrand;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpsSummary {
    pub mean: f64,
    /// Sample standard deviation over time steps (zero for a single step).
    pub std: f64,
    pub per_step: Vec<f64>,
}

pub fn average_crps(forecasts: &[WeightedMeasure], observed: &[f64]) -> Result<CrpsSummary> {
    if forecasts.len() != observed.len() {
        return Err(Error::dim(format!(
            "{} forecasts for {} observations",
            forecasts.len(),
            observed.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(Error::Empty("CRPS series"));
    }
    let per_step = forecasts
        .iter()
        .zip(observed)
        .map(|(f, &x)| crps(f, x))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&per_step);
    Ok(CrpsSummary {
        mean,
        std,
        per_step,
    })
}

/// Arithmetic mean and sample (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::scalar_points;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prob_measure(rng: &mut ChaCha8Rng, n: usize) -> WeightedMeasure {
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        WeightedMeasure::new(
            scalar_points(&pts),
            Vector::from_iterator(n, raw.iter().map(|w| w / s)),
        )
        .unwrap()
    }

    fn quadratic_form_mmd(mu: &WeightedMeasure, nu: &WeightedMeasure, k: &GaussianKernel) -> f64 {
        let mut acc = 0.0;
        for i in 0..mu.len() {
            for j in 0..mu.len() {
                acc += mu.weights[i]
                    * mu.weights[j]
                    * k.eval(&[mu.support[(i, 0)]], &[mu.support[(j, 0)]]);
            }
            for j in 0..nu.len() {
                acc -= 2.0
                    * mu.weights[i]
                    * nu.weights[j]
                    * k.eval(&[mu.support[(i, 0)]], &[nu.support[(j, 0)]]);
            }
        }
        for i in 0..nu.len() {
            for j in 0..nu.len() {
                acc += nu.weights[i]
                    * nu.weights[j]
                    * k.eval(&[nu.support[(i, 0)]], &[nu.support[(j, 0)]]);
            }
        }
        acc.max(0.0).sqrt()
    }

    #[test]
    fn measure_validation() {
        assert!(WeightedMeasure::new(scalar_points(&[1.0]), Vector::from_vec(vec![0.5, 0.5])).is_err());
        assert!(WeightedMeasure::new(scalar_points(&[1.0]), Vector::from_vec(vec![f64::NAN])).is_err());
        let signed =
            WeightedMeasure::new(scalar_points(&[0.0, 1.0]), Vector::from_vec(vec![1.5, -0.5])).unwrap();
        assert!(signed.is_probability());
        assert!(!WeightedMeasure::new(scalar_points(&[0.0]), Vector::from_vec(vec![0.9]))
            .unwrap()
            .is_probability());
    }

    #[test]
    fn mmd_identical_and_diracs() {
        let k = GaussianKernel::new(0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = prob_measure(&mut rng, 5);
        assert!(mmd_empirical(&mu, &mu, &k).unwrap() < 1e-7);
        let (a, b) = (0.3, -1.1);
        let got = mmd_empirical(&WeightedMeasure::dirac(a), &WeightedMeasure::dirac(b), &k).unwrap();
        let want = (2.0 - 2.0 * k.eval(&[a], &[b])).sqrt();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn mmd_matches_quadratic_form_loops() {
        let k = GaussianKernel::new(1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mu = prob_measure(&mut rng, 5);
            let nu = prob_measure(&mut rng, 5);
            let got = mmd_empirical(&mu, &nu, &k).unwrap();
            assert!((got - quadratic_form_mmd(&mu, &nu, &k)).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_symmetry_and_triangle_inequality() {
        let k = GaussianKernel::new(0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = prob_measure(&mut rng, 4);
            let b = prob_measure(&mut rng, 6);
            let c = prob_measure(&mut rng, 3);
            let ab = mmd_empirical(&a, &b, &k).unwrap();
            let ba = mmd_empirical(&b, &a, &k).unwrap();
            let bc = mmd_empirical(&b, &c, &k).unwrap();
            let ac = mmd_empirical(&a, &c, &k).unwrap();
            assert!((ab - ba).abs() <= 1e-9);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn mixture_point_mass_and_normalization() {
        let k = GaussianKernel::new(1.0).unwrap();
        let target = GaussianMixture::single(0.0, 0.0).unwrap();
        assert!(mmd_vs_mixture(&WeightedMeasure::dirac(0.0), &target, &k).unwrap() < 1e-7);
        assert!(GaussianMixture::new(vec![]).is_err());
        assert!(GaussianMixture::new(vec![MixtureComponent {
            weight: 0.7,
            mean: 0.0,
            variance: 1.0
        }])
        .is_err());
    }

    #[test]
    fn dirac_vs_gaussian_matches_hand_expansion() {
        // MMD²(δ₀, N(m, s²)) = 1 - 2 E k(0, Y) + E k(Y, Y')
        let k = GaussianKernel::new(1.0).unwrap();
        let (m, s2) = (0.7, 0.3);
        let target = GaussianMixture::single(m, s2).unwrap();
        let got = mmd_vs_mixture(&WeightedMeasure::dirac(0.0), &target, &k).unwrap();
        let cross = (1.0 / (1.0 + s2)).sqrt() * (-(m * m) / (2.0 * (1.0 + s2))).exp();
        let self_t = (1.0 / (1.0 + 2.0 * s2)).sqrt();
        let want = (1.0 - 2.0 * cross + self_t).sqrt();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn empirical_draw_from_target_is_close() {
        let k = GaussianKernel::new(1.0).unwrap();
        let target = GaussianMixture::new(vec![
            MixtureComponent { weight: 0.5, mean: -2.0, variance: 0.04 },
            MixtureComponent { weight: 0.5, mean: 2.0, variance: 0.04 },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 10⁵ draws binned to a fine grid keeps the support Gram small.
        let (lo, h, bins) = (-4.0, 0.002, 4000);
        let mut counts = vec![0.0; bins];
        let draws = 100_000;
        for _ in 0..draws {
            let x: f64 = target.sample(&mut rng);
            let b = (((x - lo) / h) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        let (pts, ws): (Vec<f64>, Vec<f64>) = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0.0)
            .map(|(i, c)| (lo + (i as f64 + 0.5) * h, c / draws as f64))
            .unzip();
        let mu = WeightedMeasure::new(scalar_points(&pts), Vector::from_vec(ws)).unwrap();
        assert!(mmd_vs_mixture(&mu, &target, &k).unwrap() <= 0.02);
    }

    #[test]
    fn relative_mmd_trivial_cases_and_permutation_invariance() {
        let k = GaussianKernel::new(0.9).unwrap();
        let target = GaussianMixture::single(0.0, 0.0).unwrap();
        let exact = WeightedMeasure::dirac(0.0);
        assert!(relative_mmd(&exact, &target, &k).unwrap() < 1e-7);

        let target = GaussianMixture::single(0.5, 0.2).unwrap();
        let null = WeightedMeasure::new(scalar_points(&[0.0, 1.0]), Vector::zeros(2)).unwrap();
        assert!((relative_mmd(&null, &target, &k).unwrap() - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = prob_measure(&mut rng, 6);
        let r1 = relative_mmd(&mu, &target, &k).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let pts: Vec<f64> = perm.iter().map(|&i| mu.support()[(i, 0)]).collect();
        let ws: Vec<f64> = perm.iter().map(|&i| mu.weights()[i]).collect();
        let shuffled = WeightedMeasure::new(scalar_points(&pts), Vector::from_vec(ws)).unwrap();
        assert!((relative_mmd(&shuffled, &target, &k).unwrap() - r1).abs() < 1e-12);
        let want = mmd_vs_mixture(&mu, &target, &k).unwrap() / mmd_norm(&target, &k).unwrap();
        assert!((r1 - want).abs() < 1e-15);
    }

    #[test]
    fn crps_hand_cases() {
        assert_eq!(crps(&WeightedMeasure::dirac(1.5), -0.25).unwrap(), 1.75);
        assert_eq!(crps(&WeightedMeasure::dirac(-2.0), 3.0).unwrap(), 5.0);
        let u = WeightedMeasure::uniform(scalar_points(&[0.0, 1.0])).unwrap();
        assert!((crps(&u, 0.0).unwrap() - 0.25).abs() < 1e-15);
        let empty = WeightedMeasure::new(Points::zeros(0, 1), Vector::zeros(0)).unwrap();
        assert!(matches!(crps(&empty, 0.0), Err(Error::Empty(_))));
    }

    #[test]
    fn crps_equals_energy_form_for_probability_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let mu = prob_measure(&mut rng, n);
            let x: f64 = rng.random_range(-4.0..4.0);
            let y = mu.support().column(0);
            let w = mu.weights();
            let mut energy = 0.0;
            for i in 0..n {
                energy += w[i] * (y[i] - x).abs();
                for j in 0..n {
                    energy -= 0.5 * w[i] * w[j] * (y[i] - y[j]).abs();
                }
            }
            assert!((crps(&mu, x).unwrap() - energy).abs() <= 1e-10);
        }
    }

    #[test]
    fn crps_signed_weights_is_finite() {
        let mu = WeightedMeasure::new(scalar_points(&[0.0, 1.0, 2.0]), Vector::from_vec(vec![0.6, -0.1, 0.3]))
            .unwrap();
        // cdf: 0.6 on [0,1), 0.5 on [1,2); observation at 1.5
        let want = 1.0 * 0.36 + 0.5 * 0.25 + 0.5 * 0.25;
        assert!((crps(&mu, 1.5).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn average_crps_cases() {
        let f = vec![WeightedMeasure::dirac(2.0); 4];
        let s = average_crps(&f, &[2.0; 4]).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));
        let s = average_crps(&[WeightedMeasure::dirac(1.0)], &[0.5]).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.0));
        let f = vec![
            WeightedMeasure::dirac(0.0),
            WeightedMeasure::dirac(0.0),
            WeightedMeasure::dirac(0.0),
        ];
        let s = average_crps(&f, &[1.0, 2.0, 3.0]).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-15 && (s.std - 1.0).abs() < 1e-15);
        assert!(average_crps(&f, &[1.0]).is_err());
    }
}
