//! Kernels, normalized Gram blocks and feature centering.
//!
//! The Gaussian kernel is parametrized as `k(x, y) = exp(-‖x - y‖² / (2ℓ²))`
//! with the lengthscale `ℓ` in state-space units. Lengthscale grids in
//! configuration files use this convention.
//!
//! Point sets are stored as `n × d` matrices, one point per row.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, Vector};
use crate::{Error, Result};

pub type Points = Matrix;

/// Builds an `n × 1` point set from scalar states.
pub fn scalar_points(values: &[f64]) -> Points {
    Points::from_column_slice(values.len(), 1, values)
}

pub trait Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    lengthscale: f64,
}

impl GaussianKernel {
    pub fn new(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::invalid(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        Ok(Self { lengthscale })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    fn eval_sq(&self, r2: f64) -> f64 {
        (-r2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

impl Kernel for GaussianKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.eval_sq(r2)
    }
}

/// `k(x, y) = ⟨x, y⟩`. Its feature map is the identity, which makes every
/// kernel computation checkable against explicit feature vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearKernel;

impl Kernel for LinearKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// Serializable kernel choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Gaussian { lengthscale: f64 },
    Linear,
}

impl KernelSpec {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        GaussianKernel::new(lengthscale)?;
        Ok(KernelSpec::Gaussian { lengthscale })
    }

    pub fn as_gaussian(&self) -> Option<GaussianKernel> {
        match *self {
            KernelSpec::Gaussian { lengthscale } => Some(GaussianKernel { lengthscale }),
            KernelSpec::Linear => None,
        }
    }
}

impl Kernel for KernelSpec {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { lengthscale } => GaussianKernel { lengthscale }.eval(a, b),
            KernelSpec::Linear => LinearKernel.eval(a, b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `[k(aᵢ, bⱼ)]`
    Raw,
    /// `(1/n)[k(aᵢ, bⱼ)]` with `n` the number of rows of `A`.
    InverseN,
    /// `(1/√(n m))[k(aᵢ, bⱼ)]` for an `n × m` block.
    InverseSqrtNM,
}

#[derive(Clone, Debug)]
pub struct GramBlock {
    pub matrix: Matrix,
    pub normalization: Normalization,
}

impl GramBlock {
    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

fn row(points: &Points, i: usize) -> Vec<f64> {
    points.row(i).iter().copied().collect()
}

/// Gram block `c · [k(aᵢ, bⱼ)]` with `c` chosen by `normalization`.
pub fn gram<K: Kernel + ?Sized>(
    kernel: &K,
    a: &Points,
    b: &Points,
    normalization: Normalization,
) -> Result<GramBlock> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "gram: point dimensions {} and {} differ",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.ncols() == 0 || a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("gram point set"));
    }
    let (n, m) = (a.nrows(), b.nrows());
    let c = match normalization {
        Normalization::Raw => 1.0,
        Normalization::InverseN => 1.0 / n as f64,
        Normalization::InverseSqrtNM => 1.0 / ((n * m) as f64).sqrt(),
    };
    let rows_a: Vec<Vec<f64>> = (0..n).map(|i| row(a, i)).collect();
    let rows_b: Vec<Vec<f64>> = (0..m).map(|j| row(b, j)).collect();
    let matrix = Matrix::from_fn(n, m, |i, j| c * kernel.eval(&rows_a[i], &rows_b[j]));
    Ok(GramBlock {
        matrix,
        normalization,
    })
}

/// `Jₙ K Jₙ` with `Jₙ = I - 1ₙ1ₙᵀ`, `1ₙ = n^{-1/2}(1, …, 1)`, evaluated through
/// the expansion `K - (K1)1ᵀ - 1(K1)ᵀ + (1ᵀK1)11ᵀ` in `O(n²)`.
pub fn center_square(k: &Matrix) -> Result<Matrix> {
    if k.nrows() != k.ncols() {
        return Err(Error::dim(format!(
            "center_square: {}x{} is not square",
            k.nrows(),
            k.ncols()
        )));
    }
    let n = k.nrows();
    if n == 0 {
        return Ok(k.clone());
    }
    let inv_n = 1.0 / n as f64;
    // with the normalized 1ₙ the three correction terms are row means, column
    // means and the grand mean
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() * inv_n).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() * inv_n).collect();
    let grand = row_means.iter().sum::<f64>() * inv_n;
    Ok(Matrix::from_fn(n, n, |i, j| {
        k[(i, j)] - row_means[i] - col_means[j] + grand
    }))
}

/// `Jₙ v`: subtracts the mean of `v`.
pub fn project_out_mean(v: &Vector) -> Vector {
    if v.is_empty() {
        return v.clone();
    }
    let mean = v.mean();
    v.map(|x| x - mean)
}

/// Column-wise `Jₙ A`.
pub fn project_columns(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Scalar Gaussian law `N(mean, variance)`; `variance = 0` is a point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1d {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1d {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        let g = Self { mean, variance };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.variance.is_finite() {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        if self.variance < 0.0 {
            return Err(Error::invalid(format!(
                "negative variance {}",
                self.variance
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.variance.sqrt() * z
    }
}

/// Kernel mean embedding of `g` evaluated at `x`: `E_{Y~g}[k(x, Y)]`.
///
/// Closed form `ℓ/√(ℓ²+s²) · exp(-(x-m)²/(2(ℓ²+s²)))`.
pub fn gaussian_kernel_mean(kernel: &GaussianKernel, x: f64, g: &Gaussian1d) -> Result<f64> {
    g.validate()?;
    let l2 = kernel.lengthscale * kernel.lengthscale;
    let s = l2 + g.variance;
    let d = x - g.mean;
    Ok((l2 / s).sqrt() * (-d * d / (2.0 * s)).exp())
}

/// `E[k(X, Y)]` for independent `X ~ g1`, `Y ~ g2`.
pub fn gaussian_kernel_double(
    kernel: &GaussianKernel,
    g1: &Gaussian1d,
    g2: &Gaussian1d,
) -> Result<f64> {
    g1.validate()?;
    g2.validate()?;
    let l2 = kernel.lengthscale * kernel.lengthscale;
    let s = l2 + g1.variance + g2.variance;
    let d = g1.mean - g2.mean;
    Ok((l2 / s).sqrt() * (-d * d / (2.0 * s)).exp())
}

/// Monte-Carlo estimate of `E_{Y~N(mean, variance·I)}[k(x, Y)]` in any
/// dimension, returned as `(estimate, standard error)`.
pub fn gaussian_kernel_mean_mc<K: Kernel + ?Sized, R: Rng + ?Sized>(
    kernel: &K,
    x: &[f64],
    mean: &[f64],
    variance: f64,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if x.len() != mean.len() {
        return Err(Error::dim("gaussian_kernel_mean_mc: dimension mismatch"));
    }
    if variance < 0.0 {
        return Err(Error::invalid(format!("negative variance {variance}")));
    }
    if samples < 2 {
        return Err(Error::invalid("at least two samples are required"));
    }
    let sd = variance.sqrt();
    let mut y = vec![0.0; x.len()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for (yi, mi) in y.iter_mut().zip(mean) {
            *yi = mi + sd * rng.sample::<f64, _>(StandardNormal);
        }
        let v = kernel.eval(x, &y);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let est = sum / n;
    let var = ((sum_sq - n * est * est) / (n - 1.0)).max(0.0);
    Ok((est, (var / n).sqrt()))
}
