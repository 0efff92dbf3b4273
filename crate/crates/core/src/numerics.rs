//! Dense linear algebra used throughout the crate.
//!
//! Matrices are `nalgebra` column-major dense matrices of `f64`. Complex
//! arithmetic is only needed for shifted resolvents `(A - zI)` with complex `z`.
//!
//! Every entry point rejects non-finite input. Symmetric routines symmetrize
//! their input as `(A + Aᵀ)/2`, logging a warning when the asymmetry exceeds
//! [`SYM_TOL`]` · ‖A‖_F`.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type Complex64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<Complex64>;

/// Relative asymmetry tolerated before a warning is logged.
pub const SYM_TOL: f64 = 1e-10;
/// Convergence tolerance of the symmetric eigensolver.
pub const EIG_TOL: f64 = 1e-12;

const POWER_SEED: u64 = 0x5eed_0f24_e11;
const POWER_RESTARTS: usize = 3;
const POWER_MAX_ITER: usize = 20_000;

pub fn check_finite(a: &Matrix, what: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_square(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(format!(
            "{what}: expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Largest absolute asymmetry `max |Aᵢⱼ - Aⱼᵢ|`.
pub fn asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Returns `(A + Aᵀ)/2`, warning when `A` was noticeably asymmetric.
pub fn symmetrize(a: &Matrix) -> Matrix {
    let asym = asymmetry(a);
    let scale = a.norm();
    if asym > SYM_TOL * scale.max(f64::MIN_POSITIVE) {
        log::warn!("symmetrizing input with asymmetry {asym:e} (‖A‖_F = {scale:e})");
    }
    (a + a.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vector,
    /// Orthonormal eigenvectors stored as columns, aligned with `values`.
    pub vectors: Matrix,
}

impl SymEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let scaled = Matrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        &scaled * self.vectors.transpose()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eig(a: &Matrix) -> Result<SymEigen> {
    check_square(a, "sym_eig")?;
    check_finite(a, "sym_eig input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vector::zeros(0),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let sym = symmetrize(a);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON * 0.5, 100 * n.max(30))
        .ok_or(Error::NoConvergence("symmetric eigensolver"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A + shift·I`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let y = solve_lower(&self.l, b)?;
        solve_lower_transpose(&self.l, &y)
    }

    pub fn solve_vec(&self, b: &Vector) -> Result<Vector> {
        let x = self.solve(&Matrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(x.column(0).into_owned())
    }
}

pub fn cholesky(a: &Matrix, shift: f64) -> Result<Cholesky> {
    check_square(a, "cholesky")?;
    check_finite(a, "cholesky input")?;
    if !shift.is_finite() {
        return Err(Error::NonFinite("cholesky shift"));
    }
    let n = a.nrows();
    let a = symmetrize(a);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + shift;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(Cholesky { l })
}

/// Forward substitution `L Y = B` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::dim(format!("solve_lower: {} rows vs {n}", b.nrows())));
    }
    let mut y = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = y[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(y)
}

/// Back substitution `Lᵀ X = Y` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, y: &Matrix) -> Result<Matrix> {
    let n = l.nrows();
    if y.nrows() != n {
        return Err(Error::dim(format!(
            "solve_lower_transpose: {} rows vs {n}",
            y.nrows()
        )));
    }
    let mut x = y.clone();
    for c in 0..y.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_finite(b, "solve_spd right-hand side")?;
    cholesky(a, 0.0)?.solve(b)
}

fn power_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(POWER_SEED)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

/// Largest eigenvalue of the PSD operator `v ↦ apply(v)` by power iteration
/// with seeded restarts. Returns the Rayleigh quotient.
fn psd_power_max(n: usize, apply: impl Fn(&Vector) -> Vector) -> f64 {
    let mut rng = power_rng();
    let mut best = 0.0_f64;
    for _ in 0..POWER_RESTARTS {
        let mut v = random_unit(&mut rng, n);
        let mut lambda = 0.0_f64;
        let mut stable = 0;
        for _ in 0..POWER_MAX_ITER {
            let w = apply(&v);
            let next = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            v = w / norm;
            if (next - lambda).abs() <= 1e-15 * next.abs() {
                stable += 1;
                if stable >= 3 {
                    lambda = next;
                    break;
                }
            } else {
                stable = 0;
            }
            lambda = next;
        }
        best = best.max(lambda);
    }
    best
}

/// Spectral norm `‖A‖₂` as the square root of the top eigenvalue of `AᵀA`.
pub fn op_norm_2(a: &Matrix) -> Result<f64> {
    check_finite(a, "op_norm_2 input")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let at = a.transpose();
    let lambda = psd_power_max(a.ncols(), |v| &at * (a * v));
    Ok(lambda.max(0.0).sqrt())
}

fn shifted(a: &Matrix, z: Complex64) -> ComplexMatrix {
    let n = a.nrows();
    ComplexMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - z
        } else {
            v
        }
    })
}

/// `σ_min(A - zI)` by inverse iteration on `(A - zI)*(A - zI)`.
///
/// Returns `0` when the shifted matrix is exactly singular.
pub fn smallest_singular_shifted(a: &Matrix, z: Complex64) -> Result<f64> {
    check_square(a, "smallest_singular_shifted")?;
    check_finite(a, "smallest_singular_shifted input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(z.norm());
    }
    let b = shifted(a, z);
    let lu = b.clone().lu();
    let lu_adj = b.adjoint().lu();
    if !lu.is_invertible() {
        return Ok(0.0);
    }

    let mut rng = power_rng();
    let mut v = ComplexMatrix::from_fn(n, 1, |_, _| {
        Complex64::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    });
    v /= Complex64::new(v.norm(), 0.0);

    let mut mu = 0.0_f64;
    let mut stable = 0;
    for _ in 0..2_000 {
        // w = (B* B)^{-1} v
        let Some(y) = lu_adj.solve(&v) else {
            return Ok(0.0);
        };
        let Some(w) = lu.solve(&y) else {
            return Ok(0.0);
        };
        let next = v.dotc(&w).re;
        let norm = w.norm();
        if !norm.is_finite() || !next.is_finite() {
            return Ok(0.0);
        }
        v = w / Complex64::new(norm, 0.0);
        if (next - mu).abs() <= 1e-14 * next.abs() {
            stable += 1;
            if stable >= 2 {
                mu = next;
                break;
            }
        } else {
            stable = 0;
        }
        mu = next;
    }
    if mu <= 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / mu.sqrt())
}

/// Eigenvalues of a general real square matrix, sorted by modulus descending.
pub fn general_eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    check_square(a, "general_eigenvalues")?;
    check_finite(a, "general_eigenvalues input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 1000 * n.max(10))
        .ok_or(Error::NoConvergence("Hessenberg QR eigensolver"))?;
    let mut values: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.im.total_cmp(&x.im)));
    Ok(values)
}

/// `max |λ|` over the eigenvalues of `A`.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(general_eigenvalues(a)?
        .first()
        .map(|z| z.norm())
        .unwrap_or(0.0))
}

/// Orthonormal basis of `range(A)` by modified Gram-Schmidt with
/// reorthogonalization; columns with relative norm below `tol` are dropped.
pub fn orthonormal_basis(a: &Matrix, tol: f64) -> Matrix {
    let n = a.nrows();
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut basis: Vec<Vector> = Vec::new();
    if scale == 0.0 {
        return Matrix::zeros(n, 0);
    }
    for col in a.column_iter() {
        let mut v = col.into_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > tol * scale {
            basis.push(v / norm);
        }
    }
    Matrix::from_columns(&basis).resize_horizontally(basis.len(), 0.0)
}
