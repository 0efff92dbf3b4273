//! Kernel Koopman operator estimators of the form `Ĝ = Ŝ* W Ẑ`.
//!
//! Centered (deflated) fits replace the input and output Gram matrices by
//! `K̃ = Jₙ K Jₙ`; the cross Gram `K_xy` is never centered as a matrix and
//! centering enters only through explicit `Jₙ` applications. Low-rank fits
//! store `W = U Vᵀ` as its factors, already projected by `Jₙ` when centered.
//!
//! All Gram matrices carry the `1/n` normalization.

use serde::{Deserialize, Serialize};

use crate::dynamics::SamplePairs;
use crate::kernels::{center_square, gram, project_columns, KernelSpec, Normalization};
use crate::numerics::{
    cholesky, general_eigenvalues, orthonormal_basis, sym_eig, Complex64, Matrix, SymEigen,
    Vector,
};
use crate::{Error, Result};

/// Relative threshold below which eigen-directions count as numerically null.
pub const RANK_TOL: f64 = 1e-10;

/// Spectra whose top eigenvalue is below this fraction of
/// [`FitGrams::reference`] are treated as identically zero.
pub const NULL_TOL: f64 = 1e-12;

/// PCR inverts the retained eigenvalues, so the round-off in `W K̃ₓ W - W`
/// grows with `λ₁/λ_r`; directions below this relative level are dropped.
pub const PCR_RANK_TOL: f64 = 1e-7;

pub const FIT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Krr,
    Pcr,
    Rrr,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Krr => "krr",
            EstimatorKind::Pcr => "pcr",
            EstimatorKind::Rrr => "rrr",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Representation {
    Full(Matrix),
    /// `W = U Vᵀ` with `U, V ∈ ℝ^{n×r}`.
    LowRank { u: Matrix, v: Matrix },
}

/// Gram matrices shared by every fit on the same data and kernel.
#[derive(Clone, Debug)]
pub struct FitGrams {
    pub kernel: KernelSpec,
    pub centered: bool,
    /// `K̃ₓ` when centered, `Kₓ` otherwise.
    pub input: Matrix,
    /// `K̃_y` when centered, `K_y` otherwise.
    pub output: Matrix,
    /// `K_xy`, always uncentered.
    pub cross: Matrix,
    /// Larger trace of the uncentered `Kₓ` and `K_y`, the scale against which
    /// centered spectra are judged numerically zero.
    pub reference: f64,
}

impl FitGrams {
    pub fn new(data: &SamplePairs, kernel: KernelSpec, centered: bool) -> Result<Self> {
        let kx = gram(&kernel, &data.x, &data.x, Normalization::InverseN)?.matrix;
        let ky = gram(&kernel, &data.y, &data.y, Normalization::InverseN)?.matrix;
        let cross = gram(&kernel, &data.x, &data.y, Normalization::InverseN)?.matrix;
        let reference = kx.trace().max(ky.trace());
        let (input, output) = if centered {
            (center_square(&kx)?, center_square(&ky)?)
        } else {
            (kx, ky)
        };
        Ok(Self {
            kernel,
            centered,
            input,
            output,
            cross,
            reference,
        })
    }

    pub fn n(&self) -> usize {
        self.input.nrows()
    }
}

/// A fitted estimator together with its training data and Gram matrices.
#[derive(Clone, Debug)]
pub struct KoopmanFit {
    kernel: KernelSpec,
    estimator: EstimatorKind,
    gamma: f64,
    rank: usize,
    centered: bool,
    data: SamplePairs,
    input_gram: Matrix,
    cross_gram: Matrix,
    repr: Representation,
}

fn check_gamma(gamma: f64, required: bool) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 || (required && gamma <= 0.0) {
        return Err(Error::invalid(format!(
            "regularization must be {}, got {gamma}",
            if required { "> 0" } else { ">= 0" }
        )));
    }
    Ok(())
}

fn check_rank(rank: usize, n: usize) -> Result<()> {
    if rank == 0 || rank > n {
        return Err(Error::invalid(format!("rank {rank} outside 1..={n}")));
    }
    Ok(())
}

impl KoopmanFit {
    /// Assembles a fit from an explicit representation, recomputing Grams.
    pub fn from_parts(
        data: SamplePairs,
        kernel: KernelSpec,
        estimator: EstimatorKind,
        gamma: f64,
        rank: usize,
        centered: bool,
        repr: Representation,
    ) -> Result<Self> {
        let grams = FitGrams::new(&data, kernel, centered)?;
        Self::assemble(data, &grams, estimator, gamma, rank, repr)
    }

    fn assemble(
        data: SamplePairs,
        grams: &FitGrams,
        estimator: EstimatorKind,
        gamma: f64,
        rank: usize,
        repr: Representation,
    ) -> Result<Self> {
        let n = grams.n();
        match &repr {
            Representation::Full(w) if w.shape() != (n, n) => {
                return Err(Error::dim(format!("W is {:?}, expected {n}x{n}", w.shape())))
            }
            Representation::LowRank { u, v }
                if u.nrows() != n || v.nrows() != n || u.ncols() != v.ncols() =>
            {
                return Err(Error::dim(format!(
                    "factors {:?} and {:?} do not match n = {n}",
                    u.shape(),
                    v.shape()
                )))
            }
            _ => {}
        }
        let check = |m: &Matrix| m.iter().all(|x| x.is_finite());
        let finite = match &repr {
            Representation::Full(w) => check(w),
            Representation::LowRank { u, v } => check(u) && check(v),
        };
        if !finite {
            return Err(Error::NonFinite("estimator representation"));
        }
        Ok(Self {
            kernel: grams.kernel,
            estimator,
            gamma,
            rank,
            centered: grams.centered,
            data,
            input_gram: grams.input.clone(),
            cross_gram: grams.cross.clone(),
            repr,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.estimator
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn data(&self) -> &SamplePairs {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// `K̃ₓ` for centered fits, `Kₓ` otherwise.
    pub fn input_gram(&self) -> &Matrix {
        &self.input_gram
    }

    /// `K_xy` (never centered).
    pub fn cross_gram(&self) -> &Matrix {
        &self.cross_gram
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn w(&self) -> Matrix {
        match &self.repr {
            Representation::Full(w) => w.clone(),
            Representation::LowRank { u, v } => u * v.transpose(),
        }
    }

    /// The same estimator with `W` materialized as a dense matrix.
    pub fn to_full(&self) -> Self {
        let mut out = self.clone();
        out.repr = Representation::Full(self.w());
        out
    }

    /// `Jₙ Wᵀ Jₙ` for centered fits, `Wᵀ` otherwise.
    pub fn transition_weights(&self) -> Matrix {
        let wt = self.w().transpose();
        if self.centered {
            project_columns(&project_columns(&wt).transpose()).transpose()
        } else {
            wt
        }
    }

    /// Applies `Jₙ Wᵀ Jₙ` (or `Wᵀ`) to the columns of `a`.
    pub(crate) fn apply_transition(&self, a: &Matrix) -> Matrix {
        match &self.repr {
            Representation::LowRank { u, v } if self.centered => {
                let a = project_columns(a);
                project_columns(&(v * (u.transpose() * a)))
            }
            Representation::LowRank { u, v } => v * (u.transpose() * a),
            Representation::Full(w) if self.centered => {
                project_columns(&(w.transpose() * project_columns(a)))
            }
            Representation::Full(w) => w.transpose() * a,
        }
    }

    pub fn to_file(&self) -> FitFile {
        FitFile {
            format_version: FIT_FORMAT_VERSION,
            kernel: self.kernel,
            estimator: self.estimator,
            gamma: self.gamma,
            rank: self.rank,
            centered: self.centered,
            x: MatrixData::from(&self.data.x),
            y: MatrixData::from(&self.data.y),
            representation: match &self.repr {
                Representation::Full(w) => StoredRepresentation::Full {
                    w: MatrixData::from(w),
                },
                Representation::LowRank { u, v } => StoredRepresentation::LowRank {
                    u: MatrixData::from(u),
                    v: MatrixData::from(v),
                },
            },
        }
    }

    pub fn from_file(file: &FitFile) -> Result<Self> {
        if file.format_version != FIT_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported fit format version {}",
                file.format_version
            )));
        }
        let data = SamplePairs::new(file.x.to_matrix()?, file.y.to_matrix()?)?;
        let repr = match &file.representation {
            StoredRepresentation::Full { w } => Representation::Full(w.to_matrix()?),
            StoredRepresentation::LowRank { u, v } => Representation::LowRank {
                u: u.to_matrix()?,
                v: v.to_matrix()?,
            },
        };
        Self::from_parts(
            data,
            file.kernel,
            file.estimator,
            file.gamma,
            file.rank,
            file.centered,
            repr,
        )
    }
}

/// Dense matrix in row-major order for JSON containers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixData {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl MatrixData {
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::dim(format!(
                "{}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredRepresentation {
    Full { w: MatrixData },
    LowRank { u: MatrixData, v: MatrixData },
}

/// JSON container of a fitted estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub estimator: EstimatorKind,
    pub gamma: f64,
    pub rank: usize,
    pub centered: bool,
    pub x: MatrixData,
    pub y: MatrixData,
    pub representation: StoredRepresentation,
}

pub fn fit_krr(
    data: &SamplePairs,
    kernel: KernelSpec,
    gamma: f64,
    centered: bool,
) -> Result<KoopmanFit> {
    let grams = FitGrams::new(data, kernel, centered)?;
    fit_krr_with(data, &grams, gamma)
}

/// `W = (K̃ₓ + γI)⁻¹`.
pub fn fit_krr_with(data: &SamplePairs, grams: &FitGrams, gamma: f64) -> Result<KoopmanFit> {
    check_gamma(gamma, true)?;
    let n = grams.n();
    let w = cholesky(&grams.input, gamma)?.solve(&Matrix::identity(n, n))?;
    let w = (&w + w.transpose()) * 0.5;
    KoopmanFit::assemble(
        data.clone(),
        grams,
        EstimatorKind::Krr,
        gamma,
        n,
        Representation::Full(w),
    )
}

pub fn fit_pcr(
    data: &SamplePairs,
    kernel: KernelSpec,
    rank: usize,
    centered: bool,
) -> Result<KoopmanFit> {
    let grams = FitGrams::new(data, kernel, centered)?;
    let eig = sym_eig(&grams.input)?;
    let fit = fit_pcr_with(data, &grams, &eig, rank)?;
    warn_truncated("PCR", rank, fit.rank());
    Ok(fit)
}

fn warn_truncated(name: &str, requested: usize, used: usize) {
    if used < requested {
        log::warn!("{name} rank {requested} exceeds the numerical rank; using {used}");
    }
}

/// `K̃ₓ ≈ V_r Σ_r V_rᵀ`, `U_r = V_r Σ_r^†`, `W = U_r V_rᵀ`.
pub fn fit_pcr_with(
    data: &SamplePairs,
    grams: &FitGrams,
    eig: &SymEigen,
    rank: usize,
) -> Result<KoopmanFit> {
    let n = grams.n();
    check_rank(rank, n)?;
    let top = eig.values[0].max(0.0);
    let available = eig
        .values
        .iter()
        .take_while(|&&l| l > PCR_RANK_TOL * top && l > 0.0)
        .count();
    if available == 0 || top <= NULL_TOL * grams.reference {
        return Err(Error::Numerical("input Gram matrix is numerically zero".into()));
    }
    let r = if rank > available {
        log::debug!("PCR rank {rank} exceeds numerical rank {available}; using {available}");
        available
    } else {
        rank
    };
    let mut v = eig.vectors.columns(0, r).into_owned();
    let mut u = Matrix::from_fn(n, r, |i, j| v[(i, j)] / eig.values[j]);
    if grams.centered {
        u = project_columns(&u);
        v = project_columns(&v);
    }
    KoopmanFit::assemble(
        data.clone(),
        grams,
        EstimatorKind::Pcr,
        0.0,
        r,
        Representation::LowRank { u, v },
    )
}

/// Reusable eigen-structure of the RRR pencil for one kernel.
///
/// With `A = K̃ₓ = Q Λ Qᵀ` and `B = A + γI`, the pencil
/// `K̃_y A u = σ² B u` has the same nonzero spectrum as the symmetric
/// `A^{1/2} B^{-1/2} K̃_y B^{-1/2} A^{1/2}`. An eigenvector `v` of the latter
/// maps back to `u = B^{-1} K̃_y B^{-1/2} A^{1/2} v / σ²`, which needs no
/// inverse of the (possibly singular) `A`.
#[derive(Clone, Debug)]
pub struct RrrSolver {
    reference: f64,
    lambda: Vec<f64>,
    basis: Matrix,
    output_in_basis: Matrix,
}

#[derive(Clone, Debug)]
pub struct RrrSolution {
    pub gamma: f64,
    /// Retained `σᵢ²`, descending.
    pub sigma_sq: Vec<f64>,
    /// Columns `uᵢ` normalized to `uᵢᵀ A B uᵢ = 1`.
    pub u: Matrix,
}

impl RrrSolver {
    pub fn new(grams: &FitGrams) -> Result<Self> {
        let eig = sym_eig(&grams.input)?;
        let output_in_basis = eig.vectors.transpose() * &grams.output * &eig.vectors;
        let lambda = eig.values.iter().map(|l| l.max(0.0)).collect();
        Ok(Self {
            reference: grams.reference,
            lambda,
            basis: eig.vectors,
            output_in_basis,
        })
    }

    pub fn solve(&self, gamma: f64, max_rank: usize) -> Result<RrrSolution> {
        check_gamma(gamma, true)?;
        let n = self.lambda.len();
        check_rank(max_rank, n)?;
        let d: Vec<f64> = self.lambda.iter().map(|l| (l / (l + gamma)).sqrt()).collect();
        let s = Matrix::from_fn(n, n, |i, j| d[i] * self.output_in_basis[(i, j)] * d[j]);
        let eig = sym_eig(&s)?;
        let top = eig.values[0].max(0.0);
        let available = eig
            .values
            .iter()
            .take_while(|&&s2| s2 > RANK_TOL * top && s2 > 0.0)
            .count();
        if available == 0 || top <= NULL_TOL * self.reference {
            return Err(Error::Numerical("RRR pencil has no positive eigenvalue".into()));
        }
        let r = if max_rank > available {
            log::debug!("RRR rank {max_rank} exceeds {available} nonzero pencil eigenvalues; using {available}");
            available
        } else {
            max_rank
        };
        let mut u_basis = Matrix::zeros(n, r);
        for k in 0..r {
            let s2 = eig.values[k];
            let dv = Vector::from_fn(n, |i, _| d[i] * eig.vectors[(i, k)]);
            let mut col = &self.output_in_basis * dv;
            for i in 0..n {
                col[i] /= (self.lambda[i] + gamma) * s2;
            }
            let norm2: f64 = (0..n)
                .map(|i| col[i] * col[i] * self.lambda[i] * (self.lambda[i] + gamma))
                .sum();
            if !(norm2 > 0.0) {
                return Err(Error::Numerical(format!("degenerate RRR direction {k}")));
            }
            u_basis.set_column(k, &(col / norm2.sqrt()));
        }
        Ok(RrrSolution {
            gamma,
            sigma_sq: eig.values.iter().take(r).copied().collect(),
            u: &self.basis * u_basis,
        })
    }
}

pub fn fit_rrr(
    data: &SamplePairs,
    kernel: KernelSpec,
    rank: usize,
    gamma: f64,
    centered: bool,
) -> Result<KoopmanFit> {
    let grams = FitGrams::new(data, kernel, centered)?;
    let solution = RrrSolver::new(&grams)?.solve(gamma, rank)?;
    let fit = fit_rrr_with(data, &grams, &solution, rank)?;
    warn_truncated("RRR", rank, fit.rank());
    Ok(fit)
}

/// Builds the rank-`rank` RRR fit from a (possibly larger) pencil solution:
/// `U_r` are the leading pencil vectors and `V_r = K̃ₓ U_r`.
pub fn fit_rrr_with(
    data: &SamplePairs,
    grams: &FitGrams,
    solution: &RrrSolution,
    rank: usize,
) -> Result<KoopmanFit> {
    check_rank(rank, grams.n())?;
    let r = rank.min(solution.u.ncols());
    let mut u = solution.u.columns(0, r).into_owned();
    let mut v = &grams.input * &u;
    if grams.centered {
        u = project_columns(&u);
        v = project_columns(&v);
    }
    KoopmanFit::assemble(
        data.clone(),
        grams,
        EstimatorKind::Rrr,
        solution.gamma,
        r,
        Representation::LowRank { u, v },
    )
}

/// Held-out risk of a fit, precomputed for one (kernel, train, validation)
/// triple so that many candidate fits can be scored cheaply.
///
/// Centered fits are scored by the centered risk with feature means taken
/// from the training sample:
/// `(1/m) Σₐ ‖(φ(y'ₐ) - m_y) - Ĝ*(φ(x'ₐ) - m_x)‖²`.
/// Uncentered fits use `(1/m) Σₐ ‖φ(y'ₐ) - Ĝ*φ(x'ₐ)‖²`.
#[derive(Clone, Debug)]
pub struct RiskEvaluator {
    kernel: KernelSpec,
    n: usize,
    /// `[k(x'ₐ, xₖ)]ₖₐ`, `n × m`
    x_cross: Matrix,
    /// `[k(y'ₐ, yⱼ)]ⱼₐ`, `n × m`
    y_cross: Matrix,
    y_self: Vector,
    /// raw `[k(yᵢ, yⱼ)]`
    y_gram: Matrix,
    x_col_means: Vector,
    y_col_means: Vector,
    y_grand_mean: f64,
}

impl RiskEvaluator {
    pub fn new(kernel: KernelSpec, train: &SamplePairs, val: &SamplePairs) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let x_cross = gram(&kernel, &train.x, &val.x, Normalization::Raw)?.matrix;
        let y_cross = gram(&kernel, &train.y, &val.y, Normalization::Raw)?.matrix;
        let x_gram = gram(&kernel, &train.x, &train.x, Normalization::Raw)?.matrix;
        let y_gram = gram(&kernel, &train.y, &train.y, Normalization::Raw)?.matrix;
        let n = train.len();
        let y_self = Vector::from_iterator(
            val.len(),
            (0..val.len()).map(|a| {
                let p: Vec<f64> = val.y.row(a).iter().copied().collect();
                crate::kernels::Kernel::eval(&kernel, &p, &p)
            }),
        );
        let col_means = |g: &Matrix| Vector::from_iterator(n, g.column_iter().map(|c| c.mean()));
        let x_col_means = col_means(&x_gram);
        let y_col_means = col_means(&y_gram);
        let y_grand_mean = y_col_means.mean();
        Ok(Self {
            kernel,
            n,
            x_cross,
            y_cross,
            y_self,
            y_gram,
            x_col_means,
            y_col_means,
            y_grand_mean,
        })
    }

    pub fn risk(&self, fit: &KoopmanFit) -> Result<f64> {
        if fit.kernel != self.kernel || fit.n() != self.n {
            return Err(Error::invalid(
                "fit does not match the risk evaluator's kernel or training set",
            ));
        }
        let n = self.n as f64;
        let m = self.y_self.len();
        let (features, targets, self_terms) = if fit.centered {
            let mut a = self.x_cross.clone();
            for mut col in a.column_iter_mut() {
                col -= &self.x_col_means;
            }
            let mut g = self.y_cross.clone();
            for mut col in g.column_iter_mut() {
                col -= &self.y_col_means;
            }
            // ‖φ(y') - m_y‖² = k(y',y') - 2 m_y(y') + ‖m_y‖²
            let selfs = Vector::from_iterator(
                m,
                (0..m).map(|c| {
                    self.y_self[c] - 2.0 * self.y_cross.column(c).mean() + self.y_grand_mean
                }),
            );
            (a, project_columns(&g), selfs)
        } else {
            (self.x_cross.clone(), self.y_cross.clone(), self.y_self.clone())
        };

        // β = (1/n) T a with T = Jₙ Wᵀ Jₙ (or Wᵀ); G* maps φ-features to Σ βⱼ φ(yⱼ).
        let (cross, quad) = match &fit.repr {
            Representation::LowRank { u, v } => {
                let a = if fit.centered {
                    project_columns(&features)
                } else {
                    features
                };
                let c = u.transpose() * a / n;
                let vg = v.transpose() * &targets;
                let ky = if fit.centered {
                    project_columns(&project_columns(&self.y_gram).transpose())
                } else {
                    self.y_gram.clone()
                };
                let p = v.transpose() * ky * v;
                let pc = &p * &c;
                let cross = Vector::from_iterator(m, (0..m).map(|k| c.column(k).dot(&vg.column(k))));
                let quad = Vector::from_iterator(m, (0..m).map(|k| c.column(k).dot(&pc.column(k))));
                (cross, quad)
            }
            Representation::Full(_) => {
                let beta = fit.apply_transition(&features) / n;
                let ky = if fit.centered {
                    project_columns(&project_columns(&self.y_gram).transpose())
                } else {
                    self.y_gram.clone()
                };
                let kb = ky * &beta;
                let cross =
                    Vector::from_iterator(m, (0..m).map(|k| beta.column(k).dot(&targets.column(k))));
                let quad = Vector::from_iterator(m, (0..m).map(|k| beta.column(k).dot(&kb.column(k))));
                (cross, quad)
            }
        };
        let total: f64 = (0..m)
            .map(|k| self_terms[k] - 2.0 * cross[k] + quad[k])
            .sum::<f64>()
            / m as f64;
        if total < -1e-10 * self_terms.amax().max(1.0) {
            return Err(Error::Numerical(format!("negative validation risk {total:e}")));
        }
        Ok(total.max(0.0))
    }
}

pub fn validation_risk(fit: &KoopmanFit, val: &SamplePairs) -> Result<f64> {
    RiskEvaluator::new(fit.kernel, &fit.data, val)?.risk(fit)
}

/// The `n × n` map `M` with `w̃ₜ = M w̃ₜ₋₁`: `Jₙ Wᵀ Jₙ K_xy` for centered
/// fits, `Wᵀ K_xy` otherwise.
pub fn evolution_matrix(fit: &KoopmanFit) -> Matrix {
    fit.apply_transition(&fit.cross_gram)
}

/// `U_rᵀ K_xy V_r` for low-rank fits (same nonzero spectrum as the full map),
/// the full map otherwise.
pub fn reduced_evolution_matrix(fit: &KoopmanFit) -> Matrix {
    match &fit.repr {
        Representation::LowRank { u, v } => u.transpose() * &fit.cross_gram * v,
        Representation::Full(_) => evolution_matrix(fit),
    }
}

/// A small matrix with exactly the power norms, resolvent norms and
/// nonzero spectrum of [`evolution_matrix`].
///
/// For `M = L R` with `L = V_r` and `R = U_rᵀ K_xy`, the subspace
/// `S = range(L) + range(Rᵀ)` is invariant and `M` vanishes on `S^⊥`, so
/// `M ≅ (Qᵀ M Q) ⊕ 0` for an orthonormal basis `Q` of `S`. One zero row and
/// column stand in for the `S^⊥` block when it is nontrivial.
pub fn evolution_compression(fit: &KoopmanFit) -> Matrix {
    match &fit.repr {
        Representation::LowRank { u, v } => {
            let n = fit.n();
            let left = v.clone();
            let right = u.transpose() * &fit.cross_gram;
            let stacked = Matrix::from_fn(n, left.ncols() + right.nrows(), |i, j| {
                if j < left.ncols() {
                    left[(i, j)]
                } else {
                    right[(j - left.ncols(), i)]
                }
            });
            let q = orthonormal_basis(&stacked, 1e-12);
            let k = q.ncols();
            let core = (q.transpose() * &left) * (&right * &q);
            if k < n {
                core.resize(k + 1, k + 1, 0.0)
            } else {
                core
            }
        }
        Representation::Full(_) => evolution_matrix(fit),
    }
}

/// Nonzero spectrum of the estimator, sorted by modulus descending.
pub fn estimator_eigenvalues(fit: &KoopmanFit) -> Result<Vec<Complex64>> {
    general_eigenvalues(&reduced_evolution_matrix(fit))
}
