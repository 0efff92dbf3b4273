//! Forecasting the flow of an initial empirical measure.
//!
//! A forecast at step `t` is the weighted measure `Σᵢ wₜ,ᵢ δ_{yᵢ}` on the
//! training outputs. The DLI forecaster evolves only the deflated part of the
//! embedding, `μ̂ₜ = π̂_y + (Ḡ*)ᵗ(μ₀ - π̂_y)`, so every weight vector sums to one.
//! The baseline forecaster applies the uncentered estimator directly.

use serde::{Deserialize, Serialize};

use crate::estimators::{EstimatorKind, KoopmanFit, Representation};
use crate::kernels::{gram, project_out_mean, Normalization, Points};
use crate::metrics::WeightedMeasure;
use crate::numerics::{cholesky, Cholesky, Matrix, Vector};
use crate::{Error, Result};

/// Largest admissible `‖wₜ‖∞` before a trajectory is declared divergent.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMethod {
    Dli,
    Baseline,
}

impl std::fmt::Display for ForecastMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ForecastMethod::Dli => "dli",
            ForecastMethod::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTrajectory {
    pub method: ForecastMethod,
    /// The training outputs `yᵢ`, one per row.
    pub support: Points,
    /// Row `t-1` holds `wₜ`, `t = 1..=steps()`.
    pub weights: Matrix,
    /// `w̃ₜ₋₁` behind each row of `weights` (DLI only).
    pub reduced: Vec<Vector>,
    /// First step whose weights exceeded [`OVERFLOW_GUARD`] or were not finite.
    /// The trajectory stops before that step.
    pub diverged_at: Option<usize>,
}

impl ForecastTrajectory {
    pub fn steps(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights_at(&self, t: usize) -> Result<Vector> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(self.weights.row(t - 1).transpose())
    }

    pub fn measure_at(&self, t: usize) -> Result<WeightedMeasure> {
        WeightedMeasure::new(self.support.clone(), self.weights_at(t)?)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    Ok(())
}

/// `[mean_j k(xᵢ, zⱼ)]ᵢ`, i.e. `√n K_xz 1_{n₀}`.
fn initial_embedding(fit: &KoopmanFit, initial: &Points) -> Result<Vector> {
    if initial.nrows() == 0 {
        return Err(Error::Empty("initial sample"));
    }
    if initial.ncols() != fit.data().dim() {
        return Err(Error::dim(format!(
            "initial points have dimension {}, training data {}",
            initial.ncols(),
            fit.data().dim()
        )));
    }
    let k = gram(&fit.kernel(), &fit.data().x, initial, Normalization::Raw)?.matrix;
    Ok(Vector::from_iterator(k.nrows(), k.row_iter().map(|r| r.mean())))
}

enum Branch {
    Krr(Cholesky),
    LowRank { u: Matrix, v: Matrix, m: Matrix },
    Full,
}

/// Step-by-step DLI evolution of the deflated reduced state `w̃`.
pub struct DliPropagator<'a> {
    fit: &'a KoopmanFit,
    branch: Branch,
}

impl<'a> DliPropagator<'a> {
    pub fn new(fit: &'a KoopmanFit) -> Result<Self> {
        if !fit.centered() {
            return Err(Error::invalid("DLI forecasting needs a centered fit"));
        }
        let branch = match fit.representation() {
            Representation::LowRank { u, v } => Branch::LowRank {
                m: u.transpose() * fit.cross_gram() * v,
                u: u.clone(),
                v: v.clone(),
            },
            Representation::Full(_) if fit.estimator() == EstimatorKind::Krr => {
                Branch::Krr(cholesky(fit.input_gram(), fit.gamma())?)
            }
            Representation::Full(_) => Branch::Full,
        };
        Ok(Self { fit, branch })
    }

    /// `w̃₀` for the initial sample `z₁..z_{n₀}`.
    pub fn initial_state(&self, initial: &Points) -> Result<Vector> {
        let n = self.fit.n() as f64;
        let kz = initial_embedding(self.fit, initial)?;
        // row means of the raw kernel: K_xy carries 1/n already
        let ky = self.fit.cross_gram().column_sum();
        // K_xz 1_{n₀} - K_xy 1ₙ
        let d = (kz - ky) / n.sqrt();
        Ok(match &self.branch {
            Branch::Krr(chol) => project_out_mean(&chol.solve_vec(&project_out_mean(&d))?),
            Branch::LowRank { u, .. } => u.transpose() * d,
            Branch::Full => self.full_apply(&d),
        })
    }

    fn full_apply(&self, a: &Vector) -> Vector {
        let m = Matrix::from_column_slice(a.len(), 1, a.as_slice());
        self.fit.apply_transition(&m).column(0).into_owned()
    }

    pub fn step(&self, state: &Vector) -> Result<Vector> {
        Ok(match &self.branch {
            Branch::Krr(chol) => {
                let rhs = project_out_mean(&(self.fit.cross_gram() * state));
                project_out_mean(&chol.solve_vec(&rhs)?)
            }
            Branch::LowRank { m, .. } => m * state,
            Branch::Full => self.full_apply(&(self.fit.cross_gram() * state)),
        })
    }

    /// `(1ₙ + V w̃)/√n`; the deflated part is re-projected so roundoff cannot
    /// leak mass.
    pub fn weights(&self, state: &Vector) -> Vector {
        let n = self.fit.n() as f64;
        let lifted = match &self.branch {
            Branch::LowRank { v, .. } => v * state,
            _ => state.clone(),
        };
        project_out_mean(&lifted).add_scalar(1.0 / n.sqrt()) / n.sqrt()
    }

    /// Emits `w_{1..=horizon}` starting from `w̃₀ = state`.
    pub fn run(&self, state: Vector, horizon: usize) -> Result<ForecastTrajectory> {
        check_horizon(horizon)?;
        let n = self.fit.n();
        let mut rows: Vec<Vector> = Vec::with_capacity(horizon);
        let mut reduced = Vec::with_capacity(horizon);
        let mut diverged_at = None;
        let mut state = state;
        for t in 1..=horizon {
            let w = self.weights(&state);
            if !w.iter().all(|x| x.is_finite()) || w.amax() > OVERFLOW_GUARD {
                diverged_at = Some(t);
                break;
            }
            rows.push(w);
            let next = self.step(&state)?;
            reduced.push(state);
            state = next;
        }
        Ok(ForecastTrajectory {
            method: ForecastMethod::Dli,
            support: self.fit.data().y.clone(),
            weights: stack_rows(&rows, n),
            reduced,
            diverged_at,
        })
    }

    /// Continues from the reduced state that produced the last emitted row.
    pub fn resume(&self, traj: &ForecastTrajectory, horizon: usize) -> Result<ForecastTrajectory> {
        let last = traj
            .reduced
            .last()
            .ok_or(Error::Empty("trajectory without reduced states"))?;
        self.run(self.step(last)?, horizon)
    }
}

fn stack_rows(rows: &[Vector], n: usize) -> Matrix {
    Matrix::from_fn(rows.len(), n, |t, i| rows[t][i])
}

pub fn dli_forecast(fit: &KoopmanFit, initial: &Points, horizon: usize) -> Result<ForecastTrajectory> {
    check_horizon(horizon)?;
    let prop = DliPropagator::new(fit)?;
    let state = prop.initial_state(initial)?;
    prop.run(state, horizon)
}

/// `w₁ = (1/√n) Wᵀ K_xz 1_{n₀}`, `wₜ₊₁ = Wᵀ K_xy wₜ`.
pub fn baseline_forecast(
    fit: &KoopmanFit,
    initial: &Points,
    horizon: usize,
) -> Result<ForecastTrajectory> {
    if fit.centered() {
        return Err(Error::invalid("baseline forecasting needs an uncentered fit"));
    }
    check_horizon(horizon)?;
    let n = fit.n();
    let apply = |a: &Vector| -> Vector {
        match fit.representation() {
            Representation::LowRank { u, v } => v * (u.transpose() * a),
            Representation::Full(w) => w.transpose() * a,
        }
    };
    let mut w = apply(&initial_embedding(fit, initial)?) / n as f64;
    let mut rows = Vec::with_capacity(horizon);
    let mut diverged_at = None;
    for t in 1..=horizon {
        if !w.iter().all(|x| x.is_finite()) || w.amax() > OVERFLOW_GUARD {
            diverged_at = Some(t);
            break;
        }
        let next = apply(&(fit.cross_gram() * &w));
        rows.push(w);
        w = next;
    }
    if let Some(t) = diverged_at {
        log::warn!("baseline forecast diverged at step {t}");
    }
    Ok(ForecastTrajectory {
        method: ForecastMethod::Baseline,
        support: fit.data().y.clone(),
        weights: stack_rows(&rows, n),
        reduced: Vec::new(),
        diverged_at,
    })
}

/// Per-step summaries of a trajectory on scalar support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub mass: Vec<f64>,
    /// `Σᵢ wₜ,ᵢ yᵢ`
    pub mean: Vec<f64>,
    /// `Σᵢ wₜ,ᵢ (yᵢ - meanₜ)²`
    pub variance: Vec<f64>,
    pub cdf_points: Vec<f64>,
    /// `cdf[t][k] = Σᵢ wₜ,ᵢ 1{yᵢ ≤ cdf_points[k]}`
    pub cdf: Vec<Vec<f64>>,
}

pub fn trajectory_stats(traj: &ForecastTrajectory, cdf_points: &[f64]) -> Result<TrajectoryStats> {
    if traj.support.ncols() != 1 {
        return Err(Error::dim("trajectory statistics need scalar support".to_string()));
    }
    let y = traj.support.column(0);
    let mut stats = TrajectoryStats {
        mass: Vec::new(),
        mean: Vec::new(),
        variance: Vec::new(),
        cdf_points: cdf_points.to_vec(),
        cdf: Vec::new(),
    };
    for row in traj.weights.row_iter() {
        let mean: f64 = row.iter().zip(y.iter()).map(|(w, y)| w * y).sum();
        stats.mass.push(row.sum());
        stats.mean.push(mean);
        stats
            .variance
            .push(row.iter().zip(y.iter()).map(|(w, y)| w * (y - mean).powi(2)).sum());
        stats.cdf.push(
            cdf_points
                .iter()
                .map(|&x| {
                    row.iter()
                        .zip(y.iter())
                        .filter(|(_, &y)| y <= x)
                        .map(|(w, _)| w)
                        .sum()
                })
                .collect(),
        );
    }
    Ok(stats)
}

/// Pointwise projection of reduced states onto constants, `1ₙᵀ V w̃ₜ`; zero
/// up to roundoff for every DLI trajectory.
pub fn deflation_residuals(fit: &KoopmanFit, traj: &ForecastTrajectory) -> Vec<f64> {
    traj.reduced
        .iter()
        .map(|s| match fit.representation() {
            Representation::LowRank { v, .. } => (v * s).sum(),
            Representation::Full(_) => s.sum(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ou_sample_pairs, OuParams, SamplePairs, SeededRng};
    use crate::estimators::{fit_krr, fit_pcr, fit_rrr};
    use crate::kernels::{scalar_points, Kernel, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(l: f64) -> KernelSpec {
        KernelSpec::gaussian(l).unwrap()
    }

    fn random_pairs(seed: u64, n: usize) -> SamplePairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + rng.random_range(-0.4..0.4)).collect();
        SamplePairs::from_scalars(&x, &y).unwrap()
    }

    fn random_initial(seed: u64, n0: usize) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n0).map(|_| rng.random_range(0.5..2.5)).collect();
        scalar_points(&z)
    }

    #[test]
    fn errors_on_wrong_centering_and_zero_horizon() {
        let data = random_pairs(1, 6);
        let z = random_initial(2, 4);
        let centered = fit_krr(&data, gaussian(1.0), 1e-2, true).unwrap();
        let plain = fit_krr(&data, gaussian(1.0), 1e-2, false).unwrap();
        assert!(dli_forecast(&plain, &z, 3).is_err());
        assert!(baseline_forecast(&centered, &z, 3).is_err());
        assert!(dli_forecast(&centered, &z, 0).is_err());
        assert!(baseline_forecast(&plain, &z, 0).is_err());
        assert!(dli_forecast(&centered, &Points::zeros(0, 1), 3).is_err());
    }

    #[test]
    fn initial_equal_to_outputs_freezes_at_uniform() {
        let data = random_pairs(3, 10);
        let fits = [
            fit_krr(&data, gaussian(0.8), 1e-3, true).unwrap(),
            fit_pcr(&data, gaussian(0.8), 4, true).unwrap(),
            fit_rrr(&data, gaussian(0.8), 4, 1e-3, true).unwrap(),
        ];
        for fit in &fits {
            let traj = dli_forecast(fit, &data.y, 5).unwrap();
            assert_eq!(traj.steps(), 5);
            assert!((traj.weights.add_scalar(-0.1)).amax() < 1e-14);
        }
    }

    #[test]
    fn stable_forecast_relaxes_to_uniform() {
        let data = random_pairs(4, 12);
        let fit = fit_rrr(&data, gaussian(0.8), 3, 1e-3, true).unwrap();
        let rho = crate::numerics::spectral_radius(
            &crate::estimators::reduced_evolution_matrix(&fit),
        )
        .unwrap();
        assert!(rho < 1.0);
        let traj = dli_forecast(&fit, &random_initial(5, 7), 3000).unwrap();
        let last = traj.weights_at(3000).unwrap();
        assert!(last.add_scalar(-1.0 / 12.0).amax() < 1e-8);
    }

    /// Loop-by-loop evaluation of the DLI recursion in full `n`-dimensional form.
    fn hand_dli(fit: &KoopmanFit, w: &Matrix, z: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let k = fit.kernel();
        let x: Vec<f64> = fit.data().x.iter().copied().collect();
        let y: Vec<f64> = fit.data().y.iter().copied().collect();
        let n = x.len();
        let nf = n as f64;
        let j = |v: &[f64]| -> Vec<f64> {
            let m = v.iter().sum::<f64>() / nf;
            v.iter().map(|a| a - m).collect()
        };
        let t_apply = |v: &[f64]| -> Vec<f64> {
            let v = j(v);
            let out: Vec<f64> = (0..n).map(|i| (0..n).map(|l| w[(l, i)] * v[l]).sum()).collect();
            j(&out)
        };
        let kxy = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| (0..n).map(|l| k.eval(&[x[i]], &[y[l]]) * v[l]).sum::<f64>() / nf)
                .collect()
        };
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let mz = z.iter().map(|zz| k.eval(&[x[i]], &[*zz])).sum::<f64>() / z.len() as f64;
                let my = y.iter().map(|yy| k.eval(&[x[i]], &[*yy])).sum::<f64>() / nf;
                (mz - my) / nf.sqrt()
            })
            .collect();
        let mut s = t_apply(&d);
        let mut out = Vec::new();
        for _ in 0..steps {
            out.push(s.iter().map(|a| 1.0 / nf + a / nf.sqrt()).collect());
            s = t_apply(&kxy(&s));
        }
        out
    }

    #[test]
    fn two_point_dataset_matches_hand_recursion() {
        let data = SamplePairs::from_scalars(&[-0.4, 0.9], &[0.1, 0.6]).unwrap();
        let z = [1.3, -0.2, 0.5];
        let zp = scalar_points(&z);
        let gamma = 0.05;
        let fit = fit_krr(&data, gaussian(1.0), gamma, true).unwrap();
        // (K̃ + γI)⁻¹ for K̃ = c [[1,-1],[-1,1]] by hand
        let kk = fit.input_gram();
        let c = kk[(0, 0)];
        let det = (c + gamma).powi(2) - c * c;
        let w = Matrix::from_row_slice(2, 2, &[c + gamma, c, c, c + gamma]) / det;
        let want = hand_dli(&fit, &w, &z, 3);
        let got = dli_forecast(&fit, &zp, 3).unwrap();
        for t in 0..3 {
            for i in 0..2 {
                assert!((got.weights[(t, i)] - want[t][i]).abs() < 1e-12);
            }
        }
        let fit = fit_rrr(&data, gaussian(1.0), 1, gamma, true).unwrap();
        let want = hand_dli(&fit, &fit.w(), &z, 3);
        let got = dli_forecast(&fit, &zp, 3).unwrap();
        for t in 0..3 {
            for i in 0..2 {
                assert!((got.weights[(t, i)] - want[t][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_fits_match_hand_recursion() {
        for seed in 0..4 {
            let data = random_pairs(20 + seed, 7);
            let z = [0.3, 1.1, -0.8, 2.0];
            let fit = fit_rrr(&data, gaussian(0.9), 3, 1e-3, true).unwrap();
            let want = hand_dli(&fit, &fit.w(), &z, 6);
            let got = dli_forecast(&fit, &scalar_points(&z), 6).unwrap();
            for t in 0..6 {
                for i in 0..7 {
                    assert!((got.weights[(t, i)] - want[t][i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mass_and_deflation_over_long_horizon() {
        let data = random_pairs(30, 30);
        let z = random_initial(31, 40);
        for fit in [
            fit_rrr(&data, gaussian(0.5), 5, 1e-6, true).unwrap(),
            fit_pcr(&data, gaussian(0.5), 5, true).unwrap(),
        ] {
            let traj = dli_forecast(&fit, &z, 10_000).unwrap();
            assert_eq!(traj.diverged_at, None);
            assert!(traj.masses().iter().all(|m| (m - 1.0).abs() <= 1e-10));
            assert!(deflation_residuals(&fit, &traj).iter().all(|r| r.abs() <= 1e-10));
        }
        let fit = fit_krr(&data, gaussian(0.5), 1e-4, true).unwrap();
        let traj = dli_forecast(&fit, &z, 500).unwrap();
        assert!(traj.masses().iter().all(|m| (m - 1.0).abs() <= 1e-10));
        assert!(deflation_residuals(&fit, &traj).iter().all(|r| r.abs() <= 1e-10));
    }

    #[test]
    fn branches_agree() {
        let data = random_pairs(40, 20);
        let z = random_initial(41, 15);
        let fit = fit_rrr(&data, gaussian(0.7), 4, 1e-4, true).unwrap();
        let a = dli_forecast(&fit, &z, 50).unwrap();
        let b = dli_forecast(&fit.to_full(), &z, 50).unwrap();
        assert!((a.weights - b.weights).amax() < 1e-8);

        let krr = fit_krr(&data, gaussian(0.7), 1e-2, true).unwrap();
        let generic = KoopmanFit::from_parts(
            data.clone(),
            gaussian(0.7),
            EstimatorKind::Rrr,
            1e-2,
            20,
            true,
            Representation::Full(krr.w()),
        )
        .unwrap();
        let a = dli_forecast(&krr, &z, 50).unwrap();
        let b = dli_forecast(&generic, &z, 50).unwrap();
        assert!((a.weights - b.weights).amax() < 1e-8);
    }

    #[test]
    fn semigroup_continuation_is_exact() {
        let data = random_pairs(50, 15);
        let z = random_initial(51, 9);
        for fit in [
            fit_rrr(&data, gaussian(0.7), 4, 1e-4, true).unwrap(),
            fit_krr(&data, gaussian(0.7), 1e-3, true).unwrap(),
        ] {
            let prop = DliPropagator::new(&fit).unwrap();
            let whole = dli_forecast(&fit, &z, 30).unwrap();
            let head = dli_forecast(&fit, &z, 12).unwrap();
            let tail = prop.resume(&head, 18).unwrap();
            assert_eq!(whole.weights.rows(0, 12), head.weights);
            assert_eq!(whole.weights.rows(12, 18), tail.weights);
        }
    }

    #[test]
    fn baseline_with_zero_operator_is_null() {
        let data = random_pairs(60, 8);
        let fit = KoopmanFit::from_parts(
            data,
            gaussian(1.0),
            EstimatorKind::Krr,
            1e-3,
            8,
            false,
            Representation::Full(Matrix::zeros(8, 8)),
        )
        .unwrap();
        let traj = baseline_forecast(&fit, &random_initial(61, 5), 4).unwrap();
        assert_eq!(traj.weights, Matrix::zeros(4, 8));
    }

    #[test]
    fn baseline_two_point_hand_recursion() {
        let data = SamplePairs::from_scalars(&[-0.4, 0.9], &[0.1, 0.6]).unwrap();
        let k = gaussian(1.0);
        let gamma = 0.05;
        let fit = fit_krr(&data, k, gamma, false).unwrap();
        let e = |a: f64, b: f64| k.eval(&[a], &[b]);
        let (x, y) = ([-0.4, 0.9], [0.1, 0.6]);
        let kx = [[e(x[0], x[0]) / 2.0, e(x[0], x[1]) / 2.0], [e(x[1], x[0]) / 2.0, e(x[1], x[1]) / 2.0]];
        let (a, b, d) = (kx[0][0] + gamma, kx[0][1], kx[1][1] + gamma);
        let det = a * d - b * b;
        let w = [[d / det, -b / det], [-b / det, a / det]];
        let z = [0.2, 1.4];
        let mz: Vec<f64> = (0..2).map(|i| (e(x[i], z[0]) + e(x[i], z[1])) / 2.0).collect();
        let mut cur: Vec<f64> = (0..2).map(|i| (w[0][i] * mz[0] + w[1][i] * mz[1]) / 2.0).collect();
        let traj = baseline_forecast(&fit, &scalar_points(&z), 3).unwrap();
        for t in 0..3 {
            for i in 0..2 {
                assert!((traj.weights[(t, i)] - cur[i]).abs() < 1e-12);
            }
            let kc: Vec<f64> = (0..2)
                .map(|i| (e(x[i], y[0]) * cur[0] + e(x[i], y[1]) * cur[1]) / 2.0)
                .collect();
            cur = (0..2).map(|i| w[0][i] * kc[0] + w[1][i] * kc[1]).collect();
        }
    }

    #[test]
    fn linear_kernel_forecast_means_follow_explicit_features() {
        let params = OuParams::default();
        let mut rng = SeededRng::new(70).rng();
        let n = 400;
        let data = ou_sample_pairs(&params, n, &mut rng).unwrap();
        let z = random_initial(71, 50);
        let zbar = z.mean();
        let gamma = 1e-3;
        let nf = n as f64;
        let (xbar, ybar) = (data.x.mean(), data.y.mean());

        // uncentered: mean of the t-step forecast is gᵗ z̄
        let sxx = data.x.iter().map(|v| v * v).sum::<f64>();
        let sxy = data.x.iter().zip(data.y.iter()).map(|(a, b)| a * b).sum::<f64>();
        let g = sxy / (sxx + nf * gamma);
        let fit = fit_krr(&data, KernelSpec::Linear, gamma, false).unwrap();
        let stats = trajectory_stats(&baseline_forecast(&fit, &z, 40).unwrap(), &[]).unwrap();
        for (t, m) in stats.mean.iter().enumerate() {
            let want = g.powi(t as i32 + 1) * zbar;
            assert!((m - want).abs() < 1e-9 * zbar.abs().max(1.0), "t={t}: {m} vs {want}");
        }
        let decay = (-params.theta * params.dt).exp();
        assert!((g - decay).abs() < 0.03);

        // centered: ȳ + gᵗ (z̄ - ȳ) with centered moments
        let cx = data.x.iter().map(|v| (v - xbar).powi(2)).sum::<f64>() / nf;
        let cxy = data
            .x
            .iter()
            .zip(data.y.iter())
            .map(|(a, b)| (a - xbar) * (b - ybar))
            .sum::<f64>()
            / nf;
        let g = cxy / (cx + gamma);
        for fit in [
            fit_krr(&data, KernelSpec::Linear, gamma, true).unwrap(),
            fit_rrr(&data, KernelSpec::Linear, 1, gamma, true).unwrap(),
        ] {
            let stats = trajectory_stats(&dli_forecast(&fit, &z, 40).unwrap(), &[]).unwrap();
            for (t, m) in stats.mean.iter().enumerate() {
                let want = ybar + g.powi(t as i32 + 1) * (zbar - ybar);
                assert!((m - want).abs() < 1e-9, "t={t}: {m} vs {want}");
            }
        }
    }

    #[test]
    fn divergent_baseline_is_reported() {
        let data = SamplePairs::from_scalars(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        let fit = KoopmanFit::from_parts(
            data,
            KernelSpec::Linear,
            EstimatorKind::Krr,
            1.0,
            2,
            false,
            Representation::Full(Matrix::identity(2, 2) * 10.0),
        )
        .unwrap();
        let traj = baseline_forecast(&fit, &scalar_points(&[1.0]), 100).unwrap();
        let t = traj.diverged_at.expect("divergence expected");
        assert_eq!(traj.steps(), t - 1);
        assert!(traj.weights.iter().all(|w| w.is_finite() && w.abs() <= OVERFLOW_GUARD));
    }

    #[test]
    fn stats_trivial_and_loop_oracle() {
        let support = scalar_points(&[1.0, 3.0, -2.0, 0.5]);
        let make = |rows: Vec<Vec<f64>>| ForecastTrajectory {
            method: ForecastMethod::Dli,
            support: support.clone(),
            weights: Matrix::from_fn(rows.len(), 4, |t, i| rows[t][i]),
            reduced: Vec::new(),
            diverged_at: None,
        };
        let s = trajectory_stats(&make(vec![vec![0.25; 4]]), &[0.0, 1.0]).unwrap();
        assert!((s.mean[0] - 0.625).abs() < 1e-15);
        let var = [1.0f64, 3.0, -2.0, 0.5].iter().map(|v| (v - 0.625).powi(2)).sum::<f64>() / 4.0;
        assert!((s.variance[0] - var).abs() < 1e-14);
        assert_eq!(s.cdf[0], vec![0.25, 0.75]);

        let s = trajectory_stats(&make(vec![vec![0.0, 1.0, 0.0, 0.0]]), &[2.9, 3.0]).unwrap();
        assert_eq!((s.mean[0], s.variance[0]), (3.0, 0.0));
        assert_eq!(s.cdf[0], vec![0.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let rows: Vec<Vec<f64>> =
            (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pts = [-3.0, 0.7, 1.0, 5.0];
        let s = trajectory_stats(&make(rows.clone()), &pts).unwrap();
        let ys = [1.0, 3.0, -2.0, 0.5];
        for t in 0..5 {
            let mut m = 0.0;
            for i in 0..4 {
                m += rows[t][i] * ys[i];
            }
            assert!((s.mean[t] - m).abs() < 1e-14);
            for (k, &p) in pts.iter().enumerate() {
                let mut c = 0.0;
                for i in 0..4 {
                    if ys[i] <= p {
                        c += rows[t][i];
                    }
                }
                assert!((s.cdf[t][k] - c).abs() < 1e-14);
            }
        }
    }
}
