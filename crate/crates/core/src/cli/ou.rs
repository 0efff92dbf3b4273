//! Relative-MMD forecasting study on the Ornstein-Uhlenbeck process.

use rayon::prelude::*;

use super::config::{ExperimentConfig, MmdKernel, SystemSpec};
use super::io::ResultRow;
use super::search::{grid_search, SearchSpace, SelectionLog};
use crate::dynamics::{mixture_flow, ou_sample_pairs, SeededRng};
use crate::estimators::{estimator_eigenvalues, evolution_compression, KoopmanFit};
use crate::forecaster::{baseline_forecast, dli_forecast, ForecastTrajectory};
use crate::kernels::{scalar_points, GaussianKernel, KernelSpec};
use crate::metrics::MmdEvaluator;
use crate::spectral::power_norm_profile;
use crate::{Error, Result};

pub const REL_MMD: &str = "rel_mmd";

/// Steps allowed for the certified power-norm profile of each fit.
const DIAGNOSTIC_STEPS: usize = 20_000;

/// Per-fit summary written next to the result curves.
#[derive(Clone, Debug, PartialEq)]
pub struct FitDiagnostics {
    pub method: String,
    pub selection: SelectionLog,
    pub rho: f64,
    pub p_hat: f64,
    pub p_certified: bool,
    pub leading_eigenvalue_modulus: f64,
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepetitionOutcome {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub diagnostics: Vec<FitDiagnostics>,
}

pub fn method_names(cfg: &ExperimentConfig) -> (String, String) {
    let kind = cfg.estimator.kind.to_string();
    (format!("dli-{kind}"), kind)
}

fn kernels(cfg: &ExperimentConfig) -> Result<Vec<KernelSpec>> {
    cfg.grid.lengthscales.iter().map(|&l| KernelSpec::gaussian(l)).collect()
}

fn diagnose(method: String, fit: &KoopmanFit, selection: SelectionLog, traj: &ForecastTrajectory) -> Result<FitDiagnostics> {
    let m = evolution_compression(fit);
    let profile = power_norm_profile(&m, DIAGNOSTIC_STEPS)?;
    let eig = estimator_eigenvalues(fit)?;
    Ok(FitDiagnostics {
        method,
        selection,
        rho: crate::numerics::spectral_radius(&m)?,
        p_hat: profile.p_hat,
        p_certified: profile.certified,
        leading_eigenvalue_modulus: eig.first().map_or(0.0, |z| z.norm()),
        diverged_at: traj.diverged_at,
    })
}

fn curve_rows(
    seed: u64,
    method: &str,
    traj: &ForecastTrajectory,
    horizon: usize,
    mut score: impl FnMut(usize, &crate::numerics::Vector) -> Result<f64>,
) -> Result<Vec<ResultRow>> {
    (1..=horizon)
        .map(|t| {
            let value = if t <= traj.steps() {
                Some(score(t, &traj.weights_at(t)?)?)
            } else {
                None
            };
            Ok(ResultRow {
                seed,
                t,
                method: method.to_string(),
                metric: REL_MMD.into(),
                value,
            })
        })
        .collect()
}

/// One repetition: sample, tune both estimators, forecast, score.
pub fn run_repetition(cfg: &ExperimentConfig, seed: u64) -> Result<RepetitionOutcome> {
    let SystemSpec::Ou(params) = cfg.system else {
        return Err(Error::invalid("the MMD study needs an OU system"));
    };
    let mut rng = SeededRng::new(cfg.seed).child(seed).rng();
    let train = ou_sample_pairs(&params, cfg.sizes.train, &mut rng)?;
    let val = ou_sample_pairs(&params, cfg.sizes.validation, &mut rng)?;
    let mixture = cfg.initial_mixture()?;
    let z: Vec<f64> = (0..cfg.sizes.initial).map(|_| mixture.sample(&mut rng)).collect();
    let z = scalar_points(&z);

    let kernels = kernels(cfg)?;
    let space = SearchSpace {
        kernels: &kernels,
        gammas: &cfg.grid.gammas,
        ranks: &cfg.grid.ranks,
    };
    let (dli_name, base_name) = method_names(cfg);
    let (centered, centered_log) = grid_search(&train, &val, cfg.estimator.kind, true, &space)?;
    let (plain, plain_log) = grid_search(&train, &val, cfg.estimator.kind, false, &space)?;
    let dli = dli_forecast(&centered, &z, cfg.horizon)?;
    let base = baseline_forecast(&plain, &z, cfg.horizon)?;

    let targets = (1..=cfg.horizon)
        .map(|t| mixture_flow(&params, &mixture, t as f64 * params.dt))
        .collect::<Result<Vec<_>>>()?;
    let evaluator = |fit: &KoopmanFit| -> Result<MmdEvaluator> {
        let kernel = match cfg.evaluation.mmd_kernel {
            MmdKernel::Fixed { lengthscale } => GaussianKernel::new(lengthscale)?,
            MmdKernel::Fitted => fit
                .kernel()
                .as_gaussian()
                .ok_or_else(|| Error::invalid("relative MMD needs a Gaussian kernel"))?,
        };
        MmdEvaluator::new(kernel, &train.y)
    };
    let eval = evaluator(&centered)?;
    let mut rows = curve_rows(seed, &dli_name, &dli, cfg.horizon, |t, w| eval.relative(w, &targets[t - 1]))?;
    let eval = evaluator(&plain)?;
    rows.extend(curve_rows(seed, &base_name, &base, cfg.horizon, |t, w| {
        eval.relative(w, &targets[t - 1])
    })?);
    let diagnostics = vec![
        diagnose(dli_name, &centered, centered_log, &dli)?,
        diagnose(base_name, &plain, plain_log, &base)?,
    ];
    Ok(RepetitionOutcome {
        seed,
        rows,
        diagnostics,
    })
}

/// All repetitions, in repetition order regardless of scheduling.
pub fn run(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<RepetitionOutcome>> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.repetitions as u64).collect();
    if parallel {
        seeds.par_iter().map(|&s| run_repetition(cfg, s)).collect()
    } else {
        seeds.iter().map(|&s| run_repetition(cfg, s)).collect()
    }
}

pub fn diagnostics_table(outcomes: &[RepetitionOutcome]) -> Vec<Vec<String>> {
    use super::io::fmt_float;
    let mut rows = Vec::new();
    for o in outcomes {
        for d in &o.diagnostics {
            let c = d.selection.selected();
            let mut push = |metric: &str, value: String| {
                rows.push(vec![o.seed.to_string(), d.method.clone(), metric.to_string(), value]);
            };
            if let Some(g) = c.kernel.as_gaussian() {
                push("lengthscale", fmt_float(g.lengthscale()));
            }
            if let Some(g) = c.gamma {
                push("gamma", fmt_float(g));
            }
            if let Some(r) = c.effective_rank {
                push("rank", r.to_string());
            }
            push("validation_risk", c.risk.map_or("nan".into(), fmt_float));
            push("rho", fmt_float(d.rho));
            push("p_hat", fmt_float(d.p_hat));
            push("p_certified", d.p_certified.to_string());
            push("lambda1_abs", fmt_float(d.leading_eigenvalue_modulus));
            push(
                "diverged_at",
                d.diverged_at.map_or("none".into(), |t| t.to_string()),
            );
        }
    }
    rows
}
