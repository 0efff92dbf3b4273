//! CRPS study: calibrated CIR against kernel estimators on a scalar series.

use rayon::prelude::*;

use super::config::{ExperimentConfig, SystemSpec};
use super::io::{fmt_float, read_series, ResultRow};
use super::search::{grid_search, refit, SearchSpace, SelectionLog};
use crate::dynamics::{
    cir_calibrate_ls, cir_forecast_trajectory, cir_simulate, CirParams, SamplePairs, SeededRng,
};
use crate::forecaster::{baseline_forecast, dli_forecast, ForecastTrajectory};
use crate::kernels::{scalar_points, KernelSpec};
use crate::metrics::{crps, mean_std, WeightedMeasure};
use crate::{Error, Result};

pub const CRPS: &str = "crps";
pub const CIR_METHOD: &str = "cir";

#[derive(Clone, Debug, PartialEq)]
pub struct CrpsOutcome {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    /// `(method, average CRPS over the test window)`; `None` if diverged.
    pub averages: Vec<(String, Option<f64>)>,
    pub calibrated: CirParams,
    pub selections: Vec<(String, SelectionLog)>,
}

/// Splits pairs in time order, keeping the last `fraction` for validation.
pub fn split_chronological(pairs: &SamplePairs, fraction: f64) -> Result<(SamplePairs, SamplePairs)> {
    let n = pairs.len();
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::Empty("at least two pairs are needed for a split"));
    }
    let k = n - n_val;
    let part = |a: usize, len: usize| {
        SamplePairs::new(pairs.x.rows(a, len).into_owned(), pairs.y.rows(a, len).into_owned())
    };
    Ok((part(0, k)?, part(k, n_val)?))
}

/// Training states (`train_steps + 1` of them) and the held-out observations.
fn series(cfg: &ExperimentConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = &cfg.crps;
    let total = c.train_steps + c.test_steps;
    let path = match &cfg.system {
        SystemSpec::Cir { params, x0 } => cir_simulate(params, *x0, total, rng)?,
        SystemSpec::Csv { path, column } => {
            let s = read_series(std::path::Path::new(path), column)?;
            if s.len() < total + 1 {
                return Err(Error::invalid(format!(
                    "series has {} states, the study needs {}",
                    s.len(),
                    total + 1
                )));
            }
            s[..=total].to_vec()
        }
        SystemSpec::Ou(_) => return Err(Error::invalid("the CRPS study needs a CIR or CSV system")),
    };
    Ok((path[..=c.train_steps].to_vec(), path[c.train_steps + 1..].to_vec()))
}

fn score_rows(
    seed: u64,
    method: &str,
    measures: &[Option<WeightedMeasure>],
    observed: &[f64],
) -> Result<(Vec<ResultRow>, Option<f64>)> {
    let mut rows = Vec::with_capacity(observed.len());
    let mut values = Vec::with_capacity(observed.len());
    for (t, (m, &obs)) in measures.iter().zip(observed).enumerate() {
        let value = match m {
            Some(m) => Some(crps(m, obs)?),
            None => None,
        };
        if let Some(v) = value {
            values.push(v);
        }
        rows.push(ResultRow {
            seed,
            t: t + 1,
            method: method.to_string(),
            metric: CRPS.into(),
            value,
        });
    }
    let average = (values.len() == observed.len()).then(|| mean_std(&values).0);
    Ok((rows, average))
}

fn trajectory_measures(traj: &ForecastTrajectory, horizon: usize) -> Result<Vec<Option<WeightedMeasure>>> {
    (1..=horizon)
        .map(|t| {
            if t <= traj.steps() {
                traj.measure_at(t).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

pub fn run_repetition(cfg: &ExperimentConfig, seed: u64) -> Result<CrpsOutcome> {
    let mut rng = SeededRng::new(cfg.seed).child(seed).rng();
    let (train_series, observed) = series(cfg, &mut rng)?;
    let horizon = observed.len();
    let dt = match &cfg.system {
        SystemSpec::Cir { params, .. } => params.dt,
        _ => 1.0 / 52.0,
    };
    let last = *train_series.last().unwrap();

    let pairs = SamplePairs::from_series(&train_series)?;
    let (train, val) = split_chronological(&pairs, cfg.crps.validation_fraction)?;
    let kernels: Vec<KernelSpec> = cfg
        .grid
        .lengthscales
        .iter()
        .map(|&l| KernelSpec::gaussian(l))
        .collect::<Result<_>>()?;
    let space = SearchSpace {
        kernels: &kernels,
        gammas: &cfg.grid.gammas,
        ranks: &cfg.grid.ranks,
    };
    let kind = cfg.estimator.kind;
    let dli_name = format!("dli-{kind}");
    let base_name = kind.to_string();
    let (_, centered_log) = grid_search(&train, &val, kind, true, &space)?;
    let (_, plain_log) = grid_search(&train, &val, kind, false, &space)?;
    let centered = refit(&pairs, &centered_log)?;
    let plain = refit(&pairs, &plain_log)?;
    let start = scalar_points(&[last]);
    let dli = dli_forecast(&centered, &start, horizon)?;
    let base = baseline_forecast(&plain, &start, horizon)?;

    let calibrated = cir_calibrate_ls(&train_series, dt)?;
    let cir = cir_forecast_trajectory(&calibrated, last, horizon, cfg.crps.mc_samples, &mut rng)?;

    let mut rows = Vec::new();
    let mut averages = Vec::new();
    let cir_measures: Vec<Option<WeightedMeasure>> = cir.into_iter().map(Some).collect();
    for (name, measures) in [
        (CIR_METHOD.to_string(), cir_measures),
        (base_name.clone(), trajectory_measures(&base, horizon)?),
        (dli_name.clone(), trajectory_measures(&dli, horizon)?),
    ] {
        let (r, avg) = score_rows(seed, &name, &measures, &observed)?;
        rows.extend(r);
        averages.push((name, avg));
    }
    Ok(CrpsOutcome {
        seed,
        rows,
        averages,
        calibrated,
        selections: vec![(dli_name, centered_log), (base_name, plain_log)],
    })
}

pub fn run(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<CrpsOutcome>> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.repetitions as u64).collect();
    if parallel {
        seeds.par_iter().map(|&s| run_repetition(cfg, s)).collect()
    } else {
        seeds.iter().map(|&s| run_repetition(cfg, s)).collect()
    }
}

/// Table rows `model, mean_crps, std` over repetitions of the per-seed
/// average CRPS, plus the number of diverged seeds.
pub fn summary_table(outcomes: &[CrpsOutcome]) -> Vec<Vec<String>> {
    let Some(first) = outcomes.first() else {
        return Vec::new();
    };
    first
        .averages
        .iter()
        .map(|(method, _)| {
            let values: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.averages.iter().find(|(m, _)| m == method).and_then(|a| a.1))
                .collect();
            let diverged = outcomes.len() - values.len();
            let (mean, std) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&values)
            };
            vec![method.clone(), fmt_float(mean), fmt_float(std), diverged.to_string()]
        })
        .collect()
}

pub fn per_seed_table(outcomes: &[CrpsOutcome]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for o in outcomes {
        for (m, v) in &o.averages {
            rows.push(vec![
                o.seed.to_string(),
                m.clone(),
                v.map_or(super::io::DIVERGED.to_string(), fmt_float),
            ]);
        }
        let p = &o.calibrated;
        for (name, v) in [("kappa", p.kappa), ("b", p.b), ("sigma", p.sigma)] {
            rows.push(vec![o.seed.to_string(), format!("{CIR_METHOD}-{name}"), fmt_float(v)]);
        }
    }
    rows
}
