//! Hyperparameter selection by validation risk.

use serde::{Deserialize, Serialize};

use crate::dynamics::SamplePairs;
use crate::estimators::{
    fit_krr_with, fit_pcr_with, fit_rrr_with, EstimatorKind, FitGrams, KoopmanFit, RiskEvaluator,
    RrrSolver,
};
use crate::kernels::KernelSpec;
use crate::numerics::sym_eig;
use crate::{Error, Result};

/// One grid point and its validation risk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kernel: KernelSpec,
    /// Regularization; absent for PCR.
    pub gamma: Option<f64>,
    /// Requested rank; absent for KRR.
    pub rank: Option<usize>,
    /// Rank actually fitted after numerical truncation.
    pub effective_rank: Option<usize>,
    pub risk: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub estimator: EstimatorKind,
    pub centered: bool,
    pub best: usize,
    pub candidates: Vec<Candidate>,
}

impl SelectionLog {
    pub fn selected(&self) -> &Candidate {
        &self.candidates[self.best]
    }
}

#[derive(Clone, Debug)]
pub struct SearchSpace<'a> {
    pub kernels: &'a [KernelSpec],
    pub gammas: &'a [f64],
    pub ranks: &'a [usize],
}

/// Fits every grid point on `train`, scores it on `val`, and returns the
/// fit with the smallest risk (earliest grid point on ties).
pub fn grid_search(
    train: &SamplePairs,
    val: &SamplePairs,
    kind: EstimatorKind,
    centered: bool,
    space: &SearchSpace<'_>,
) -> Result<(KoopmanFit, SelectionLog)> {
    if space.kernels.is_empty()
        || (kind != EstimatorKind::Pcr && space.gammas.is_empty())
        || (kind != EstimatorKind::Krr && space.ranks.is_empty())
    {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let n = train.len();
    let mut candidates = Vec::new();
    let mut best: Option<(f64, usize, KoopmanFit)> = None;

    let mut consider = |cand: Candidate, fit: Result<KoopmanFit>, eval: &RiskEvaluator| {
        let mut cand = cand;
        match fit.and_then(|f| eval.risk(&f).map(|r| (f, r))) {
            Ok((fit, risk)) => {
                cand.effective_rank = cand.rank.map(|_| fit.rank());
                cand.risk = Some(risk);
                if best.as_ref().is_none_or(|(b, _, _)| risk < *b) {
                    best = Some((risk, candidates.len(), fit));
                }
            }
            Err(e) => {
                log::warn!("grid point {cand:?} failed: {e}");
                cand.error = Some(e.to_string());
            }
        }
        candidates.push(cand);
    };

    for &kernel in space.kernels {
        let grams = FitGrams::new(train, kernel, centered)?;
        let eval = RiskEvaluator::new(kernel, train, val)?;
        let base = Candidate {
            kernel,
            gamma: None,
            rank: None,
            effective_rank: None,
            risk: None,
            error: None,
        };
        match kind {
            EstimatorKind::Krr => {
                for &gamma in space.gammas {
                    let cand = Candidate {
                        gamma: Some(gamma),
                        ..base.clone()
                    };
                    consider(cand, fit_krr_with(train, &grams, gamma), &eval);
                }
            }
            EstimatorKind::Pcr => {
                let eig = sym_eig(&grams.input)?;
                for &rank in space.ranks {
                    let cand = Candidate {
                        rank: Some(rank),
                        ..base.clone()
                    };
                    consider(cand, fit_pcr_with(train, &grams, &eig, rank.min(n)), &eval);
                }
            }
            EstimatorKind::Rrr => {
                let solver = RrrSolver::new(&grams)?;
                let max_rank = space.ranks.iter().copied().max().unwrap_or(1).min(n);
                for &gamma in space.gammas {
                    let solution = solver.solve(gamma, max_rank);
                    for &rank in space.ranks {
                        let cand = Candidate {
                            gamma: Some(gamma),
                            rank: Some(rank),
                            ..base.clone()
                        };
                        let fit = match &solution {
                            Ok(sol) => fit_rrr_with(train, &grams, sol, rank.min(n)),
                            Err(e) => Err(Error::Numerical(e.to_string())),
                        };
                        consider(cand, fit, &eval);
                    }
                }
            }
        }
    }
    let (_, index, fit) =
        best.ok_or_else(|| Error::Numerical("no grid point produced a valid fit".into()))?;
    Ok((
        fit,
        SelectionLog {
            estimator: kind,
            centered,
            best: index,
            candidates,
        },
    ))
}

/// Refits the selected hyperparameters on a new sample.
pub fn refit(data: &SamplePairs, log: &SelectionLog) -> Result<KoopmanFit> {
    let c = log.selected();
    let grams = FitGrams::new(data, c.kernel, log.centered)?;
    let n = data.len();
    match log.estimator {
        EstimatorKind::Krr => fit_krr_with(data, &grams, c.gamma.unwrap_or_default()),
        EstimatorKind::Pcr => {
            let eig = sym_eig(&grams.input)?;
            fit_pcr_with(data, &grams, &eig, c.rank.unwrap_or(1).min(n))
        }
        EstimatorKind::Rrr => {
            let r = c.rank.unwrap_or(1).min(n);
            let sol = RrrSolver::new(&grams)?.solve(c.gamma.unwrap_or_default(), r)?;
            fit_rrr_with(data, &grams, &sol, r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairs(seed: u64, n: usize) -> SamplePairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.6 * v + rng.random_range(-0.2..0.2)).collect();
        SamplePairs::from_scalars(&x, &y).unwrap()
    }

    #[test]
    fn single_point_grid_is_selected() {
        let (tr, va) = (pairs(1, 20), pairs(2, 10));
        let k = [KernelSpec::gaussian(0.7).unwrap()];
        let space = SearchSpace {
            kernels: &k,
            gammas: &[1e-3],
            ranks: &[3],
        };
        for kind in [EstimatorKind::Krr, EstimatorKind::Pcr, EstimatorKind::Rrr] {
            let (fit, log) = grid_search(&tr, &va, kind, true, &space).unwrap();
            assert_eq!(log.candidates.len(), 1);
            assert_eq!(log.best, 0);
            assert_eq!(fit.estimator(), kind);
        }
    }

    #[test]
    fn corrupted_candidate_not_selected() {
        let (tr, va) = (pairs(3, 30), pairs(4, 30));
        let k = [KernelSpec::gaussian(0.7).unwrap()];
        let space = SearchSpace {
            kernels: &k,
            gammas: &[1e6, 1e-3],
            ranks: &[3],
        };
        for kind in [EstimatorKind::Krr, EstimatorKind::Rrr] {
            let (fit, log) = grid_search(&tr, &va, kind, true, &space).unwrap();
            assert!(log.candidates[1].risk.unwrap() < log.candidates[0].risk.unwrap());
            assert_eq!(fit.gamma(), 1e-3);
        }
    }

    #[test]
    fn refit_reproduces_selected_fit() {
        let (tr, va) = (pairs(5, 25), pairs(6, 15));
        let k = [KernelSpec::gaussian(0.5).unwrap(), KernelSpec::gaussian(1.5).unwrap()];
        let space = SearchSpace {
            kernels: &k,
            gammas: &[1e-4, 1e-2],
            ranks: &[2, 4],
        };
        let (fit, log) = grid_search(&tr, &va, EstimatorKind::Rrr, false, &space).unwrap();
        assert_eq!(log.candidates.len(), 8);
        let again = refit(&tr, &log).unwrap();
        assert_eq!(again.representation(), fit.representation());
    }
}
