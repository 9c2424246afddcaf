//! Holdout selection of the penalty `lambda` on observational samples.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::graph::Dag;
use crate::likelihood::{env_nll, ScoreConfig};
use crate::linalg;
use crate::model::{normalize_weights, Dataset, EnvData};
use crate::search::{SearchReport, Searcher};

pub const DEFAULT_HOLDOUT: f64 = 0.2;
const MIN_OBSERVATIONAL: usize = 10;

/// How observational rows are assigned to the validation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Split {
    /// The last `ceil(frac n^1)` rows.
    Trailing,
    /// A seeded random subset of the same size.
    Shuffled(u64),
}

/// Training statistics (all environments, observational rows reduced) and the
/// validation covariance.
pub fn split_holdout(ds: &Dataset, frac: f64, split: Split) -> Result<(Vec<EnvData>, DMatrix<f64>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {frac} outside (0, 1)")));
    }
    let obs = ds
        .samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let n = obs.nrows();
    if n < MIN_OBSERVATIONAL {
        return Err(Error::InvalidArgument(format!(
            "observational environment has {n} rows; at least {MIN_OBSERVATIONAL} needed"
        )));
    }
    let n_valid = (frac * n as f64).ceil() as usize;
    if n_valid < 2 || n - n_valid < 2 {
        return Err(Error::InvalidArgument(format!("degenerate split of {n} rows")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    if let Split::Shuffled(seed) = split {
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (train_rows, valid_rows) = rows.split_at(n - n_valid);
    let pick = |idx: &[usize]| DMatrix::from_fn(idx.len(), obs.ncols(), |r, c| obs[(idx[r], c)]);
    let train_obs = pick(train_rows);
    let valid_cov = linalg::empirical_covariance(&pick(valid_rows));

    let mut train = ds.env_data();
    train[0] = EnvData::from_samples(&train_obs, ds.do_sets[0].clone());
    normalize_weights(&mut train);
    Ok((train, valid_cov))
}

/// Validation loss of a fitted model: observational likelihood with `psi = 0`.
pub fn validation_nll(fit: &FitResult, valid_cov: &DMatrix<f64>) -> Result<f64> {
    let env = EnvData {
        cov: valid_cov.clone(),
        n: 0,
        weight: 1.0,
        do_set: Default::default(),
    };
    env_nll(&fit.b_hat, &fit.gamma_hat, 0.0, &fit.w_hat[0], &env)
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationPoint {
    pub lambda: f64,
    pub validation_nll: f64,
    pub selected: Dag,
    pub train_score: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub holdout_frac: f64,
    pub split: Split,
    pub n_train: usize,
    pub n_valid: usize,
    pub path: Vec<ValidationPoint>,
    pub selected_lambda: f64,
    /// Model selected on the training data at the chosen penalty.
    pub train_model: FitResult,
    /// Search refit on all data with the chosen penalty.
    pub full: SearchReport,
}

/// Search on training data for every penalty in `grid`, pick the penalty whose
/// selected model has the smallest validation NLL (first on ties), then rerun
/// the search on the full data with that penalty.
pub fn holdout_validate(
    ds: &Dataset,
    cands: &[Dag],
    grid: &[f64],
    frac: f64,
    split: Split,
    cfg: &ScoreConfig,
    jobs: usize,
) -> Result<ValidationReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if grid.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidArgument("lambda values must be nonnegative".into()));
    }
    let (train, valid_cov) = split_holdout(ds, frac, split)?;
    let n_obs = ds.samples[0].nrows();
    let searcher = Searcher::new(&train, cfg, jobs)?;
    let mut path = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize, FitResult)> = None;
    for (idx, &lambda) in grid.iter().enumerate() {
        let report = searcher.run(cands, lambda)?;
        let fit = report.selected_fit().clone();
        let v = validation_nll(&fit, &valid_cov)?;
        path.push(ValidationPoint {
            lambda,
            validation_nll: v,
            selected: fit.dag.clone(),
            train_score: fit.score,
        });
        if best.as_ref().is_none_or(|(bv, _, _)| v < *bv) {
            best = Some((v, idx, fit));
        }
    }
    let (_, idx, train_model) = best.expect("nonempty grid");
    let selected_lambda = grid[idx];
    let full_data = ds.env_data();
    let full = Searcher::new(&full_data, cfg, jobs)?.run(cands, selected_lambda)?;
    let n_valid = (frac * n_obs as f64).ceil() as usize;
    Ok(ValidationReport {
        holdout_frac: frac,
        split,
        n_train: n_obs - n_valid,
        n_valid,
        path,
        selected_lambda,
        train_model,
        full,
    })
}
