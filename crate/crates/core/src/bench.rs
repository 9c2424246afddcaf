//! Seeded structure-recovery trials on the simulation presets.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{self, Dag};
use crate::likelihood::ScoreConfig;
use crate::linalg;
use crate::model::presets::{self, Preset, PresetInstance};
use crate::model::{simulate, Dataset};
use crate::validate::{holdout_validate, Split, DEFAULT_HOLDOUT};

/// Penalties tried by holdout validation unless overridden.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [0.0, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.02];

/// Covariance of all environments' samples stacked together.
pub fn pooled_covariance(ds: &Dataset) -> DMatrix<f64> {
    let n: usize = ds.samples.iter().map(|x| x.nrows()).sum();
    let p = ds.p();
    let mut stacked = DMatrix::zeros(n, p);
    let mut row = 0;
    for x in &ds.samples {
        stacked.rows_mut(row, x.nrows()).copy_from(x);
        row += x.nrows();
    }
    linalg::empirical_covariance(&stacked)
}

/// Candidates for a preset: its prescribed set, or the pooled hill-climb set.
pub fn candidates_for(inst: &PresetInstance, ds: &Dataset) -> Result<Vec<Dag>> {
    if let Some(c) = &inst.candidates {
        return Ok(c.clone());
    }
    let n: usize = ds.samples.iter().map(|x| x.nrows()).sum();
    graph::generate_candidates(&pooled_covariance(ds), n, graph::DEFAULT_MAX_PARENTS)
}

pub fn preset_config(inst: &PresetInstance) -> ScoreConfig {
    ScoreConfig {
        h_bar: inst.h_bar,
        c_psi: inst.c_psi,
        ..ScoreConfig::default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub preset: String,
    pub seed: u64,
    pub truth: Dag,
    pub estimate: Dag,
    pub tp: usize,
    pub fp: usize,
    pub lambda: f64,
    pub n_candidates: usize,
    /// Whether some candidate is Markov equivalent to the truth.
    pub candidates_cover_truth: bool,
    pub seconds: f64,
}

/// Simulate one seeded instance of `preset`, pick `lambda` by holdout
/// validation and compare the selected DAG with the truth. Parent-recovery
/// presets count only the response's parents.
pub fn run_trial(preset: Preset, t: usize, seed: u64, grid: &[f64], jobs: usize) -> Result<TrialOutcome> {
    let start = Instant::now();
    let inst = presets::build(preset, t, seed)?;
    let sim = simulate(&inst.params, &inst.n_per_env, inst.noise, &inst.latent_cov, inst.xi, seed)?;
    let ds = Dataset::from_simulation(&sim);
    let cands = candidates_for(&inst, &ds)?;
    let cfg = preset_config(&inst);
    let report = holdout_validate(&ds, &cands, grid, DEFAULT_HOLDOUT, Split::Trailing, &cfg, jobs)?;
    let truth = inst.truth();
    let estimate = report.full.selected.dag.clone();
    let (tp, fp) = match inst.response {
        Some(r) => graph::parent_accuracy(&estimate, &truth, r),
        None => graph::edge_accuracy(&estimate, &truth),
    };
    Ok(TrialOutcome {
        preset: inst.name.clone(),
        seed,
        candidates_cover_truth: cands.iter().any(|d| d.is_markov_equivalent(&truth)),
        truth,
        estimate,
        tp,
        fp,
        lambda: report.selected_lambda,
        n_candidates: cands.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean true and false positives over trials.
pub fn mean_accuracy(trials: &[TrialOutcome]) -> (f64, f64) {
    let n = trials.len().max(1) as f64;
    (
        trials.iter().map(|t| t.tp as f64).sum::<f64>() / n,
        trials.iter().map(|t| t.fp as f64).sum::<f64>() / n,
    )
}
