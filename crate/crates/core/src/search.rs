//! Candidate scoring, optimum sets, backward deletion and final selection.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{score_dag, FitResult};
use crate::graph::{moralize, Dag};
use crate::likelihood::ScoreConfig;
use crate::model::EnvData;

/// One scored candidate. `fit` is `None` when fitting failed; the error
/// message is kept instead.
#[derive(Clone, Debug, Serialize)]
pub struct Scored {
    pub dag: Dag,
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Scored {
    pub fn score(&self) -> f64 {
        self.fit.as_ref().map_or(f64::INFINITY, |f| f.score)
    }

    fn ok(&self) -> Option<&FitResult> {
        self.fit.as_ref()
    }
}

fn sort_scored(v: &mut [Scored]) {
    v.sort_by(|a, b| a.score().total_cmp(&b.score()).then_with(|| a.dag.cmp(&b.dag)));
}

/// Scores DAGs on a fixed dataset, caching the penalty-free fits so that
/// repeated requests (deletion paths, several penalties) are free.
pub struct Searcher<'a> {
    data: &'a [EnvData],
    cfg: ScoreConfig,
    jobs: usize,
    cache: Mutex<HashMap<Dag, std::result::Result<FitResult, String>>>,
}

impl<'a> Searcher<'a> {
    pub fn new(data: &'a [EnvData], cfg: &ScoreConfig, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        crate::model::validate_data(data)?;
        Ok(Searcher {
            data,
            cfg: ScoreConfig {
                lambda: 0.0,
                ..cfg.clone()
            },
            jobs: jobs.max(1),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn data(&self) -> &[EnvData] {
        self.data
    }

    /// Number of distinct DAGs fitted so far.
    pub fn n_fitted(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn ensure(&self, dags: &[Dag]) {
        let missing: Vec<Dag> = {
            let cache = self.cache.lock().expect("cache lock");
            let mut seen = BTreeSet::new();
            dags.iter()
                .filter(|d| !cache.contains_key(*d) && seen.insert((*d).clone()))
                .cloned()
                .collect()
        };
        if missing.is_empty() {
            return;
        }
        let fit_one = |d: &Dag| {
            let r = score_dag(d, self.data, &self.cfg).map_err(|e| e.to_string());
            if let Err(e) = &r {
                warn!("fit of {d} failed: {e}");
            }
            (d.clone(), r)
        };
        let results: Vec<_> = if self.jobs > 1 && missing.len() > 1 {
            match rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build() {
                Ok(pool) => pool.install(|| missing.par_iter().map(fit_one).collect()),
                Err(_) => missing.iter().map(fit_one).collect(),
            }
        } else {
            missing.iter().map(fit_one).collect()
        };
        let mut cache = self.cache.lock().expect("cache lock");
        cache.extend(results);
    }

    /// Score `dags` with penalty `lambda`, sorted ascending by score.
    pub fn score_all(&self, dags: &[Dag], lambda: f64) -> Vec<Scored> {
        self.ensure(dags);
        let cache = self.cache.lock().expect("cache lock");
        let mut out: Vec<Scored> = dags
            .iter()
            .map(|d| match &cache[d] {
                Ok(f) => Scored {
                    dag: d.clone(),
                    fit: Some(f.with_lambda(lambda)),
                    error: None,
                },
                Err(e) => Scored {
                    dag: d.clone(),
                    fit: None,
                    error: Some(e.clone()),
                },
            })
            .collect();
        sort_scored(&mut out);
        out
    }

    /// Deletion path of `fit`: the DAGs obtained by removing its `i` weakest
    /// edges (by `|b_hat|`) for `i = 1..#edges`, each scored.
    pub fn backward_delete(&self, fit: &FitResult, lambda: f64) -> Vec<Scored> {
        let path = deletion_path(fit);
        if path.is_empty() {
            return Vec::new();
        }
        let scored = self.score_all(&path, lambda);
        // keep path order rather than score order
        path.iter()
            .map(|d| {
                scored
                    .iter()
                    .find(|s| &s.dag == d)
                    .expect("scored every path member")
                    .clone()
            })
            .collect()
    }

    /// Full search with penalty `lambda`.
    pub fn run(&self, cands: &[Dag], lambda: f64) -> Result<SearchReport> {
        if cands.is_empty() {
            return Err(Error::InvalidArgument("no candidate DAGs".into()));
        }
        let tol = self.cfg.opt_tolerance;
        let candidates = self.score_all(cands, lambda);
        if candidates.iter().all(|s| s.fit.is_none()) {
            return Err(Error::InvalidArgument(format!(
                "every candidate failed to fit: {}",
                candidates[0].error.clone().unwrap_or_default()
            )));
        }
        let optimum = optimum_set(&candidates, tol);
        let mut deletion_paths = Vec::new();
        let mut pool: Vec<Scored> = optimum.clone();
        for s in &optimum {
            let path = self.backward_delete(s.ok().expect("optimum entries fitted"), lambda);
            pool.extend(path.iter().cloned());
            deletion_paths.push(path);
        }
        let mut seen = BTreeSet::new();
        pool.retain(|s| seen.insert(s.dag.clone()));
        sort_scored(&mut pool);
        let final_set = optimum_set(&pool, tol);
        let minimal_moral = minimal_moral(&final_set);
        let selected = minimal_moral[0].clone();
        Ok(SearchReport {
            lambda,
            tolerance: tol,
            candidates,
            optimum,
            deletion_paths,
            final_set,
            minimal_moral,
            selected,
        })
    }
}

/// Score every candidate; failures are recorded per candidate.
pub fn score_candidates(cands: &[Dag], data: &[EnvData], cfg: &ScoreConfig) -> Result<Vec<Scored>> {
    if cands.is_empty() {
        return Err(Error::InvalidArgument("no candidate DAGs".into()));
    }
    Ok(Searcher::new(data, cfg, 1)?.score_all(cands, cfg.lambda))
}

/// Entries whose score is within `tol` (relative) of the minimum, in score order.
pub fn optimum_set(scored: &[Scored], tol: f64) -> Vec<Scored> {
    let min = scored.iter().map(Scored::score).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Vec::new();
    }
    let cutoff = min + tol * min.abs();
    let mut out: Vec<Scored> = scored
        .iter()
        .filter(|s| s.score() <= cutoff)
        .cloned()
        .collect();
    sort_scored(&mut out);
    out
}

/// Entries of `set` with the fewest moral edges, in score order.
pub fn minimal_moral(set: &[Scored]) -> Vec<Scored> {
    let fewest = set
        .iter()
        .filter_map(|s| s.ok().map(|f| f.moral_edges))
        .min()
        .unwrap_or(0);
    set.iter()
        .filter(|s| s.ok().is_some_and(|f| f.moral_edges == fewest))
        .cloned()
        .collect()
}

/// DAGs formed by cumulatively deleting the weakest edges of a fit.
pub fn deletion_path(fit: &FitResult) -> Vec<Dag> {
    let mut edges: Vec<(usize, usize)> = fit.dag.edges().collect();
    edges.sort_by(|&(j1, i1), &(j2, i2)| {
        fit.b_hat[(i1, j1)]
            .abs()
            .total_cmp(&fit.b_hat[(i2, j2)].abs())
            .then((j1, i1).cmp(&(j2, i2)))
    });
    let mut cur = fit.dag.clone();
    edges
        .into_iter()
        .map(|(j, i)| {
            cur = cur.without_edge(j, i);
            cur.clone()
        })
        .collect()
}

/// Score the backward-deletion path of `fit` on `data`.
pub fn backward_delete(fit: &FitResult, data: &[EnvData], cfg: &ScoreConfig) -> Result<Vec<Scored>> {
    Ok(Searcher::new(data, cfg, 1)?.backward_delete(fit, cfg.lambda))
}

/// Everything produced by one search.
#[derive(Clone, Debug, Serialize)]
pub struct SearchReport {
    pub lambda: f64,
    pub tolerance: f64,
    pub candidates: Vec<Scored>,
    pub optimum: Vec<Scored>,
    pub deletion_paths: Vec<Vec<Scored>>,
    /// Optimum set over candidates and deletion paths.
    pub final_set: Vec<Scored>,
    /// Members of `final_set` with the fewest moral edges.
    pub minimal_moral: Vec<Scored>,
    pub selected: Scored,
}

impl SearchReport {
    pub fn selected_fit(&self) -> &FitResult {
        self.selected.fit.as_ref().expect("selected entry is fitted")
    }

    /// Whether every member of the final set has a moral graph containing
    /// that of `truth`.
    pub fn final_set_contains_moral(&self, truth: &Dag) -> bool {
        let mt = moralize(truth);
        self.final_set.iter().all(|s| moralize(&s.dag).is_superset_of(&mt))
    }
}

/// Run the full search (candidates, optimum set, backward deletion, final set).
pub fn run_search(cands: &[Dag], data: &[EnvData], cfg: &ScoreConfig, jobs: usize) -> Result<SearchReport> {
    Searcher::new(data, cfg, jobs)?.run(cands, cfg.lambda)
}
