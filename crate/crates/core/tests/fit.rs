mod common;

use std::collections::BTreeSet;

use directlik::fit::{self, Nuisance};
use directlik::graph::{self, Dag};
use directlik::linalg;
use directlik::model::{self, simulate, EnvData, Noise};
use directlik::{score_dag, EnvSpec, FitResult, PerturbationMode, ScmParams, ScoreConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [PerturbationMode; 3] = [
    PerturbationMode::IidLatent,
    PerturbationMode::UnperturbedLatent,
    PerturbationMode::SingleParameter,
];

fn sample_data(params: &ScmParams, n: usize, seed: u64) -> Vec<EnvData> {
    let h = params.h();
    let sim = simulate(params, &vec![n; params.envs.len()], Noise::Gaussian, &DMatrix::identity(h, h), 0.0, seed).unwrap();
    model::Dataset::from_simulation(&sim).env_data()
}

/// A random interior point of the nuisance space for `mode`.
fn random_nuisance(rng: &mut ChaCha8Rng, p: usize, h: usize, m: usize, mode: PerturbationMode) -> Nuisance {
    let gamma = common::random_matrix(rng, p, h, 0.8);
    let w1 = DVector::from_fn(p, |_, _| rng.random_range(0.5..2.0));
    let mut v = vec![DVector::zeros(p); m];
    let mut psi = vec![0.0; m];
    for e in 1..m {
        v[e] = match mode {
            PerturbationMode::SingleParameter => DVector::from_element(p, rng.random_range(0.1..2.0)),
            _ => DVector::from_fn(p, |_, _| rng.random_range(0.1..2.0)),
        };
        if mode != PerturbationMode::UnperturbedLatent {
            psi[e] = rng.random_range(0.1..1.0);
        }
    }
    Nuisance { gamma, w1, v, psi }
}

/// Max relative deviation of the analytic gradient from central differences.
fn gradient_error(b: &DMatrix<f64>, nuis: &Nuisance, data: &[EnvData], mode: PerturbationMode) -> f64 {
    let (_, g) = fit::nuisance_objective(b, nuis, data, mode).unwrap();
    let x = nuis.pack(mode);
    let step = 1e-5;
    let f = |x: &DVector<f64>| fit::nuisance_objective(b, &nuis.unpack(x, mode), data, mode).unwrap().0;
    let fd = DVector::from_fn(x.len(), |i, _| {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += step;
        lo[i] -= step;
        (f(&hi) - f(&lo)) / (2.0 * step)
    });
    (&g - &fd).norm() / fd.norm().max(1e-8)
}

fn check_fit_invariants(fit: &FitResult, dag: &Dag, cfg: &ScoreConfig) {
    let p = dag.p();
    for i in 0..p {
        for j in 0..p {
            if fit.b_hat[(i, j)] != 0.0 {
                assert!(dag.has_edge(j, i), "b_hat[{i},{j}] outside the DAG");
            }
        }
    }
    assert_eq!(fit.psi_hat[0], 0.0);
    for (e, w) in fit.w_hat.iter().enumerate() {
        assert!(fit.psi_hat[e] >= 0.0 && fit.psi_hat[e] <= cfg.c_psi + 1e-12);
        assert!(w.iter().zip(fit.w_hat[0].iter()).all(|(a, b)| a >= b));
    }
    assert!(fit.w_hat[0].iter().all(|&x| x > 0.0));
    for pair in fit.per_iter_nll.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "nll rose from {} to {}", pair[0], pair[1]);
    }
    assert!((fit.score - fit.nll - cfg.lambda * fit.moral_edges as f64).abs() < 1e-12);
    assert_eq!(fit.moral_edges, graph::moral_edge_count(dag));
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for mode in MODES {
        for _ in 0..8 {
            let p = rng.random_range(2..6);
            let h = rng.random_range(0..3);
            let m = rng.random_range(1..4);
            let b = common::random_b(&mut rng, p, 0.5);
            let mut data: Vec<EnvData> = (0..m)
                .map(|e| EnvData {
                    cov: common::random_spd(&mut rng, p),
                    n: 100 + e,
                    weight: 1.0,
                    do_set: BTreeSet::new(),
                })
                .collect();
            model::normalize_weights(&mut data);
            let nuis = random_nuisance(&mut rng, p, h, m, mode);
            let err = gradient_error(&b, &nuis, &data, mode);
            assert!(err <= 1e-4, "{mode}: relative error {err}");
        }
    }
}

#[test]
fn gradient_vanishes_at_exact_fit() {
    let params = common::standard_fixture();
    let data = model::population_env_data(&params).unwrap();
    let nuis = Nuisance {
        gamma: params.gamma.clone(),
        w1: params.w1.clone(),
        v: params.envs.iter().map(|e| &e.w - &params.w1).collect(),
        psi: params.envs.iter().map(|e| e.psi).collect(),
    };
    let (_, g) = fit::nuisance_objective(&params.b, &nuis, &data, PerturbationMode::IidLatent).unwrap();
    assert!(g.amax() < 1e-10, "{}", g.amax());
    let cfg = ScoreConfig { c_psi: 0.5, ..ScoreConfig::default() };
    let next = fit::nuisance_gradient_step(&params.b, &nuis, &data, &cfg).unwrap();
    assert!((next.pack(cfg.mode) - nuis.pack(cfg.mode)).amax() < 1e-10);
}

#[test]
fn descent_projects_psi_into_box() {
    let params = common::standard_fixture();
    let data = model::population_env_data(&params).unwrap();
    // the truth has psi = 0.3 and 0.45; a cap of 0.1 is active
    let cfg = ScoreConfig { c_psi: 0.1, ..ScoreConfig::default() };
    let (b, start) = fit::initialize(&params.dag().unwrap(), &data, &cfg).unwrap();
    let out = fit::nuisance_descent(&b, &start, &data, &cfg).unwrap();
    assert!(out.nuisance.psi.iter().all(|&x| (0.0..=0.1).contains(&x)));
    assert!(out.nuisance.v.iter().all(|v| v.min() >= 0.0));
}

#[test]
fn solve_b_matches_per_row_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = 5;
    let b_true = common::random_b(&mut rng, p, 0.6);
    let dag = Dag::from_support(&b_true, 0.0).unwrap();
    let cov = common::random_spd(&mut rng, p);
    let data = vec![EnvData {
        cov: cov.clone(),
        n: 50,
        weight: 1.0,
        do_set: BTreeSet::new(),
    }];
    let w = DVector::from_fn(p, |k, _| 0.5 + k as f64);
    let b = fit::solve_b(&dag, &DMatrix::zeros(p, 1), &[0.0], &[w], &data).unwrap();
    for i in 0..p {
        let pa = dag.parents(i);
        if pa.is_empty() {
            assert!(b.row(i).iter().all(|&x| x == 0.0));
            continue;
        }
        let spp = DMatrix::from_fn(pa.len(), pa.len(), |a, c| cov[(pa[a], pa[c])]);
        let spi = DVector::from_fn(pa.len(), |a, _| cov[(pa[a], i)]);
        let coef = spp.lu().solve(&spi).unwrap();
        for (a, &j) in pa.iter().enumerate() {
            assert!((b[(i, j)] - coef[a]).abs() < 1e-10);
        }
    }
    let empty = fit::solve_b(&Dag::empty(p), &DMatrix::zeros(p, 1), &[0.0], &[DVector::from_element(p, 1.0)], &data).unwrap();
    assert_eq!(empty, DMatrix::zeros(p, p));
}

#[test]
fn solve_b_at_true_nuisance_returns_truth() {
    let params = common::standard_fixture();
    let data = model::population_env_data(&params).unwrap();
    let psis: Vec<f64> = params.envs.iter().map(|e| e.psi).collect();
    let ws: Vec<DVector<f64>> = params.envs.iter().map(|e| e.w.clone()).collect();
    // a superset of the true edges still lands on the truth
    let dag = params.dag().unwrap().with_edge(0, 3).unwrap().with_edge(0, 2).unwrap();
    let b = fit::solve_b(&dag, &params.gamma, &psis, &ws, &data).unwrap();
    assert!(linalg::max_abs_diff(&b, &params.b) < 1e-8);
}

#[test]
fn initialization_on_population_chain() {
    let w1 = DVector::from_element(2, 0.5);
    let params = ScmParams {
        b: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -0.7, 0.0]),
        gamma: DMatrix::zeros(2, 1),
        w1: w1.clone(),
        envs: vec![EnvSpec::observational(&w1)],
    };
    let data = model::population_env_data(&params).unwrap();
    let (b, nuis) = fit::initialize(&params.dag().unwrap(), &data, &ScoreConfig::default()).unwrap();
    assert!((b[(1, 0)] + 0.7).abs() < 1e-14);
    assert!((&nuis.w1 - &w1).amax() < 1e-14);

    let (b, nuis) = fit::initialize(&Dag::empty(2), &data, &ScoreConfig::default()).unwrap();
    assert_eq!(b, DMatrix::zeros(2, 2));
    assert_eq!(nuis.w1, data[0].cov.diagonal());
}

#[test]
fn initial_latents_are_the_best_low_rank_factor() {
    let params = common::standard_fixture();
    let data = model::population_env_data(&params).unwrap();
    let dag = params.dag().unwrap();
    for h in [1, 2] {
        let cfg = ScoreConfig { h_bar: h, ..ScoreConfig::default() };
        let (b, nuis) = fit::initialize(&dag, &data, &cfg).unwrap();
        let m = DMatrix::identity(4, 4) - &b;
        let s = &m * &data[0].cov * m.transpose();
        let eig = s.symmetric_eigen();
        let mut idx: Vec<usize> = (0..4).collect();
        idx.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
        let mut trunc = DMatrix::zeros(4, 4);
        for &k in &idx[..h] {
            let u = eig.eigenvectors.column(k);
            trunc += &u * u.transpose() * eig.eigenvalues[k];
        }
        let gg = &nuis.gamma * nuis.gamma.transpose();
        assert!(linalg::max_abs_diff(&gg, &trunc) < 1e-10);
        let gram = nuis.gamma.transpose() * &nuis.gamma;
        for a in 0..h {
            for c in 0..h {
                if a != c {
                    assert!(gram[(a, c)].abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn diagonal_model_without_latents() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cov = common::random_spd(&mut rng, 4);
    let data = vec![EnvData {
        cov: cov.clone(),
        n: 80,
        weight: 1.0,
        do_set: BTreeSet::new(),
    }];
    let cfg = ScoreConfig { h_bar: 0, ..ScoreConfig::default() };
    let fit = score_dag(&Dag::empty(4), &data, &cfg).unwrap();
    let want: f64 = cov.diagonal().iter().map(|v| v.ln()).sum::<f64>() + 4.0;
    assert!((fit.nll - want).abs() < 1e-8, "{} vs {want}", fit.nll);
    assert!(fit.converged);
}

#[test]
fn true_dag_attains_population_baseline() {
    let params = common::standard_fixture();
    let data = model::population_env_data(&params).unwrap();
    let cfg = common::tight_config();
    let dag = params.dag().unwrap();
    let fit = score_dag(&dag, &data, &cfg).unwrap();
    let baseline: f64 = data.iter().map(|d| d.weight * (linalg::spd_logdet(&d.cov).unwrap() + 4.0)).sum();
    assert!((fit.nll - baseline).abs() < 1e-6, "{} vs {baseline}", fit.nll);
    assert!(linalg::max_abs_diff(&fit.b_hat, &params.b) <= 1e-3);
    check_fit_invariants(&fit, &dag, &cfg);
}

#[test]
fn penalty_shifts_score_exactly() {
    let params = common::standard_fixture();
    let data = sample_data(&params, 300, 2);
    let dag = params.dag().unwrap();
    let a = score_dag(&dag, &data, &ScoreConfig::default()).unwrap();
    let cfg = ScoreConfig { lambda: 0.05, ..ScoreConfig::default() };
    let b = score_dag(&dag, &data, &cfg).unwrap();
    assert_eq!(a.nll, b.nll);
    assert!((b.score - a.score - 0.05 * graph::moral_edge_count(&dag) as f64).abs() < 1e-12);
    assert_eq!(a.with_lambda(0.05), b);
}

#[test]
fn fits_are_deterministic() {
    let params = common::standard_fixture();
    let data = sample_data(&params, 200, 6);
    let dag = params.dag().unwrap().with_edge(0, 3).unwrap();
    let a = score_dag(&dag, &data, &ScoreConfig::default()).unwrap();
    let b = score_dag(&dag, &data, &ScoreConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn modes_constrain_the_fitted_nuisance() {
    let params = common::unperturbed_fixture();
    let data = sample_data(&params, 400, 3);
    let dag = params.dag().unwrap();
    let cfg = ScoreConfig {
        mode: PerturbationMode::UnperturbedLatent,
        ..ScoreConfig::default()
    };
    let fit = score_dag(&dag, &data, &cfg).unwrap();
    assert!(fit.psi_hat.iter().all(|&x| x == 0.0));
    check_fit_invariants(&fit, &dag, &cfg);

    let cfg = ScoreConfig {
        mode: PerturbationMode::SingleParameter,
        ..ScoreConfig::default()
    };
    let fit = score_dag(&dag, &data, &cfg).unwrap();
    for w in &fit.w_hat[1..] {
        let d = w - &fit.w_hat[0];
        assert!(d.max() - d.min() <= 1e-10);
    }
    check_fit_invariants(&fit, &dag, &cfg);
}

#[test]
fn fit_result_json_round_trip() {
    let params = common::standard_fixture();
    let data = sample_data(&params, 100, 1);
    let fit = score_dag(&params.dag().unwrap(), &data, &ScoreConfig::default()).unwrap();
    let s = serde_json::to_string(&fit).unwrap();
    let back: FitResult = serde_json::from_str(&s).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), s);
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert_eq!(v["b_hat"].as_array().unwrap().len(), 4);
    // row-major: row 1 holds the parents of variable 1
    assert_eq!(v["b_hat"][1][0].as_f64().unwrap(), fit.b_hat[(1, 0)]);
    assert_eq!(v["b_hat"][0][1].as_f64().unwrap(), 0.0);
}

#[test]
fn rejects_bad_inputs() {
    let params = common::standard_fixture();
    let data = sample_data(&params, 50, 1);
    assert!(score_dag(&Dag::empty(3), &data, &ScoreConfig::default()).is_err());
    assert!(score_dag(&Dag::empty(4), &[], &ScoreConfig::default()).is_err());
    let bad = ScoreConfig { eps1: 0.0, ..ScoreConfig::default() };
    assert!(score_dag(&Dag::empty(4), &data, &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_fits_descend_and_stay_feasible(seed in any::<u64>(), mode_idx in 0usize..3, extra in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = MODES[mode_idx];
        let p = rng.random_range(3..6);
        let params = common::random_params(&mut rng, p, 1, 3, mode);
        let data = sample_data(&params, 150, seed);
        let mut dag = params.dag().unwrap();
        if extra {
            let (a, c) = (rng.random_range(0..p), rng.random_range(0..p));
            if let Ok(d) = dag.with_edge(a, c) {
                dag = d;
            }
        }
        let cfg = ScoreConfig { mode, c_psi: 1.0, lambda: 0.01, ..ScoreConfig::default() };
        let fit = score_dag(&dag, &data, &cfg).unwrap();
        check_fit_invariants(&fit, &dag, &cfg);
    }
}
