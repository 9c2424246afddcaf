#![allow(dead_code)]

use directlik::{EnvSpec, PerturbationMode, ScmParams, ScoreConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const P: usize = 4;

/// 0 -> 1, 1 -> 2, 1 -> 3.
pub fn base_b() -> DMatrix<f64> {
    let mut b = DMatrix::zeros(P, P);
    b[(1, 0)] = 0.8;
    b[(2, 1)] = -0.7;
    b[(3, 1)] = 0.6;
    b
}

pub fn env(w: &[f64], psi: f64) -> EnvSpec {
    EnvSpec {
        label: String::new(),
        psi,
        w: DVector::from_row_slice(w),
        zeta: None,
        do_set: Default::default(),
        mode: PerturbationMode::IidLatent,
        weight: 1.0,
        latent_cov: None,
    }
}

fn latent_on_0_and_2() -> DMatrix<f64> {
    DMatrix::from_column_slice(P, 1, &[0.6, 0.0, 0.6, 0.0])
}

/// Three environments with large, heterogeneous shifts and perturbed latents.
pub fn standard_fixture() -> ScmParams {
    let w1 = DVector::from_element(P, 1.0);
    ScmParams {
        b: base_b(),
        gamma: latent_on_0_and_2(),
        w1: w1.clone(),
        envs: vec![
            EnvSpec::observational(&w1),
            env(&[400.0, 420.0, 440.0, 460.0], 0.3),
            env(&[460.0, 400.0, 430.0, 410.0], 0.45),
        ],
    }
}

/// Latents never perturbed; every variable shifted in both interventional environments.
pub fn unperturbed_fixture() -> ScmParams {
    let w1 = DVector::from_element(P, 1.0);
    ScmParams {
        b: base_b(),
        gamma: DMatrix::from_column_slice(P, 1, &[0.0, 0.9, 0.0, 0.7]),
        w1: w1.clone(),
        envs: vec![
            EnvSpec::observational(&w1),
            env(&[2.0, 3.0, 2.5, 4.2], 0.0),
            env(&[3.0, 2.0, 4.5, 2.5], 0.0),
        ],
    }
}

/// One equal-variance shift.
pub fn single_parameter_fixture() -> ScmParams {
    let w1 = DVector::from_element(P, 1.0);
    ScmParams {
        b: base_b(),
        gamma: latent_on_0_and_2(),
        w1: w1.clone(),
        envs: vec![EnvSpec::observational(&w1), EnvSpec::single_parameter(&w1, 1.5, 0.0)],
    }
}

/// One interventional environment only; fitted with as many latents as variables.
pub fn underdetermined_fixture() -> ScmParams {
    let w1 = DVector::from_element(P, 1.0);
    ScmParams {
        b: base_b(),
        gamma: latent_on_0_and_2(),
        w1: w1.clone(),
        envs: vec![EnvSpec::observational(&w1), env(&[400.0, 420.0, 440.0, 460.0], 0.3)],
    }
}

/// Population fits need far tighter tolerances than the sample defaults.
pub fn tight_config() -> ScoreConfig {
    ScoreConfig {
        h_bar: 1,
        c_psi: 0.5,
        eps1: 1e-12,
        eps2: 1e-7,
        opt_tolerance: 1e-6,
        max_inner: 20000,
        max_outer: 500,
        ..ScoreConfig::default()
    }
}

/// Random lower-triangular `B` under a random order, edges kept with probability `density`.
pub fn random_b(rng: &mut ChaCha8Rng, p: usize, density: f64) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut b = DMatrix::zeros(p, p);
    for a in 0..p {
        for c in a + 1..p {
            if rng.random::<f64>() < density {
                let mag = rng.random_range(0.3..0.9);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                b[(order[c], order[a])] = sign * mag;
            }
        }
    }
    b
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, p, p, 1.0);
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

/// Random ground truth with `m` environments, the first observational.
pub fn random_params(rng: &mut ChaCha8Rng, p: usize, h: usize, m: usize, mode: PerturbationMode) -> ScmParams {
    let b = random_b(rng, p, 0.5);
    let gamma = random_matrix(rng, p, h, 0.8);
    let w1 = DVector::from_fn(p, |_, _| rng.random_range(0.5..2.0));
    let mut envs = vec![EnvSpec::observational(&w1)];
    for _ in 1..m {
        let psi = match mode {
            PerturbationMode::UnperturbedLatent => 0.0,
            _ => rng.random_range(0.0..1.0),
        };
        envs.push(match mode {
            PerturbationMode::SingleParameter => EnvSpec::single_parameter(&w1, rng.random_range(0.2..3.0), psi),
            _ => {
                let w = DVector::from_fn(p, |k, _| w1[k] + rng.random_range(0.0..3.0));
                EnvSpec {
                    w,
                    psi,
                    ..EnvSpec::observational(&w1)
                }
            }
        });
    }
    ScmParams { b, gamma, w1, envs }
}
