//! Named simulation designs used by the benchmark harness and the CLI.
//!
//! Every preset is deterministic given `(t, seed)`; parameter draws use a
//! ChaCha stream that is disjoint from the per-environment sampling streams.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{EnvSpec, Noise, PerturbationMode, ScmParams};
use crate::error::{Error, Result};
use crate::graph::{self, Dag};

pub const PRESET_VERSION: &str = "v1";

const P: usize = 10;
const ER_PROB: f64 = 0.1;
const EDGE_WEIGHT: f64 = -0.7;
const EPS_VAR: f64 = 0.5;
const PARAM_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    SettingA,
    SettingB,
    SettingC,
    SettingD,
    Table2(u8),
    Table3,
    Laplace,
    CorrLatent,
    Nonlinear01,
    Nonlinear03,
}

impl Preset {
    pub const ALL: [Preset; 13] = [
        Preset::SettingA,
        Preset::SettingB,
        Preset::SettingC,
        Preset::SettingD,
        Preset::Table2(1),
        Preset::Table2(2),
        Preset::Table2(3),
        Preset::Table2(4),
        Preset::Table3,
        Preset::Laplace,
        Preset::CorrLatent,
        Preset::Nonlinear01,
        Preset::Nonlinear03,
    ];

    pub fn name(&self) -> String {
        match self {
            Preset::SettingA => "setting-a".into(),
            Preset::SettingB => "setting-b".into(),
            Preset::SettingC => "setting-c".into(),
            Preset::SettingD => "setting-d".into(),
            Preset::Table2(s) => format!("table2-setting-{s}"),
            Preset::Table3 => "table3".into(),
            Preset::Laplace => "appxG-laplace".into(),
            Preset::CorrLatent => "appxG-corr-latent".into(),
            Preset::Nonlinear01 => "appxG-nonlinear-0.1".into(),
            Preset::Nonlinear03 => "appxG-nonlinear-0.3".into(),
        }
    }

    /// Default `t` (interventional sample size is `5 t`).
    pub fn default_t(&self) -> usize {
        match self {
            Preset::Table2(_) | Preset::Table3 => 200,
            _ => 64,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "setting-a" => Preset::SettingA,
            "setting-b" => Preset::SettingB,
            "setting-c" => Preset::SettingC,
            "setting-d" => Preset::SettingD,
            "table2-setting-1" => Preset::Table2(1),
            "table2-setting-2" => Preset::Table2(2),
            "table2-setting-3" => Preset::Table2(3),
            "table2-setting-4" => Preset::Table2(4),
            "table3" => Preset::Table3,
            "appxG-laplace" => Preset::Laplace,
            "appxG-corr-latent" => Preset::CorrLatent,
            "appxG-nonlinear-0.1" => Preset::Nonlinear01,
            "appxG-nonlinear-0.3" => Preset::Nonlinear03,
            other => return Err(Error::InvalidArgument(format!("unknown preset '{other}'"))),
        })
    }
}

/// A fully specified simulation design plus the fitting defaults that go with it.
#[derive(Clone, Debug, Serialize)]
pub struct PresetInstance {
    pub name: String,
    pub version: &'static str,
    pub t: usize,
    pub seed: u64,
    pub params: ScmParams,
    pub n_per_env: Vec<usize>,
    pub noise: Noise,
    #[serde(with = "crate::linalg::serde_matrix")]
    pub latent_cov: DMatrix<f64>,
    pub xi: f64,
    pub h_bar: usize,
    pub c_psi: f64,
    /// Response variable for parent-recovery presets.
    pub response: Option<usize>,
    /// Hand-built candidate set, when the design prescribes one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Dag>>,
}

impl PresetInstance {
    pub fn truth(&self) -> Dag {
        self.params.dag().expect("preset parameters are acyclic")
    }
}

pub fn build(preset: Preset, t: usize, seed: u64) -> Result<PresetInstance> {
    if t == 0 {
        return Err(Error::InvalidArgument("t must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PARAM_STREAM);
    let n_int = 5 * t;
    let inst = match preset {
        Preset::SettingA | Preset::SettingB | Preset::SettingC | Preset::SettingD => {
            let (h, zeta) = match preset {
                Preset::SettingB => (1, 2.0),
                Preset::SettingC => (2, 5.0),
                _ => (1, 5.0),
            };
            let dag = ten_edge_dag(&mut rng)?;
            let b = weights(&dag);
            let gamma = thresholded_gamma(&mut rng, h);
            let w1 = DVector::from_element(P, EPS_VAR);
            let mut envs = vec![EnvSpec::observational(&w1)];
            for e in 1..7 {
                let psi = 0.5 * (1.0 + rng.random::<f64>());
                let mut env = shift_env(&mut rng, &w1, zeta, psi);
                env.label = format!("env{}", e + 1);
                if preset == Preset::SettingD && e >= 2 {
                    for k in sample_indices(&mut rng, P, 2) {
                        env.do_set.insert(k, 5.0);
                    }
                }
                envs.push(env);
            }
            instance(preset, t, seed, ScmParams { b, gamma, w1, envs }, 300, n_int, h + 1, 2.0)
        }
        Preset::Table2(setting) => {
            if !(1..=4).contains(&setting) {
                return Err(Error::InvalidArgument(format!("table2 setting {setting}")));
            }
            let response = P - 1;
            let dag = response_dag(&mut rng, response)?;
            let b = weights(&dag);
            let gamma = DMatrix::from_fn(P, 1, |_, _| rng.random::<f64>() * 0.3f64.sqrt());
            let w1 = DVector::from_element(P, EPS_VAR);
            let perturb_response = matches!(setting, 2 | 4);
            let perturb_latent = matches!(setting, 3 | 4);
            let mut envs = vec![EnvSpec::observational(&w1)];
            for e in 1..5 {
                let psi = if perturb_latent { 1.0 + rng.random::<f64>() } else { 0.0 };
                let mut env = shift_env(&mut rng, &w1, 5.0, psi);
                if !perturb_response {
                    env.w[response] = w1[response];
                }
                env.label = format!("env{}", e + 1);
                envs.push(env);
            }
            let mut inst =
                instance(preset, t, seed, ScmParams { b, gamma, w1, envs }, 1000, n_int, 2, 2.0);
            inst.response = Some(response);
            inst
        }
        Preset::Table3 => {
            let dag = ten_edge_dag(&mut rng)?;
            let b = weights(&dag);
            let mut gamma = DMatrix::zeros(P, 3);
            gamma[(5, 0)] = 1.0;
            gamma[(4, 1)] = 1.0;
            for k in 0..P {
                let u = rng.random::<f64>();
                gamma[(k, 2)] = if u < 0.5 { 0.0 } else { u };
            }
            let w1 = DVector::from_element(P, EPS_VAR);
            let mut envs = vec![EnvSpec::observational(&w1)];
            for e in 1..5 {
                let psi = 0.5 * rng.random::<f64>();
                let mut env = shift_env(&mut rng, &w1, 2.0, psi);
                env.label = format!("env{}", e + 1);
                envs.push(env);
            }
            let params = ScmParams { b, gamma, w1, envs };
            let cands = table3_candidates(&dag, &params.gamma, &mut rng)?;
            let mut inst = instance(preset, t, seed, params, 1000, n_int, 3, 2.0);
            inst.candidates = Some(cands);
            inst
        }
        Preset::Laplace => {
            let dag = ten_edge_dag(&mut rng)?;
            let b = weights(&dag);
            let gamma = thresholded_gamma(&mut rng, 1);
            // Laplace(0, s) has variance 2 s^2
            let w1 = DVector::from_element(P, 2.0 * 0.5 * 0.5);
            let mut envs = vec![EnvSpec::observational(&w1)];
            for e in 1..7 {
                let psi = 0.5 * rng.random::<f64>();
                let w = DVector::from_fn(P, |k, _| {
                    let s = 5.0 + (2.0 * rng.random::<f64>() - 1.0);
                    w1[k] + 2.0 * s * s
                });
                envs.push(EnvSpec {
                    label: format!("env{}", e + 1),
                    psi,
                    w,
                    ..EnvSpec::observational(&w1)
                });
            }
            let mut inst =
                instance(preset, t, seed, ScmParams { b, gamma, w1, envs }, 300, n_int, 2, 0.5);
            inst.noise = Noise::Laplace;
            inst
        }
        Preset::CorrLatent => {
            let dag = ten_edge_dag(&mut rng)?;
            let b = weights(&dag);
            let gamma = thresholded_gamma(&mut rng, 2);
            let w1 = DVector::from_element(P, EPS_VAR);
            let base = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
            let mut obs = EnvSpec::observational(&w1);
            obs.latent_cov = Some(base.clone());
            let mut envs = vec![obs];
            for e in 1..7 {
                let mut env = shift_env(&mut rng, &w1, 5.0, 0.0);
                let mut l = base.clone();
                l[(0, 0)] += 0.5 * rng.random::<f64>();
                l[(1, 1)] += 0.5 * rng.random::<f64>();
                env.latent_cov = Some(l);
                env.label = format!("env{}", e + 1);
                envs.push(env);
            }
            let mut inst =
                instance(preset, t, seed, ScmParams { b, gamma, w1, envs }, 300, n_int, 3, 0.5);
            inst.latent_cov = base;
            inst
        }
        Preset::Nonlinear01 | Preset::Nonlinear03 => {
            let dag = ten_edge_dag(&mut rng)?;
            let b = weights(&dag);
            let gamma = thresholded_gamma(&mut rng, 1);
            let w1 = DVector::from_element(P, EPS_VAR);
            let mut envs = vec![EnvSpec::observational(&w1)];
            for e in 1..7 {
                let psi = 0.5 * rng.random::<f64>();
                let mut env = shift_env(&mut rng, &w1, 5.0, psi);
                env.label = format!("env{}", e + 1);
                envs.push(env);
            }
            let mut inst =
                instance(preset, t, seed, ScmParams { b, gamma, w1, envs }, 300, n_int, 2, 0.5);
            inst.xi = if preset == Preset::Nonlinear01 { 0.1 } else { 0.3 };
            inst
        }
    };
    inst.params.validate()?;
    Ok(inst)
}

#[allow(clippy::too_many_arguments)]
fn instance(
    preset: Preset,
    t: usize,
    seed: u64,
    params: ScmParams,
    n_obs: usize,
    n_int: usize,
    h_bar: usize,
    c_psi: f64,
) -> PresetInstance {
    let m = params.envs.len();
    let h = params.h();
    let mut n_per_env = vec![n_int; m];
    n_per_env[0] = n_obs;
    PresetInstance {
        name: preset.name(),
        version: PRESET_VERSION,
        t,
        seed,
        params,
        n_per_env,
        noise: Noise::Gaussian,
        latent_cov: DMatrix::identity(h, h),
        xi: 0.0,
        h_bar,
        c_psi,
        response: None,
        candidates: None,
    }
}

/// Shift environment with `delta_k ~ N(0, zeta + Unif(0, 1))`.
fn shift_env(rng: &mut ChaCha8Rng, w1: &DVector<f64>, zeta: f64, psi: f64) -> EnvSpec {
    let w = DVector::from_fn(w1.len(), |k, _| w1[k] + zeta + rng.random::<f64>());
    EnvSpec {
        label: String::new(),
        psi,
        w,
        zeta: None,
        do_set: BTreeMap::new(),
        mode: PerturbationMode::IidLatent,
        weight: 1.0,
        latent_cov: None,
    }
}

/// Redraw Erdős–Rényi DAGs until one has exactly ten edges.
fn ten_edge_dag(rng: &mut ChaCha8Rng) -> Result<Dag> {
    for _ in 0..graph::ER_MAX_ATTEMPTS {
        let d = graph::sample_er_dag(P, ER_PROB, rng.random())?;
        if d.n_edges() == 10 {
            return Ok(d);
        }
    }
    Err(Error::ResamplingFailed(graph::ER_MAX_ATTEMPTS))
}

/// ER DAG rewired so that `response` has parents {2, 3} and children {6, 7, 8}.
fn response_dag(rng: &mut ChaCha8Rng, response: usize) -> Result<Dag> {
    for _ in 0..graph::ER_MAX_ATTEMPTS {
        let d = graph::sample_er_dag(P, ER_PROB, rng.random())?;
        let mut edges: BTreeSet<(usize, usize)> = d
            .edges()
            .filter(|&(j, i)| j != response && i != response)
            .collect();
        edges.extend([(2, response), (3, response)]);
        edges.extend([(response, 6), (response, 7), (response, 8)]);
        if let Ok(d) = Dag::new(P, edges) {
            return Ok(d);
        }
    }
    Err(Error::ResamplingFailed(graph::ER_MAX_ATTEMPTS))
}

fn weights(dag: &Dag) -> DMatrix<f64> {
    dag.support_matrix().map(|s| if s != 0.0 { EDGE_WEIGHT } else { 0.0 })
}

/// Entries `Unif[0, c]` with `c = sqrt(0.3 / sqrt(h))`, zeroed below `c / 2`.
fn thresholded_gamma(rng: &mut ChaCha8Rng, h: usize) -> DMatrix<f64> {
    let c = (0.3 / (h as f64).sqrt()).sqrt();
    DMatrix::from_fn(P, h, |_, _| {
        let g = c * rng.random::<f64>();
        if g < 0.5 * c {
            0.0
        } else {
            g
        }
    })
}

/// Eight Markov-equivalent variants of `truth` (cycling through the class when
/// it has fewer than eight members), each with five random extra edges, plus
/// `truth` with three edges added between the non-adjacent pairs that share the
/// most latent covariance `(Gamma Gamma^T)_kl`.
pub fn table3_candidates(
    truth: &Dag,
    gamma: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Dag>> {
    let p = truth.p();
    let mec = graph::markov_equivalence_class(truth, 8);
    let mut out = Vec::with_capacity(9);
    for c in 0..8 {
        let mut d = mec[c % mec.len()].clone();
        let mut added = 0;
        let mut attempts = 0;
        while added < 5 && attempts < 10_000 {
            attempts += 1;
            let j = rng.random_range(0..p);
            let i = rng.random_range(0..p);
            if i == j || d.adjacent(i, j) {
                continue;
            }
            if let Ok(next) = d.with_edge(j, i) {
                d = next;
                added += 1;
            }
        }
        out.push(d);
    }

    let ggt = gamma * gamma.transpose();
    let order = truth.topological_order();
    let rank: Vec<usize> = {
        let mut r = vec![0; p];
        for (pos, &v) in order.iter().enumerate() {
            r[v] = pos;
        }
        r
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..p {
        for b in (a + 1)..p {
            if !truth.adjacent(a, b) {
                pairs.push((ggt[(a, b)].abs(), a, b));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut spurious = truth.clone();
    for &(_, a, b) in pairs.iter().take(3) {
        // orient along the causal order so the result stays acyclic
        let (j, i) = if rank[a] < rank[b] { (a, b) } else { (b, a) };
        spurious = spurious.with_edge(j, i)?;
    }
    out.push(spurious);
    Ok(out)
}
