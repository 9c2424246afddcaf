//! Linear SCM parameters, the implied per-environment covariance, and the
//! multi-environment simulator.

pub mod presets;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::linalg::{self, serde_matrix, serde_vector};

/// How the nuisance perturbation parameters are restricted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationMode {
    /// Latents i.i.d. across environments with covariance `(1 + psi) I`.
    #[default]
    #[serde(rename = "iid-latent")]
    IidLatent,
    /// Latent covariance fixed at the identity (`psi = 0` everywhere).
    #[serde(rename = "unperturbed")]
    UnperturbedLatent,
    /// Equal shift variance on every coordinate: `w^e = w^1 + zeta^e 1`.
    #[serde(rename = "single-param")]
    SingleParameter,
}

impl std::str::FromStr for PerturbationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid-latent" => Ok(Self::IidLatent),
            "unperturbed" | "unperturbed-latent" => Ok(Self::UnperturbedLatent),
            "single-param" | "single-parameter" => Ok(Self::SingleParameter),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::IidLatent => "iid-latent",
            Self::UnperturbedLatent => "unperturbed",
            Self::SingleParameter => "single-param",
        })
    }
}

/// One environment of the ground-truth model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(default)]
    pub label: String,
    /// Latent perturbation; latent covariance is `I + psi I` unless overridden.
    pub psi: f64,
    /// Total variance of `eps + delta` per coordinate.
    #[serde(with = "serde_vector")]
    pub w: DVector<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    /// Variables clamped to a constant in this environment.
    #[serde(default)]
    pub do_set: BTreeMap<usize, f64>,
    #[serde(default)]
    pub mode: PerturbationMode,
    /// Population mixture weight, normalized across environments on use.
    #[serde(default = "one")]
    pub weight: f64,
    /// Explicit latent covariance for this environment (misspecification presets).
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_matrix"
    )]
    pub latent_cov: Option<DMatrix<f64>>,
}

fn one() -> f64 {
    1.0
}

mod opt_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => crate::linalg::serde_matrix::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| crate::linalg::serde_matrix::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl EnvSpec {
    pub fn observational(w1: &DVector<f64>) -> Self {
        EnvSpec {
            label: "observational".into(),
            psi: 0.0,
            w: w1.clone(),
            zeta: None,
            do_set: BTreeMap::new(),
            mode: PerturbationMode::IidLatent,
            weight: 1.0,
            latent_cov: None,
        }
    }

    /// Environment with `w = w1 + zeta 1`.
    pub fn single_parameter(w1: &DVector<f64>, zeta: f64, psi: f64) -> Self {
        EnvSpec {
            label: String::new(),
            psi,
            w: w1.add_scalar(zeta),
            zeta: Some(zeta),
            do_set: BTreeMap::new(),
            mode: PerturbationMode::SingleParameter,
            weight: 1.0,
            latent_cov: None,
        }
    }
}

/// Ground-truth (or estimated) SCM parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmParams {
    #[serde(with = "serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub gamma: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub w1: DVector<f64>,
    pub envs: Vec<EnvSpec>,
}

impl ScmParams {
    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn h(&self) -> usize {
        self.gamma.ncols()
    }

    /// DAG given by the support of `b`.
    pub fn dag(&self) -> Result<Dag> {
        Dag::from_support(&self.b, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.b.ncols() != p || self.gamma.nrows() != p || self.w1.len() != p {
            return Err(Error::Dimension("b, gamma and w1 must agree on p".into()));
        }
        if (0..p).any(|i| self.b[(i, i)] != 0.0) {
            return Err(Error::ConstraintViolation("b has a nonzero diagonal".into()));
        }
        self.dag()?;
        if self.w1.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::ConstraintViolation("w1 must be strictly positive".into()));
        }
        for (e, env) in self.envs.iter().enumerate() {
            if env.w.len() != p {
                return Err(Error::Dimension(format!("env {e}: w has wrong length")));
            }
            if env.psi < 0.0 {
                return Err(Error::ConstraintViolation(format!("env {e}: psi < 0")));
            }
            if env.w.iter().zip(self.w1.iter()).any(|(w, w1)| w < w1) {
                return Err(Error::ConstraintViolation(format!("env {e}: w must dominate w1")));
            }
            if env.do_set.keys().any(|&k| k >= p) {
                return Err(Error::Dimension(format!("env {e}: do index out of range")));
            }
            if e == 0 && env.psi != 0.0 {
                return Err(Error::ConstraintViolation(
                    "observational environment must have psi = 0".into(),
                ));
            }
            match env.mode {
                PerturbationMode::SingleParameter => {
                    let zeta = env.zeta.ok_or_else(|| {
                        Error::ConstraintViolation(format!("env {e}: single-parameter needs zeta"))
                    })?;
                    if env.w != self.w1.add_scalar(zeta) {
                        return Err(Error::ConstraintViolation(format!(
                            "env {e}: w must equal w1 + zeta 1"
                        )));
                    }
                }
                PerturbationMode::UnperturbedLatent if env.psi != 0.0 => {
                    return Err(Error::ConstraintViolation(format!(
                        "env {e}: unperturbed latents require psi = 0"
                    )));
                }
                _ => {}
            }
            if let Some(l) = &env.latent_cov {
                if l.nrows() != self.h() || l.ncols() != self.h() {
                    return Err(Error::Dimension(format!("env {e}: latent_cov must be h x h")));
                }
            }
        }
        Ok(())
    }

    /// Latent covariance of environment `e` given the baseline `latent_cov`.
    fn env_latent_cov(&self, env: &EnvSpec, latent_cov: &DMatrix<f64>) -> DMatrix<f64> {
        match &env.latent_cov {
            Some(l) => l.clone(),
            None => latent_cov + DMatrix::identity(self.h(), self.h()) * env.psi,
        }
    }
}

/// Per-environment sufficient statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvData {
    #[serde(with = "serde_matrix")]
    pub cov: DMatrix<f64>,
    /// Sample count; 0 marks population covariances.
    pub n: usize,
    pub weight: f64,
    #[serde(default)]
    pub do_set: BTreeSet<usize>,
}

impl EnvData {
    pub fn p(&self) -> usize {
        self.cov.nrows()
    }

    pub fn from_samples(x: &DMatrix<f64>, do_set: BTreeSet<usize>) -> Self {
        EnvData {
            cov: linalg::empirical_covariance(x),
            n: x.nrows(),
            weight: 1.0,
            do_set,
        }
    }

    /// Coordinates not clamped by a do-intervention, ascending.
    pub fn free_coords(&self) -> Vec<usize> {
        (0..self.p()).filter(|k| !self.do_set.contains(k)).collect()
    }
}

/// Set weights to `n^e / sum n` (or normalize existing weights for population data).
pub fn normalize_weights(data: &mut [EnvData]) {
    let total_n: usize = data.iter().map(|d| d.n).sum();
    if total_n > 0 && data.iter().all(|d| d.n > 0) {
        for d in data.iter_mut() {
            d.weight = d.n as f64 / total_n as f64;
        }
    } else {
        let total: f64 = data.iter().map(|d| d.weight).sum();
        for d in data.iter_mut() {
            d.weight /= total;
        }
    }
}

/// Validate a dataset: matching dimensions, symmetric covariances, weights summing to one.
pub fn validate_data(data: &[EnvData]) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(Error::InvalidArgument("at least one environment is required".into()));
    };
    let p = first.p();
    for (e, d) in data.iter().enumerate() {
        if d.cov.nrows() != p || d.cov.ncols() != p {
            return Err(Error::Dimension(format!("env {e}: covariance is not {p}x{p}")));
        }
        if linalg::asymmetry(&d.cov) > 1e-12 * linalg::max_abs(&d.cov).max(1.0) {
            return Err(Error::InvalidArgument(format!("env {e}: covariance not symmetric")));
        }
        if !(d.weight > 0.0 && d.weight <= 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("env {e}: weight outside (0, 1]")));
        }
        if d.do_set.iter().any(|&k| k >= p) {
            return Err(Error::Dimension(format!("env {e}: do index out of range")));
        }
    }
    let total: f64 = data.iter().map(|d| d.weight).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// `(I - B)^{-1} (diag(w) + (1 + psi) Gamma Gamma^T) (I - B)^{-T}`.
pub fn sigma_model(
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    psi: f64,
    w: &DVector<f64>,
) -> DMatrix<f64> {
    let inv = linalg::inv_i_minus(b);
    let inner = DMatrix::from_diagonal(w) + gamma * gamma.transpose() * (1.0 + psi);
    linalg::symmetrize(&(&inv * inner * inv.transpose()))
}

/// Exact covariance of one environment, honouring do-sets and latent overrides.
/// Do-clamped coordinates have zero variance.
pub fn env_covariance(params: &ScmParams, env: &EnvSpec) -> DMatrix<f64> {
    let p = params.p();
    let h = params.h();
    let latent = params.env_latent_cov(env, &DMatrix::identity(h, h));
    let mut noise = DMatrix::from_diagonal(&env.w) + &params.gamma * latent * params.gamma.transpose();
    let mut m = DMatrix::<f64>::identity(p, p) - &params.b;
    for &k in env.do_set.keys() {
        for j in 0..p {
            m[(k, j)] = if j == k { 1.0 } else { 0.0 };
            noise[(k, j)] = 0.0;
            noise[(j, k)] = 0.0;
        }
    }
    let inv = m.try_inverse().expect("acyclic connectivity");
    linalg::symmetrize(&(&inv * noise * inv.transpose()))
}

/// Exact per-environment covariances with user weights (`n = 0` sentinel).
pub fn population_env_data(params: &ScmParams) -> Result<Vec<EnvData>> {
    params.validate()?;
    let mut out: Vec<EnvData> = params
        .envs
        .iter()
        .map(|env| EnvData {
            cov: env_covariance(params, env),
            n: 0,
            weight: env.weight,
            do_set: env.do_set.keys().copied().collect(),
        })
        .collect();
    normalize_weights(&mut out);
    Ok(out)
}

/// Raw samples per environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DMatrix<f64>>,
    pub do_sets: Vec<BTreeSet<usize>>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn from_simulation(out: &[(DMatrix<f64>, EnvData)]) -> Self {
        Dataset {
            samples: out.iter().map(|(x, _)| x.clone()).collect(),
            do_sets: out.iter().map(|(_, d)| d.do_set.clone()).collect(),
            labels: (0..out.len()).map(|e| format!("env{}", e + 1)).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.samples.first().map_or(0, |x| x.ncols())
    }

    /// Sufficient statistics with weights `n^e / sum n`.
    pub fn env_data(&self) -> Vec<EnvData> {
        let mut out: Vec<EnvData> = self
            .samples
            .iter()
            .zip(&self.do_sets)
            .map(|(x, d)| EnvData::from_samples(x, d.clone()))
            .collect();
        normalize_weights(&mut out);
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    #[default]
    Gaussian,
    /// Laplace draws scaled to the same variance as the Gaussian case.
    Laplace,
}

fn laplace_unit_variance<R: Rng>(rng: &mut R) -> f64 {
    // scale 1/sqrt(2) has unit variance
    let u: f64 = rng.random::<f64>() - 0.5;
    let b = std::f64::consts::FRAC_1_SQRT_2;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

fn draw<R: Rng>(rng: &mut R, noise: Noise) -> f64 {
    match noise {
        Noise::Gaussian => rng.sample(StandardNormal),
        Noise::Laplace => laplace_unit_variance(rng),
    }
}

/// Simulate every environment of `params`.
///
/// Structural equations are evaluated in topological order:
/// `x_k = l_k + xi l_k^2 + eps_k + delta_k` with `l_k = B_k. x + gamma_k^T h`;
/// do-clamped coordinates are set to their constant. `eps` has variance `w1`,
/// `delta` has variance `w^e - w1`. Latents are Gaussian with covariance
/// `latent_cov + psi^e I` (or the environment's override). Each environment
/// draws from its own ChaCha stream derived from `seed`.
pub fn simulate(
    params: &ScmParams,
    n_per_env: &[usize],
    noise: Noise,
    latent_cov: &DMatrix<f64>,
    xi: f64,
    seed: u64,
) -> Result<Vec<(DMatrix<f64>, EnvData)>> {
    params.validate()?;
    let p = params.p();
    let h = params.h();
    if n_per_env.len() != params.envs.len() {
        return Err(Error::Dimension("one sample count per environment required".into()));
    }
    if n_per_env.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument("sample counts must be positive".into()));
    }
    if latent_cov.nrows() != h || latent_cov.ncols() != h {
        return Err(Error::Dimension("latent_cov must be h x h".into()));
    }
    if !(xi >= 0.0) {
        return Err(Error::InvalidArgument("xi must be nonnegative".into()));
    }
    let order = params.dag()?.topological_order();

    let mut out = Vec::with_capacity(params.envs.len());
    for (e, (env, &n)) in params.envs.iter().zip(n_per_env).enumerate() {
        let lcov = params.env_latent_cov(env, latent_cov);
        let lchol = if h > 0 {
            lcov.clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite(format!("latent covariance of env {e}")))?
                .l()
        } else {
            DMatrix::zeros(0, 0)
        };
        let eps_sd: Vec<f64> = params.w1.iter().map(|v| v.sqrt()).collect();
        let delta_sd: Vec<f64> = env
            .w
            .iter()
            .zip(params.w1.iter())
            .map(|(w, w1)| (w - w1).max(0.0).sqrt())
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(e as u64);
        let mut x = DMatrix::zeros(n, p);
        let mut z = DVector::zeros(h);
        for r in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let hv = &lchol * &z;
            for &k in &order {
                // draw noise for every coordinate so streams stay aligned across do-sets
                let eps = eps_sd[k] * draw(&mut rng, noise);
                let delta = delta_sd[k] * draw(&mut rng, noise);
                if let Some(&val) = env.do_set.get(&k) {
                    x[(r, k)] = val;
                    continue;
                }
                let mut lin = 0.0;
                for j in 0..p {
                    let bkj = params.b[(k, j)];
                    if bkj != 0.0 {
                        lin += bkj * x[(r, j)];
                    }
                }
                for l in 0..h {
                    lin += params.gamma[(k, l)] * hv[l];
                }
                x[(r, k)] = lin + xi * lin * lin + eps + delta;
            }
        }
        let data = EnvData::from_samples(&x, env.do_set.keys().copied().collect());
        out.push((x, data));
    }
    let mut data: Vec<EnvData> = out.iter().map(|(_, d)| d.clone()).collect();
    normalize_weights(&mut data);
    for ((_, d), nd) in out.iter_mut().zip(data) {
        d.weight = nd.weight;
    }
    Ok(out)
}
