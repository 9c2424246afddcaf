//! Numerical checks of the identifiability assumptions and population
//! harnesses for the recovery theorems.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{moralize, Dag};
use crate::likelihood::{fit_nuisance_kl, ScoreConfig};
use crate::linalg;
use crate::model::{env_covariance, population_env_data, sigma_model, ScmParams};
use crate::search::run_search;

/// Precision entries at or below this are treated as zero.
pub const PRECISION_ZERO: f64 = 1e-10;
/// Precision entries above this are treated as nonzero.
pub const PRECISION_NONZERO: f64 = 1e-8;
/// Two heterogeneity ratios closer than this count as equal.
pub const RATIO_TOLERANCE: f64 = 1e-9;
/// Entrywise tolerance on `B` for declaring recovery.
pub const RECOVERY_TOLERANCE: f64 = 1e-3;

/// Which set of sufficient conditions to check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    /// Two strongly perturbed interventional environments.
    Standard,
    /// One interventional environment much stronger than the other.
    Relaxed,
    /// Unperturbed latents with shift perturbations on `perturbed` only.
    Unperturbed { perturbed: BTreeSet<usize> },
    /// Shifts of equal size across coordinates, `w^e = w1 + zeta^e 1`.
    SingleParameter,
}

impl Variant {
    pub fn unperturbed_all(p: usize) -> Self {
        Variant::Unperturbed {
            perturbed: (0..p).collect(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Standard => write!(f, "standard"),
            Variant::Relaxed => write!(f, "relaxed"),
            Variant::Unperturbed { perturbed } => {
                let s: Vec<String> = perturbed.iter().map(|k| k.to_string()).collect();
                write!(f, "unperturbed[{}]", s.join(","))
            }
            Variant::SingleParameter => write!(f, "single-param"),
        }
    }
}

/// Parses `standard`, `relaxed`, `single-param`, `unperturbed` (every
/// variable perturbed) or `unperturbed:0,2,3`. A bare `unperturbed` is
/// returned with an empty set; see [`Variant::resolve`].
impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "relaxed" => Ok(Variant::Relaxed),
            "single-param" => Ok(Variant::SingleParameter),
            "unperturbed" => Ok(Variant::Unperturbed {
                perturbed: BTreeSet::new(),
            }),
            _ => {
                let list = s
                    .strip_prefix("unperturbed:")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))?;
                let perturbed = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::InvalidArgument(format!("bad index '{t}' in variant")))
                    })
                    .collect::<Result<_>>()?;
                Ok(Variant::Unperturbed { perturbed })
            }
        }
    }
}

impl Variant {
    /// Replace an empty perturbed set by all `p` variables.
    pub fn resolve(self, p: usize) -> Self {
        match self {
            Variant::Unperturbed { perturbed } if perturbed.is_empty() => Variant::unperturbed_all(p),
            v => v,
        }
    }
}

/// One checked condition. `margin > 0` means satisfied for inequality
/// conditions; `required` is false when the variant does not need it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub holds: bool,
    pub margin: f64,
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub variant: Variant,
    pub kappa_star: f64,
    pub a1_weights: Check,
    pub a2_heterogeneity: Check,
    pub a3_materiality: Check,
    pub a4_strength: Check,
    /// Pair `(k, l)` witnessing latent materiality in the first checked environment.
    pub witness_pair: Option<(usize, usize)>,
}

impl AssumptionReport {
    /// All required conditions hold.
    pub fn satisfied(&self) -> bool {
        [&self.a1_weights, &self.a2_heterogeneity, &self.a3_materiality, &self.a4_strength]
            .iter()
            .all(|c| c.holds || !c.required)
    }
}

/// `(1 + max_i |B_{:,i}|^2) / (1 + min_i |B_{:,i}|^2)` over columns of `b`.
pub fn kappa_star(b: &DMatrix<f64>) -> f64 {
    let norms: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    if norms.is_empty() {
        return 1.0;
    }
    (1.0 + max) / (1.0 + min)
}

/// Latent materiality in environment `env`: some pair is conditionally
/// independent given the rest and the latents, but dependent given the
/// observed rest alone. Returns the first such pair. Do-interventions of the
/// environment are ignored.
pub fn check_materiality(params: &ScmParams, env: usize) -> (bool, Option<(usize, usize)>) {
    let Some(spec) = params.envs.get(env) else {
        return (false, None);
    };
    let p = params.p();
    let m = DMatrix::<f64>::identity(p, p) - &params.b;
    let winv = DMatrix::from_diagonal(&spec.w.map(|x| 1.0 / x));
    let conditional = m.transpose() * winv * &m;
    let mut plain = spec.clone();
    plain.do_set.clear();
    let Some(marginal) = env_covariance(params, &plain).try_inverse() else {
        return (false, None);
    };
    for k in 0..p {
        for l in k + 1..p {
            if conditional[(k, l)].abs() <= PRECISION_ZERO && marginal[(k, l)].abs() > PRECISION_NONZERO {
                return (true, Some((k, l)));
            }
        }
    }
    (false, None)
}

/// `8 kappa (1 + 2 c_psi)^2 (1 + |w_ref|_inf) (1 + |Gamma|^2 + |Gamma|^4)`.
fn strength_bound(kappa: f64, c_psi: f64, w_ref: &DVector<f64>, gamma: &DMatrix<f64>) -> f64 {
    let g2 = linalg::spectral_norm(gamma).powi(2);
    let winf = w_ref.amax();
    8.0 * kappa * (1.0 + 2.0 * c_psi).powi(2) * (1.0 + winf) * (1.0 + g2 + g2 * g2)
}

fn strength_lhs(w: &DVector<f64>) -> f64 {
    w.min().powi(2) / w.max()
}

/// Smallest separation between the pairwise ratios `a_k / a_l` and
/// `c_k / c_l` over `k != l` in `idx`. Pairs with a zero denominator are
/// compared by cross products instead.
fn ratio_separation(a: &DVector<f64>, c: &DVector<f64>, idx: &[usize]) -> f64 {
    let mut sep = f64::INFINITY;
    for &k in idx {
        for &l in idx {
            if k == l {
                continue;
            }
            let d = if a[l].abs() > 1e-12 && c[l].abs() > 1e-12 {
                (a[k] / a[l] - c[k] / c[l]).abs()
            } else {
                (a[k] * c[l] - c[k] * a[l]).abs()
            };
            sep = sep.min(d);
        }
    }
    sep
}

fn check(margin: f64, required: bool) -> Check {
    Check {
        holds: margin > 0.0,
        margin,
        required,
    }
}

fn zeta_of(params: &ScmParams, e: usize) -> Result<f64> {
    let env = &params.envs[e];
    if let Some(z) = env.zeta {
        return Ok(z);
    }
    let d = &env.w - &params.w1;
    let z = d.mean();
    if d.iter().any(|x| (x - z).abs() > 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "environment {e} is not a single-parameter perturbation"
        )));
    }
    Ok(z)
}

/// Evaluate the sufficient conditions of `variant` on ground-truth `params`.
///
/// Environments 0, 1, 2 play the roles of the observational and the two
/// interventional environments. The single-parameter variant with exactly
/// two environments checks the unperturbed-latent version instead, which
/// needs only `zeta^2 > 0` and `psi = 0`. For the unperturbed variants a
/// nonzero `psi` is reported as a negative strength margin.
pub fn check_assumptions(params: &ScmParams, variant: &Variant, c_psi: f64) -> Result<AssumptionReport> {
    params.validate()?;
    let p = params.p();
    let m = params.envs.len();
    let needed = match variant {
        Variant::SingleParameter => 2,
        _ => 3,
    };
    if m < needed {
        return Err(Error::InvalidArgument(format!(
            "variant {variant} needs at least {needed} environments, got {m}"
        )));
    }
    let kappa = kappa_star(&params.b);
    let used = m.min(3);
    let total: f64 = params.envs.iter().map(|e| e.weight).sum();
    let a1 = check(
        params.envs[..used].iter().map(|e| e.weight / total).fold(f64::INFINITY, f64::min),
        true,
    );
    let w = |e: usize| &params.envs[e].w;
    let psi = |e: usize| params.envs[e].psi;
    let all: Vec<usize> = (0..p).collect();

    let materiality = |envs: &[usize], required: bool| {
        let mut witness = None;
        let mut ok = true;
        for &e in envs {
            let (f, wt) = check_materiality(params, e);
            ok &= f;
            if witness.is_none() {
                witness = wt;
            }
        }
        (
            Check {
                holds: ok,
                margin: if ok { 1.0 } else { 0.0 },
                required,
            },
            witness,
        )
    };

    let (a2, (a3, witness), a4) = match variant {
        Variant::Standard => {
            let d2 = w(1) - w(0) * (1.0 + psi(1));
            let d3 = w(2) - w(0) * (1.0 + psi(2));
            let bound = strength_bound(kappa, c_psi, w(0), &params.gamma);
            let slack = [1, 2].iter().map(|&e| strength_lhs(w(e)) - bound).fold(f64::INFINITY, f64::min);
            (
                check(ratio_separation(&d2, &d3, &all) - RATIO_TOLERANCE, true),
                materiality(&[1, 2], true),
                check(slack, true),
            )
        }
        Variant::Relaxed => {
            let d31 = w(2) - w(0) * (1.0 + psi(2));
            let d32 = w(2) - w(1) * ((1.0 + psi(2)) / (1.0 + psi(1)));
            let bound = strength_bound(kappa, c_psi, w(1), &params.gamma);
            (
                check(ratio_separation(&d31, &d32, &all) - RATIO_TOLERANCE, true),
                materiality(&[2], true),
                check(strength_lhs(w(2)) - bound, true),
            )
        }
        Variant::Unperturbed { perturbed } => {
            if perturbed.iter().any(|&k| k >= p) {
                return Err(Error::Dimension("perturbed index out of range".into()));
            }
            let idx: Vec<usize> = perturbed.iter().copied().collect();
            let d2 = w(1) - w(0);
            let d3 = w(2) - w(0);
            let gap = idx
                .iter()
                .flat_map(|&k| [d2[k], d3[k]])
                .fold(f64::INFINITY, f64::min);
            let latent_free = -(0..used).map(psi).fold(0.0, f64::max);
            let strength = if latent_free < 0.0 { latent_free } else { gap };
            (
                check(ratio_separation(&d2, &d3, &idx) - RATIO_TOLERANCE, true),
                materiality(&[1, 2], false),
                check(strength, true),
            )
        }
        Variant::SingleParameter if m == 2 => {
            let z2 = zeta_of(params, 1)?;
            let latent_free = -(0..2).map(psi).fold(0.0, f64::max);
            (
                check(z2, true),
                materiality(&[1], false),
                check(if latent_free < 0.0 { latent_free } else { 1.0 }, true),
            )
        }
        Variant::SingleParameter => {
            let (z2, z3) = (zeta_of(params, 1)?, zeta_of(params, 2)?);
            let det = (psi(1) * z3 - psi(2) * z2).abs();
            let bound = strength_bound(kappa, c_psi, w(1), &params.gamma);
            (
                check(det - RATIO_TOLERANCE, true),
                materiality(&[1, 2], true),
                check(z3 - bound, true),
            )
        }
    };
    Ok(AssumptionReport {
        variant: variant.clone(),
        kappa_star: kappa,
        a1_weights: a1,
        a2_heterogeneity: a2,
        a3_materiality: a3,
        a4_strength: a4,
        witness_pair: witness,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentifiabilityReport {
    pub variant: Variant,
    pub n_candidates: usize,
    /// DAGs of the final optimum set at the configured penalty.
    pub optimum: Vec<Dag>,
    /// Every optimum's moral graph contains the true moral graph.
    pub moral_superset: bool,
    /// Final optima with the fewest moral edges.
    pub minimal_moral: Vec<Dag>,
    /// Number of pairwise distinct `B` among the minimal-moral optima.
    pub distinct_minimal_b: usize,
    pub selected: Dag,
    pub selected_is_truth: bool,
    /// `max |B_hat - B*|` for the selected DAG.
    pub b_error: f64,
    /// Per-row `max_j |B_hat[i, j] - B*[i, j]|` for the selected DAG.
    pub row_errors: Vec<f64>,
    /// Whether the minimal-moral optima share a single `B` and it matches
    /// the truth within tolerance.
    pub recovered: bool,
}

impl IdentifiabilityReport {
    pub fn row_recovered(&self, i: usize) -> bool {
        self.row_errors.get(i).is_some_and(|&e| e <= RECOVERY_TOLERANCE)
    }
}

/// Run the search on exact population covariances and compare with the truth.
pub fn verify_identifiability(
    params: &ScmParams,
    variant: &Variant,
    candidates: &[Dag],
    cfg: &ScoreConfig,
) -> Result<IdentifiabilityReport> {
    let data = population_env_data(params)?;
    let truth = params.dag()?;
    let report = run_search(candidates, &data, cfg, 1)?;
    let mt = moralize(&truth);
    let moral_superset = report.final_set.iter().all(|s| moralize(&s.dag).is_superset_of(&mt));
    let mut distinct: Vec<&DMatrix<f64>> = Vec::new();
    for s in &report.minimal_moral {
        let b = &s.fit.as_ref().expect("fitted").b_hat;
        if distinct.iter().all(|d| linalg::max_abs_diff(d, b) > RECOVERY_TOLERANCE) {
            distinct.push(b);
        }
    }
    let fit = report.selected_fit();
    let p = params.p();
    let row_errors: Vec<f64> = (0..p)
        .map(|i| (0..p).map(|j| (fit.b_hat[(i, j)] - params.b[(i, j)]).abs()).fold(0.0, f64::max))
        .collect();
    let b_error = row_errors.iter().copied().fold(0.0, f64::max);
    let recovered = distinct.len() == 1 && b_error <= RECOVERY_TOLERANCE;
    Ok(IdentifiabilityReport {
        variant: variant.clone(),
        n_candidates: candidates.len(),
        optimum: report.final_set.iter().map(|s| s.dag.clone()).collect(),
        moral_superset,
        minimal_moral: report.minimal_moral.iter().map(|s| s.dag.clone()).collect(),
        distinct_minimal_b: distinct.len(),
        selected: fit.dag.clone(),
        selected_is_truth: fit.dag == truth,
        b_error,
        row_errors,
        recovered,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessReport {
    pub c_zeta: f64,
    pub c_psi: f64,
    /// Sampled `(zeta, psi)` of each perturbation distribution.
    pub samples: Vec<(f64, f64)>,
    /// Best-fit KL per sample.
    pub kls: Vec<f64>,
    pub max_kl: f64,
}

/// Worst best-fit KL of the model `(b, gamma, w1)` over `n` perturbation
/// distributions drawn uniformly from the single-parameter class around `params`.
pub fn max_risk(
    params: &ScmParams,
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    w1: &DVector<f64>,
    c_zeta: f64,
    c_psi: f64,
    n: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if !(c_zeta >= 0.0 && c_psi >= 0.0) {
        return Err(Error::InvalidArgument("perturbation bounds must be nonnegative".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut kls = Vec::with_capacity(n);
    for _ in 0..n {
        let zeta = c_zeta * rng.random::<f64>();
        let psi = c_psi * rng.random::<f64>();
        let sigma = sigma_model(&params.b, &params.gamma, psi, &params.w1.add_scalar(zeta));
        let (_, _, kl) = fit_nuisance_kl(&sigma, b, gamma, w1, c_zeta, c_psi)?;
        samples.push((zeta, psi));
        kls.push(kl);
    }
    let max_kl = kls.iter().copied().fold(0.0, f64::max);
    Ok(RobustnessReport {
        c_zeta,
        c_psi,
        samples,
        kls,
        max_kl,
    })
}

/// [`max_risk`] evaluated at the true `(B, Gamma, w1)`; should be zero.
pub fn verify_robustness_zero_risk(
    params: &ScmParams,
    c_zeta: f64,
    c_psi: f64,
    n: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    max_risk(params, &params.b, &params.gamma, &params.w1, c_zeta, c_psi, n, seed)
}
