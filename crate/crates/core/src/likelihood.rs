//! Gaussian negative log-likelihood of the environment model, the penalized
//! DAG score, and KL utilities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{moral_edge_count, Dag};
use crate::linalg;
use crate::model::{EnvData, PerturbationMode};

/// Tuning knobs for scoring a DAG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub lambda: f64,
    /// Number of latent columns in the fitted model; 0 disables latents.
    pub h_bar: usize,
    pub c_psi: f64,
    pub mode: PerturbationMode,
    /// Relative objective change that stops the nuisance descent.
    pub eps1: f64,
    /// Max-norm change in B that stops the outer alternation.
    pub eps2: f64,
    /// Relative tolerance defining the optimum set.
    pub opt_tolerance: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            lambda: 0.0,
            h_bar: 1,
            c_psi: 2.0,
            mode: PerturbationMode::IidLatent,
            eps1: 1e-6,
            eps2: 1e-2,
            opt_tolerance: 1e-3,
            max_outer: 200,
            max_inner: 2000,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
        }
        if !(self.c_psi >= 0.0) {
            return Err(Error::InvalidArgument("c_psi must be nonnegative".into()));
        }
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("opt_tolerance", self.opt_tolerance),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidArgument("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// `diag(w) + (1 + psi) Gamma Gamma^T`.
pub fn k_matrix(gamma: &DMatrix<f64>, psi: f64, w: &DVector<f64>) -> DMatrix<f64> {
    let mut k = gamma * gamma.transpose() * (1.0 + psi);
    for i in 0..w.len() {
        k[(i, i)] += w[i];
    }
    k
}

/// `(I - B) Sigma (I - B)^T`.
pub fn residual_cov(b: &DMatrix<f64>, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let p = b.nrows();
    let m = DMatrix::<f64>::identity(p, p) - b;
    linalg::symmetrize(&(&m * cov * m.transpose()))
}

/// Pieces of one environment's likelihood that the optimizer reuses.
#[derive(Clone, Debug)]
pub struct EnvEval {
    pub nll: f64,
    /// `K^{-1}` on the free coordinates, zero-padded to `p x p`.
    pub kinv: DMatrix<f64>,
}

impl EnvEval {
    /// `G = K^{-1} - K^{-1} S K^{-1}` (zero on do-clamped coordinates).
    pub fn g(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let ks = &self.kinv * s;
        &self.kinv - ks * &self.kinv
    }
}

/// Likelihood of one environment given the whitened covariance `s`.
///
/// `free` lists the non-clamped coordinates; when it covers everything the
/// full matrices are used without restriction.
pub fn eval_env(
    gamma: &DMatrix<f64>,
    psi: f64,
    w: &DVector<f64>,
    s: &DMatrix<f64>,
    free: &[usize],
) -> Result<EnvEval> {
    let p = w.len();
    let k = k_matrix(gamma, psi, w);
    if free.len() == p {
        let (logdet, kinv) = linalg::spd_logdet_inverse(&k)?;
        let tr = kinv.component_mul(s).sum();
        Ok(EnvEval {
            nll: logdet + tr,
            kinv,
        })
    } else {
        let kr = linalg::restrict(&k, free);
        let (logdet, kinv_r) = linalg::spd_logdet_inverse(&kr)?;
        let sr = linalg::restrict(s, free);
        let tr = kinv_r.component_mul(&sr).sum();
        Ok(EnvEval {
            nll: logdet + tr,
            kinv: linalg::pad(&kinv_r, free, p),
        })
    }
}

fn check_shapes(b: &DMatrix<f64>, gamma: &DMatrix<f64>, w: &DVector<f64>, env: &EnvData) -> Result<()> {
    let p = env.p();
    if b.nrows() != p || b.ncols() != p || gamma.nrows() != p || w.len() != p {
        return Err(Error::Dimension(format!("parameters do not match p = {p}")));
    }
    Ok(())
}

/// `log det K + tr(K^{-1} (I - B) Sigma (I - B)^T)` with
/// `K = diag(w) + (1 + psi) Gamma Gamma^T`. Environments with a do-set are
/// delegated to [`env_nll_do`].
pub fn env_nll(
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    psi: f64,
    w: &DVector<f64>,
    env: &EnvData,
) -> Result<f64> {
    if !env.do_set.is_empty() {
        return env_nll_do(b, gamma, psi, w, env);
    }
    check_shapes(b, gamma, w, env)?;
    let s = residual_cov(b, &env.cov);
    let all: Vec<usize> = (0..env.p()).collect();
    Ok(eval_env(gamma, psi, w, &s, &all)?.nll)
}

/// Likelihood restricted to the coordinates outside the do-set, with the rows
/// of `B` belonging to clamped variables masked out.
pub fn env_nll_do(
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    psi: f64,
    w: &DVector<f64>,
    env: &EnvData,
) -> Result<f64> {
    if env.do_set.is_empty() {
        return env_nll(b, gamma, psi, w, env);
    }
    check_shapes(b, gamma, w, env)?;
    let mut fb = b.clone();
    for &k in &env.do_set {
        fb.row_mut(k).fill(0.0);
    }
    let s = residual_cov(&fb, &env.cov);
    Ok(eval_env(gamma, psi, w, &s, &env.free_coords())?.nll)
}

/// Check that nuisance parameters are feasible for `cfg`.
pub fn check_feasible(
    psis: &[f64],
    ws: &[DVector<f64>],
    cfg: &ScoreConfig,
) -> Result<()> {
    if psis.len() != ws.len() || ws.is_empty() {
        return Err(Error::Dimension("one psi and one w per environment".into()));
    }
    let w1 = &ws[0];
    if w1.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::ConstraintViolation("w^1 must be strictly positive".into()));
    }
    if psis[0] != 0.0 {
        return Err(Error::ConstraintViolation("psi^1 must be 0".into()));
    }
    for (e, (&psi, w)) in psis.iter().zip(ws).enumerate() {
        if !(psi >= 0.0) || psi > cfg.c_psi + 1e-12 {
            return Err(Error::ConstraintViolation(format!(
                "psi^{} = {psi} outside [0, {}]",
                e + 1,
                cfg.c_psi
            )));
        }
        if w.len() != w1.len() {
            return Err(Error::Dimension(format!("w^{} has wrong length", e + 1)));
        }
        if w.iter().zip(w1.iter()).any(|(a, b)| *a < *b - 1e-12) {
            return Err(Error::ConstraintViolation(format!("w^{} must dominate w^1", e + 1)));
        }
        match cfg.mode {
            PerturbationMode::UnperturbedLatent if psi != 0.0 => {
                return Err(Error::ConstraintViolation(format!(
                    "psi^{} must be 0 for unperturbed latents",
                    e + 1
                )));
            }
            PerturbationMode::SingleParameter => {
                let d = w - w1;
                let (lo, hi) = (d.min(), d.max());
                if hi - lo > 1e-10 {
                    return Err(Error::ConstraintViolation(format!(
                        "w^{} - w^1 is not a constant vector",
                        e + 1
                    )));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Weighted negative log-likelihood without penalty.
pub fn weighted_nll(
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    psis: &[f64],
    ws: &[DVector<f64>],
    data: &[EnvData],
) -> Result<f64> {
    if psis.len() != data.len() || ws.len() != data.len() {
        return Err(Error::Dimension("one parameter set per environment".into()));
    }
    let mut total = 0.0;
    for ((env, &psi), w) in data.iter().zip(psis).zip(ws) {
        total += env.weight * env_nll(b, gamma, psi, w, env)?;
    }
    Ok(total)
}

/// Penalized score: weighted NLL plus `lambda` times the moral edge count.
#[allow(clippy::too_many_arguments)]
pub fn total_score(
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    psis: &[f64],
    ws: &[DVector<f64>],
    data: &[EnvData],
    cfg: &ScoreConfig,
    dag: &Dag,
) -> Result<f64> {
    check_feasible(psis, ws, cfg)?;
    if dag.p() != b.nrows() {
        return Err(Error::Dimension("dag and b disagree on p".into()));
    }
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if b[(i, j)] != 0.0 && !dag.has_edge(j, i) {
                return Err(Error::ConstraintViolation(format!(
                    "b[{i},{j}] is nonzero but {j} -> {i} is not in the DAG"
                )));
            }
        }
    }
    Ok(weighted_nll(b, gamma, psis, ws, data)? + cfg.lambda * moral_edge_count(dag) as f64)
}

/// `KL(N(0, sigma_true) || N(0, sigma_model))`.
pub fn gaussian_kl(sigma_true: &DMatrix<f64>, sigma_model: &DMatrix<f64>) -> Result<f64> {
    let p = sigma_true.nrows();
    if sigma_model.nrows() != p || sigma_true.ncols() != p || sigma_model.ncols() != p {
        return Err(Error::Dimension("KL arguments must have equal square shape".into()));
    }
    let (ld_m, inv_m) = linalg::spd_logdet_inverse(sigma_model)?;
    let ld_t = linalg::spd_logdet(sigma_true)?;
    let tr = inv_m.component_mul(sigma_true).sum();
    Ok(0.5 * (tr - p as f64 + ld_m - ld_t))
}

/// Best single-parameter nuisance `(zeta, psi)` in `[0, c_zeta] x [0, c_psi]`
/// for matching `sigma_true`, together with the attained KL.
///
/// A 25 x 25 grid seeds a projected Newton refinement on the box.
pub fn fit_nuisance_kl(
    sigma_true: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    w1: &DVector<f64>,
    c_zeta: f64,
    c_psi: f64,
) -> Result<(f64, f64, f64)> {
    if !(c_zeta >= 0.0 && c_psi >= 0.0) {
        return Err(Error::InvalidArgument("box bounds must be nonnegative".into()));
    }
    let p = w1.len();
    let s = residual_cov(b, sigma_true);
    let ld_t = linalg::spd_logdet(sigma_true)?;
    let m = gamma * gamma.transpose();
    let base = DMatrix::from_diagonal(w1) + &m;
    let kmat = |z: f64, ps: f64| {
        let mut k = &base + &m * ps;
        for i in 0..p {
            k[(i, i)] += z;
        }
        k
    };
    let kl_at = |z: f64, ps: f64| -> Result<f64> {
        let (ld, kinv) = linalg::spd_logdet_inverse(&kmat(z, ps))?;
        Ok(0.5 * (kinv.component_mul(&s).sum() - p as f64 + ld - ld_t))
    };

    const GRID: usize = 25;
    let mut best = (0.0, 0.0, kl_at(0.0, 0.0)?);
    for a in 0..GRID {
        for c in 0..GRID {
            let z = c_zeta * a as f64 / (GRID - 1) as f64;
            let ps = c_psi * c as f64 / (GRID - 1) as f64;
            let v = kl_at(z, ps)?;
            if v < best.2 {
                best = (z, ps, v);
            }
        }
    }
    if c_zeta == 0.0 && c_psi == 0.0 {
        return Ok(best);
    }

    let eye = DMatrix::<f64>::identity(p, p);
    let (mut z, mut ps, mut f) = best;
    for _ in 0..200 {
        let k = kmat(z, ps);
        let (_, kinv) = linalg::spd_logdet_inverse(&k)?;
        let ks = &kinv * &s * &kinv;
        let g = &kinv - &ks;
        let grad = [0.5 * g.trace(), 0.5 * g.component_mul(&m).sum()];
        let dirs = [&eye, &m];
        let mut hess = [[0.0; 2]; 2];
        for (a, da) in dirs.iter().enumerate() {
            for (c, dc) in dirs.iter().enumerate() {
                let kad = &kinv * *da;
                let kcd = &kinv * *dc;
                let t1 = (&kcd * &kad).trace();
                let t2 = (&kcd * &kad * &kinv * &s).trace() + (&kad * &kcd * &kinv * &s).trace();
                hess[a][c] = 0.5 * (t2 - t1);
            }
        }
        // active bound handling: drop coordinates pinned at a bound with outward gradient
        let ub = [c_zeta, c_psi];
        let x = [z, ps];
        let free: Vec<usize> = (0..2)
            .filter(|&i| {
                ub[i] > 0.0
                    && !((x[i] <= 0.0 && grad[i] > 0.0) || (x[i] >= ub[i] && grad[i] < 0.0))
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let mut step = [0.0; 2];
        let newton_ok = if free.len() == 2 {
            let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
            if hess[0][0] > 0.0 && det > 1e-300 {
                step[0] = -(hess[1][1] * grad[0] - hess[0][1] * grad[1]) / det;
                step[1] = -(-hess[1][0] * grad[0] + hess[0][0] * grad[1]) / det;
                true
            } else {
                false
            }
        } else {
            let i = free[0];
            if hess[i][i] > 0.0 {
                step[i] = -grad[i] / hess[i][i];
                true
            } else {
                false
            }
        };
        if !newton_ok {
            for &i in &free {
                step[i] = -grad[i];
            }
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let nz = (z + t * step[0]).clamp(0.0, c_zeta);
            let np = (ps + t * step[1]).clamp(0.0, c_psi);
            let nf = kl_at(nz, np)?;
            if nf <= f {
                let change = (nz - z).abs().max((np - ps).abs());
                z = nz;
                ps = np;
                let df = f - nf;
                f = nf;
                moved = change > 1e-14 && df > 0.0;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((z, ps, f.max(0.0)))
}
