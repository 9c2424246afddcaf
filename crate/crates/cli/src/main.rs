mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use directlik::bench;
use directlik::graph::{self, Dag};
use directlik::linalg::serde_matrix;
use directlik::model::presets::{self, Preset};
use directlik::model::{simulate, Dataset, Noise};
use directlik::search::{Searcher, SearchReport};
use directlik::theory::{self, Variant};
use directlik::validate::{holdout_validate, Split, DEFAULT_HOLDOUT};
use directlik::{score_dag, PerturbationMode, ScmParams, ScoreConfig};

const EXIT_INPUT: u8 = 1;
const EXIT_NONCONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "directlik", version, about = "Score and search causal DAGs from multi-environment data")]
struct Cli {
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a preset or explicit parameters.
    Simulate(SimulateArgs),
    /// Fit one DAG.
    Score(ScoreCmd),
    /// Score candidates, backward-delete and select.
    Search(SearchCmd),
    /// Choose lambda by holdout validation, then search on all data.
    Validate(ValidateCmd),
    /// Evaluate the identifiability conditions on ground-truth parameters.
    Check(CheckCmd),
    /// Worst-case KL of a model over sampled single-parameter perturbations.
    Kl(KlCmd),
}

#[derive(Args, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    h_bar: usize,
    #[arg(long, default_value_t = 2.0)]
    c_psi: f64,
    #[arg(long, default_value = "iid-latent")]
    mode: PerturbationMode,
    #[arg(long, default_value_t = 1e-6)]
    eps1: f64,
    #[arg(long, default_value_t = 1e-2)]
    eps2: f64,
    #[arg(long, default_value_t = 1e-3)]
    opt_tol: f64,
    /// Cap on alternating B / nuisance rounds.
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
}

impl FitArgs {
    fn config(&self) -> ScoreConfig {
        ScoreConfig {
            lambda: self.lambda,
            h_bar: self.h_bar,
            c_psi: self.c_psi,
            mode: self.mode,
            eps1: self.eps1,
            eps2: self.eps2,
            opt_tolerance: self.opt_tol,
            max_outer: self.max_outer,
            ..ScoreConfig::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config naming a preset or giving explicit parameters.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CandidateArgs {
    /// JSON array of DAGs.
    #[arg(long, conflicts_with = "auto_candidates", required_unless_present = "auto_candidates")]
    candidates: Option<PathBuf>,
    /// Generate candidates by a hill-climb on the pooled covariance.
    #[arg(long)]
    auto_candidates: bool,
    #[arg(long, default_value_t = graph::DEFAULT_MAX_PARENTS)]
    max_parents: usize,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dag: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct SearchCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    cands: CandidateArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ValidateCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    cands: CandidateArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Comma-separated penalties.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    holdout: f64,
    /// Hold out a seeded random subset instead of the trailing rows.
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CheckCmd {
    #[arg(long)]
    params: PathBuf,
    /// standard, relaxed, single-param, unperturbed or unperturbed:i,j,...
    #[arg(long, default_value = "standard")]
    variant: String,
    #[arg(long, default_value_t = 2.0)]
    c_psi: f64,
}

#[derive(Args)]
struct KlCmd {
    /// Ground-truth parameters defining the perturbation class.
    #[arg(long)]
    params: PathBuf,
    /// Fitted model to evaluate; the truth is used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    c_zeta: f64,
    #[arg(long)]
    c_psi: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Simulation config: either `preset` (with optional `t`) or `params` with
/// `n_per_env`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfig {
    preset: Option<String>,
    t: Option<usize>,
    seed: Option<u64>,
    params: Option<ScmParams>,
    n_per_env: Option<Vec<usize>>,
    #[serde(default)]
    noise: Noise,
    #[serde(default, with = "opt_rows")]
    latent_cov: Option<DMatrix<f64>>,
    #[serde(default)]
    xi: f64,
}

mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer};
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| directlik::linalg::serde_matrix::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Everything besides the samples that a simulation fixes.
#[derive(Serialize)]
struct SimulationInfo {
    preset: Option<String>,
    preset_version: Option<&'static str>,
    t: Option<usize>,
    seed: u64,
    n_per_env: Vec<usize>,
    noise: Noise,
    #[serde(with = "serde_matrix")]
    latent_cov: DMatrix<f64>,
    xi: f64,
    /// Suggested fit settings for presets.
    h_bar: Option<usize>,
    c_psi: Option<f64>,
    response: Option<usize>,
    truth: Dag,
}

/// Outcome of a command: JSON payload, human summary, convergence.
struct Report {
    json: String,
    summary: String,
    converged: bool,
}

impl Report {
    fn new<T: Serialize>(value: &T, summary: String) -> Result<Self> {
        Ok(Report {
            json: io::to_json(value)?,
            summary,
            converged: true,
        })
    }
}

fn cmd_simulate(a: &SimulateArgs, out: Option<&Path>) -> Result<Report> {
    let out = out.ok_or_else(|| anyhow!("simulate needs --out <dir>"))?;
    let cfg: SimConfig = io::read_json(&a.config)?;
    let seed = a
        .seed
        .or(cfg.seed)
        .ok_or_else(|| anyhow!("a seed is required (config 'seed' or --seed)"))?;
    let (params, n_per_env, noise, latent_cov, xi, info) = match (&cfg.preset, cfg.params) {
        (Some(name), None) => {
            if cfg.n_per_env.is_some() || cfg.latent_cov.is_some() {
                bail!("preset configs take only 'preset', 't' and 'seed'");
            }
            let preset: Preset = name.parse()?;
            let t = cfg.t.unwrap_or(preset.default_t());
            let inst = presets::build(preset, t, seed)?;
            if let Some(c) = &inst.candidates {
                std::fs::create_dir_all(out)?;
                io::write_json(&out.join("candidates.json"), c)?;
            }
            let info = SimulationInfo {
                preset: Some(inst.name.clone()),
                preset_version: Some(inst.version),
                t: Some(t),
                seed,
                n_per_env: inst.n_per_env.clone(),
                noise: inst.noise,
                latent_cov: inst.latent_cov.clone(),
                xi: inst.xi,
                h_bar: Some(inst.h_bar),
                c_psi: Some(inst.c_psi),
                response: inst.response,
                truth: inst.truth(),
            };
            (inst.params, inst.n_per_env, inst.noise, inst.latent_cov, inst.xi, info)
        }
        (None, Some(params)) => {
            let n = cfg
                .n_per_env
                .ok_or_else(|| anyhow!("explicit params need 'n_per_env'"))?;
            let h = params.h();
            let lcov = cfg.latent_cov.unwrap_or_else(|| DMatrix::identity(h, h));
            let info = SimulationInfo {
                preset: None,
                preset_version: None,
                t: None,
                seed,
                n_per_env: n.clone(),
                noise: cfg.noise,
                latent_cov: lcov.clone(),
                xi: cfg.xi,
                h_bar: None,
                c_psi: None,
                response: None,
                truth: params.dag()?,
            };
            (params, n, cfg.noise, lcov, cfg.xi, info)
        }
        _ => bail!("config must give exactly one of 'preset' or 'params'"),
    };
    let sim = simulate(&params, &n_per_env, noise, &latent_cov, xi, seed)?;
    let mut ds = Dataset::from_simulation(&sim);
    for (label, env) in ds.labels.iter_mut().zip(&params.envs) {
        if !env.label.is_empty() {
            *label = env.label.clone();
        }
    }
    let manifest = io::save_dataset(out, &ds, Some(seed), info.preset.clone())?;
    io::write_json(&out.join("params.json"), &params)?;
    io::write_json(&out.join("simulation.json"), &info)?;
    let mut summary = format!("wrote {} environments to {}\n", manifest.environments.len(), out.display());
    for e in &manifest.environments {
        summary.push_str(&format!("  {:<16} n = {:<6} do = {:?}\n", e.label, e.n, e.do_set));
    }
    Report::new(&manifest, summary)
}

fn load_candidates(a: &CandidateArgs, ds: &Dataset) -> Result<Vec<Dag>> {
    let cands: Vec<Dag> = match &a.candidates {
        Some(path) => io::read_json(path)?,
        None => {
            let n: usize = ds.samples.iter().map(|x| x.nrows()).sum();
            graph::generate_candidates(&bench::pooled_covariance(ds), n, a.max_parents)?
        }
    };
    if cands.is_empty() {
        bail!("candidate list is empty");
    }
    if let Some(d) = cands.iter().find(|d| d.p() != ds.p()) {
        bail!("candidate has p = {}, data has p = {}", d.p(), ds.p());
    }
    Ok(cands)
}

fn cmd_score(a: &ScoreCmd) -> Result<Report> {
    let (_, ds) = io::load_dataset(&a.manifest)?;
    let dag: Dag = io::read_json(&a.dag)?;
    if dag.p() != ds.p() {
        bail!("DAG has p = {}, data has p = {}", dag.p(), ds.p());
    }
    let fit = score_dag(&dag, &ds.env_data(), &a.fit.config())?;
    let summary = format!(
        "{}\n  score {:.6}  nll {:.6}  moral edges {}  iterations {}  converged {}\n",
        fit.dag, fit.score, fit.nll, fit.moral_edges, fit.iterations, fit.converged
    );
    let mut r = Report::new(&fit, summary)?;
    r.converged = fit.converged;
    Ok(r)
}

fn search_table(r: &SearchReport) -> String {
    let mut s = format!(
        "lambda {}  candidates {}  optimum {}  final {}\n",
        r.lambda,
        r.candidates.len(),
        r.optimum.len(),
        r.final_set.len()
    );
    s.push_str(&format!("{:>14}  {:>6}  dag\n", "score", "moral"));
    for x in r.final_set.iter().take(10) {
        let moral = x.fit.as_ref().map_or(0, |f| f.moral_edges);
        s.push_str(&format!("{:>14.6}  {:>6}  {}\n", x.score(), moral, x.dag));
    }
    s.push_str(&format!("selected: {}\n", r.selected.dag));
    s
}

fn cmd_search(a: &SearchCmd) -> Result<Report> {
    let (_, ds) = io::load_dataset(&a.manifest)?;
    let cands = load_candidates(&a.cands, &ds)?;
    let data = ds.env_data();
    let cfg = a.fit.config();
    let report = Searcher::new(&data, &cfg, a.jobs)?.run(&cands, cfg.lambda)?;
    let mut r = Report::new(&report, search_table(&report))?;
    r.converged = report.selected_fit().converged;
    Ok(r)
}

fn cmd_validate(a: &ValidateCmd) -> Result<Report> {
    let (_, ds) = io::load_dataset(&a.manifest)?;
    let cands = load_candidates(&a.cands, &ds)?;
    let grid = a.grid.clone().unwrap_or_else(|| bench::DEFAULT_LAMBDA_GRID.to_vec());
    let split = if a.shuffle { Split::Shuffled(a.seed) } else { Split::Trailing };
    let report = holdout_validate(&ds, &cands, &grid, a.holdout, split, &a.fit.config(), a.jobs)?;
    let mut s = format!(
        "holdout {} ({} train / {} validation rows)\n{:>10}  {:>14}  selected\n",
        a.holdout, report.n_train, report.n_valid, "lambda", "valid nll"
    );
    for pt in &report.path {
        s.push_str(&format!("{:>10}  {:>14.6}  {}\n", pt.lambda, pt.validation_nll, pt.selected));
    }
    s.push_str(&format!("selected lambda {}\n", report.selected_lambda));
    s.push_str(&search_table(&report.full));
    let mut r = Report::new(&report, s)?;
    r.converged = report.full.selected_fit().converged;
    Ok(r)
}

fn cmd_check(a: &CheckCmd) -> Result<Report> {
    let params: ScmParams = io::read_json(&a.params)?;
    let variant: Variant = a.variant.parse::<Variant>()?.resolve(params.p());
    let rep = theory::check_assumptions(&params, &variant, a.c_psi)?;
    let line = |name: &str, c: &theory::Check| {
        format!(
            "  {name:<16} {:<5} margin {:>12.4e}{}\n",
            c.holds,
            c.margin,
            if c.required { "" } else { "  (not required)" }
        )
    };
    let mut s = format!("variant {}  kappa* {:.4}\n", rep.variant, rep.kappa_star);
    s.push_str(&line("A1 weights", &rep.a1_weights));
    s.push_str(&line("A2 heterogeneity", &rep.a2_heterogeneity));
    s.push_str(&line("A3 materiality", &rep.a3_materiality));
    s.push_str(&line("A4 strength", &rep.a4_strength));
    if let Some((k, l)) = rep.witness_pair {
        s.push_str(&format!("  materiality witness ({k}, {l})\n"));
    }
    s.push_str(&format!("all required conditions hold: {}\n", rep.satisfied()));
    Report::new(&rep, s)
}

fn cmd_kl(a: &KlCmd) -> Result<Report> {
    let params: ScmParams = io::read_json(&a.params)?;
    let rep = match &a.model {
        None => theory::verify_robustness_zero_risk(&params, a.c_zeta, a.c_psi, a.samples, a.seed)?,
        Some(path) => {
            let fit: directlik::FitResult = io::read_json(path)?;
            let w1 = fit
                .w_hat
                .first()
                .ok_or_else(|| anyhow!("model has no environments"))?;
            if fit.b_hat.nrows() != params.p() {
                bail!("model has p = {}, params have p = {}", fit.b_hat.nrows(), params.p());
            }
            theory::max_risk(&params, &fit.b_hat, &fit.gamma_hat, w1, a.c_zeta, a.c_psi, a.samples, a.seed)?
        }
    };
    let s = format!(
        "{} perturbations in [0, {}] x [0, {}]: max KL {:.3e}\n",
        rep.samples.len(),
        a.c_zeta,
        a.c_psi,
        rep.max_kl
    );
    Report::new(&rep, s)
}

fn run(cli: &Cli) -> Result<Report> {
    let out = cli.out.as_deref();
    match &cli.cmd {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Score(a) => cmd_score(a),
        Command::Search(a) => cmd_search(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Check(a) => cmd_check(a),
        Command::Kl(a) => cmd_kl(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors; help and version are not errors
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    // simulate writes its own files into --out
    let to_file = cli.out.as_deref().filter(|_| !matches!(cli.cmd, Command::Simulate(_)));
    match to_file {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &report.json).with_context(|| format!("writing {}", path.display())) {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_INPUT);
            }
            print!("{}", report.summary);
        }
        None if matches!(cli.cmd, Command::Simulate(_)) => print!("{}", report.summary),
        None => {
            print!("{}", report.json);
            eprint!("{}", report.summary);
        }
    }
    if !report.converged {
        eprintln!("warning: fit did not converge within the iteration cap");
        return ExitCode::from(EXIT_NONCONVERGED);
    }
    ExitCode::SUCCESS
}
