//! On-disk formats: per-environment CSVs, the dataset manifest and JSON helpers.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use directlik::model::Dataset;

/// One environment in a manifest. `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEnv {
    pub label: String,
    pub path: PathBuf,
    pub n: usize,
    #[serde(default)]
    pub do_set: BTreeSet<usize>,
}

/// Describes a dataset on disk. The first environment is observational.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub p: usize,
    pub environments: Vec<ManifestEnv>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Write samples with a `# label` comment line and an `x0,x1,...` header.
pub fn write_csv(path: &Path, label: &str, x: &DMatrix<f64>) -> Result<()> {
    let mut out = format!("# {label}\n");
    let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in 0..x.nrows() {
        w.write_record(x.row(r).iter().map(|v| format!("{v:e}")))?;
    }
    out.push_str(std::str::from_utf8(&w.into_inner()?)?);
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Read a sample CSV: optional `#` comment lines, one header row, numeric rows.
pub fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let p = rdr.headers()?.len();
    let mut vals = Vec::new();
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        if rec.len() != p {
            bail!("{}: row {} has {} fields, expected {p}", path.display(), i + 1, rec.len());
        }
        for f in rec.iter() {
            let v: f64 = f
                .parse()
                .with_context(|| format!("{}: row {}: bad number '{f}'", path.display(), i + 1))?;
            if !v.is_finite() {
                bail!("{}: row {}: non-finite value", path.display(), i + 1);
            }
            vals.push(v);
        }
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, p, &vals))
}

/// Load every environment of a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, Dataset)> {
    let m: Manifest = read_json(manifest_path)?;
    if m.environments.is_empty() {
        bail!("manifest lists no environments");
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut ds = Dataset {
        samples: Vec::new(),
        do_sets: Vec::new(),
        labels: Vec::new(),
    };
    for env in &m.environments {
        let x = read_csv(&dir.join(&env.path))?;
        if x.ncols() != m.p {
            bail!("{}: {} columns, manifest says p = {}", env.path.display(), x.ncols(), m.p);
        }
        if x.nrows() != env.n {
            bail!("{}: {} rows, manifest says n = {}", env.path.display(), x.nrows(), env.n);
        }
        if x.nrows() < 2 {
            bail!("{}: at least two rows needed", env.path.display());
        }
        if let Some(&k) = env.do_set.iter().find(|&&k| k >= m.p) {
            bail!("{}: do index {k} out of range", env.path.display());
        }
        ds.samples.push(x);
        ds.do_sets.push(env.do_set.clone());
        ds.labels.push(env.label.clone());
    }
    Ok((m, ds))
}

/// Write a dataset as `env{e}.csv` files plus `manifest.json` in `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset, seed: Option<u64>, preset: Option<String>) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut envs = Vec::new();
    for (e, x) in ds.samples.iter().enumerate() {
        let file = PathBuf::from(format!("env{}.csv", e + 1));
        write_csv(&dir.join(&file), &ds.labels[e], x)?;
        envs.push(ManifestEnv {
            label: ds.labels[e].clone(),
            path: file,
            n: x.nrows(),
            do_set: ds.do_sets[e].clone(),
        });
    }
    let m = Manifest {
        p: ds.p(),
        environments: envs,
        seed,
        preset,
    };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}
