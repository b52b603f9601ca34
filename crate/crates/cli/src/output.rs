//! Running an experiment and writing its CSV files and manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use lidl::runner::{run_ensemble_of_runs, AggregateRow, EnsembleReport, RunRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentFile;
use crate::UsageError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

pub const AGGREGATE_HEADER: [&str; 11] =
    ["t", "step", "fc", "free_fc", "batch_size", "s", "mean_ep", "std_ep", "pp_mean", "pp_std", "double_sinkhorn"];
pub const RUN_HEADER: [&str; 8] = ["step", "t", "fc", "free_fc", "batch_size", "s", "ep", "converged"];

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSummary {
    pub name: String,
    pub completed_runs: usize,
    pub failed_runs: Vec<u64>,
}

/// Everything needed to re-run an experiment, plus hashes of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    /// SHA-256 over the sorted `sha256  path` lines of all output files.
    pub content_hash: String,
    pub experiment: ExperimentFile,
    pub methods: Vec<MethodSummary>,
    pub files: Vec<FileHash>,
}

impl Manifest {
    pub fn load(dir: &Path) -> anyhow::Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Outcome {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn failed_runs(&self) -> usize {
        self.manifest.methods.iter().map(|m| m.failed_runs.len()).sum()
    }
}

/// Runs every method of `exp` and writes the results under `out_dir`.
pub fn run_experiment(exp: &ExperimentFile, out_dir: &Path) -> anyhow::Result<Outcome> {
    let configs = exp.build()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut files = Vec::new();
    let mut methods = Vec::new();
    for (name, cfg) in &configs {
        log::info!("{name}: {} runs of {} steps", cfg.n_runs, cfg.n_iter);
        let report = run_ensemble_of_runs(cfg).with_context(|| format!("method {name}"))?;
        if report.pp_from_cache {
            log::info!("{name}: posterior baseline read from the cache");
        }
        for (r, f) in &report.failures {
            log::warn!("{name}: run {r} failed: {}", f.error);
        }
        files.extend(write_method(out_dir, name, &report)?);
        let mut completed: Vec<u64> = report.records.iter().map(|r| r.run_index).collect();
        completed.sort_unstable();
        methods.push(MethodSummary {
            name: name.clone(),
            completed_runs: completed.len(),
            failed_runs: report.failures.iter().map(|(r, _)| *r).collect(),
        });
    }
    files.sort_by(|a: &FileHash, b| a.path.cmp(&b.path));
    let listing: String = files.iter().map(|f| format!("{}  {}\n", f.sha256, f.path)).collect();
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        content_hash: sha256_hex(listing.as_bytes()),
        experiment: exp.clone(),
        methods,
        files,
    };
    let text = toml::to_string(&manifest).context("serializing the manifest")?;
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(Outcome { manifest, out_dir: out_dir.to_path_buf() })
}

fn write_csv(root: &Path, rel: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> anyhow::Result<FileHash> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(FileHash { path: rel.to_string(), sha256: sha256_hex(&bytes) })
}

fn aggregate_row(r: &AggregateRow) -> Vec<String> {
    vec![
        fmt(r.t),
        r.step.to_string(),
        fmt(r.fc),
        fmt(r.free_fc),
        fmt(r.batch_size),
        fmt(r.s),
        fmt(r.mean_ep),
        fmt(r.std_ep),
        fmt(r.pp_mean),
        fmt(r.pp_std),
        fmt(r.double_sinkhorn),
    ]
}

fn run_rows(rec: &RunRecord) -> Vec<Vec<String>> {
    rec.snapshots
        .iter()
        .map(|s| {
            let ep = rec.ep_series.iter().find(|p| p.step == s.step);
            vec![
                s.step.to_string(),
                fmt(s.t),
                s.calls.forward.to_string(),
                s.calls.free.to_string(),
                s.batch_size.to_string(),
                fmt(s.s),
                fmt(ep.map_or(f64::NAN, |p| p.ep)),
                ep.map_or(String::new(), |p| p.converged.to_string()),
            ]
        })
        .collect()
}

fn write_method(root: &Path, name: &str, report: &EnsembleReport) -> anyhow::Result<Vec<FileHash>> {
    let mut files = vec![write_csv(root, &format!("{name}/aggregate.csv"), &AGGREGATE_HEADER, report.aggregate.iter().map(aggregate_row))?];
    let mut all: Vec<&RunRecord> = report.records.iter().chain(report.failures.iter().map(|(_, f)| &f.partial)).collect();
    all.sort_by_key(|r| r.run_index);
    for rec in &all {
        files.push(write_csv(root, &format!("{name}/runs/run_{:03}.csv", rec.run_index), &RUN_HEADER, run_rows(rec).into_iter())?);
    }
    let events = all.iter().flat_map(|rec| {
        rec.enrichment_events.iter().map(move |e| {
            vec![rec.run_index.to_string(), e.step.to_string(), fmt(e.t), e.added.to_string(), e.batch_after.to_string()]
        })
    });
    files.push(write_csv(root, &format!("{name}/events.csv"), &["run", "step", "t", "added", "batch_after"], events)?);
    files.push(write_csv(root, &format!("{name}/pp.csv"), &["pair", "pp"], report.pp.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt(*v)]))?);
    if !report.failures.is_empty() {
        let rows = report.failures.iter().map(|(r, f)| vec![r.to_string(), f.partial.diverged_at.map_or(String::new(), |s| s.to_string()), f.error.to_string()]);
        files.push(write_csv(root, &format!("{name}/failures.csv"), &["run", "diverged_at", "error"], rows)?);
    }
    Ok(files)
}
