//! Joining the aggregate curves of several result directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::output::{fmt, Manifest, AGGREGATE_HEADER};
use crate::UsageError;

/// One method's aggregate curve.
pub struct Curve {
    pub label: String,
    pub rows: Vec<[f64; 11]>,
}

fn column(name: &str) -> usize {
    AGGREGATE_HEADER.iter().position(|h| *h == name).expect("known column")
}

pub fn read_aggregate(path: &Path) -> anyhow::Result<Vec<[f64; 11]>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    if r.headers()?.iter().ne(AGGREGATE_HEADER.iter().copied()) {
        return Err(UsageError(format!("{}: unexpected columns", path.display())).into());
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = [0.0; 11];
        for (i, field) in rec.iter().enumerate() {
            row[i] = field.parse().with_context(|| format!("{}: bad number {field:?}", path.display()))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Curves of every method in the given result directories; all must share a problem.
pub fn load(dirs: &[PathBuf]) -> anyhow::Result<(String, Vec<Curve>)> {
    if dirs.len() < 2 {
        return Err(UsageError("compare needs at least two result directories".into()).into());
    }
    let mut problem: Option<String> = None;
    let mut curves = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let m = Manifest::load(dir)?;
        match &problem {
            Some(p) if *p != m.experiment.problem => {
                return Err(UsageError(format!(
                    "{} holds results for {:?}, expected {p:?}",
                    dir.display(),
                    m.experiment.problem
                ))
                .into())
            }
            _ => problem = Some(m.experiment.problem.clone()),
        }
        let base = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("dir{i}"));
        for method in &m.experiment.methods {
            let mut label = format!("{base}/{}", method.name);
            if curves.iter().any(|c: &Curve| c.label == label) {
                label = format!("{i}:{label}");
            }
            let rows = read_aggregate(&dir.join(&method.name).join("aggregate.csv"))?;
            curves.push(Curve { label, rows });
        }
    }
    Ok((problem.unwrap_or_default(), curves))
}

/// Writes one CSV with `key` as the first column and `value` per curve, joined on
/// exact key values; missing entries stay empty.
fn joined(path: &Path, key: &str, value: &str, curves: &[Curve]) -> anyhow::Result<()> {
    let (k, v) = (column(key), column(value));
    let mut table: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    for (ci, c) in curves.iter().enumerate() {
        for row in &c.rows {
            // order-preserving key for nonnegative floats
            let cell = table.entry(row[k].to_bits()).or_insert_with(|| vec![None; curves.len()]);
            cell[ci] = Some(row[v]);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![key.to_string()];
    header.extend(curves.iter().map(|c| format!("{}:{value}", c.label)));
    w.write_record(&header)?;
    for (bits, cells) in table {
        let mut rec = vec![fmt(f64::from_bits(bits))];
        rec.extend(cells.iter().map(|c| c.map_or(String::new(), fmt)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn compare(dirs: &[PathBuf], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let (problem, curves) = load(dirs)?;
    if curves.iter().any(|c| c.rows.iter().any(|r| r[column("fc")] < 0.0 || r[column("t")] < 0.0)) {
        return Err(UsageError("negative time or forward-call values".into()).into());
    }
    fs::create_dir_all(out)?;
    log::info!("comparing {} curves on {problem}", curves.len());
    let files = [
        ("ep_by_fc.csv", "fc", "mean_ep"),
        ("ep_by_t.csv", "t", "mean_ep"),
        ("double_sinkhorn_by_t.csv", "t", "double_sinkhorn"),
        ("double_sinkhorn_by_fc.csv", "fc", "double_sinkhorn"),
    ];
    let mut written = Vec::new();
    for (name, key, value) in files {
        let path = out.join(name);
        joined(&path, key, value, &curves)?;
        written.push(path);
    }
    Ok(written)
}
