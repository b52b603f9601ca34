//! On-disk cache of posterior-posterior baselines.
//!
//! Text format, one header line then comma-separated records:
//!
//! ```text
//! # lidl-pp-cache v1
//! problem_id,b_bar,seed,pair_index,value
//! mixture-k1,400,1,0,3.1415926535897931e-2
//! ```
//!
//! Values are written with 17 significant digits. Saving writes a temporary file in the
//! same directory and renames it over the target.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: &str = "# lidl-pp-cache v1";
const COLUMNS: &str = "problem_id,b_bar,seed,pair_index,value";

type Key = (String, usize, u64);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpCache {
    entries: BTreeMap<Key, BTreeMap<usize, f64>>,
}

impl PpCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a cache file; a missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(e) => return Err(e.into()),
        };
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(Error::CacheFormat(format!("missing `{HEADER}` header")));
        }
        if lines.next().map(str::trim) != Some(COLUMNS) {
            return Err(Error::CacheFormat("unexpected column line".into()));
        }
        let mut cache = Self::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::CacheFormat(format!("line {}: `{line}`", n + 3));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let b_bar = f[1].parse().map_err(|_| bad())?;
            let seed = f[2].parse().map_err(|_| bad())?;
            let pair = f[3].parse().map_err(|_| bad())?;
            let value: f64 = f[4].parse().map_err(|_| bad())?;
            cache.entries.entry((f[0].to_string(), b_bar, seed)).or_default().insert(pair, value);
        }
        Ok(cache)
    }

    /// The first `n_pairs` values, if all are cached.
    pub fn get(&self, problem_id: &str, b_bar: usize, seed: u64, n_pairs: usize) -> Option<Vec<f64>> {
        let m = self.entries.get(&(problem_id.to_string(), b_bar, seed))?;
        (0..n_pairs).map(|p| m.get(&p).copied()).collect()
    }

    pub fn insert(&mut self, problem_id: &str, b_bar: usize, seed: u64, values: &[f64]) {
        let m = self.entries.entry((problem_id.to_string(), b_bar, seed)).or_default();
        for (p, v) in values.iter().enumerate() {
            m.insert(p, *v);
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("{HEADER}\n{COLUMNS}\n");
        for ((id, b, seed), m) in &self.entries {
            for (p, v) in m {
                s.push_str(&format!("{id},{b},{seed},{p},{v:.16e}\n"));
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.render().as_bytes())?;
        tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pp.csv");
        assert_eq!(PpCache::load(&path).unwrap(), PpCache::new());
        let mut c = PpCache::new();
        let vals = [0.1, 1.0 / 3.0, 2e-7];
        c.insert("mixture-k1", 400, 7, &vals);
        c.save(&path).unwrap();
        let back = PpCache::load(&path).unwrap();
        assert_eq!(back.get("mixture-k1", 400, 7, 3).unwrap(), vals.to_vec());
        assert_eq!(back.get("mixture-k1", 400, 7, 4), None);
        assert_eq!(back.get("mixture-k1", 200, 7, 1), None);
    }

    #[test]
    fn rejects_unversioned_files() {
        assert!(PpCache::parse("problem_id,b_bar,seed,pair_index,value\n").is_err());
        assert!(PpCache::parse(&format!("{HEADER}\n{COLUMNS}\nx,1,2\n")).is_err());
    }
}
