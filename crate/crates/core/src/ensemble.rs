use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `B` particles of dimension `D` stored row-major, plus the process time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    data: Vec<f64>,
    batch: usize,
    dim: usize,
    pub t: f64,
}

impl Ensemble {
    /// Builds an ensemble from row-major data. Rejects empty shapes and non-finite entries.
    pub fn new(data: Vec<f64>, dim: usize, t: f64) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::InvalidEnsemble(format!(
                "{} entries do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidEnsemble(format!("time {t}")));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidEnsemble(format!(
                "non-finite entry in particle {}",
                i / dim
            )));
        }
        let batch = data.len() / dim;
        Ok(Ensemble { data, batch, dim, t })
    }

    pub fn from_rows(rows: &[Vec<f64>], t: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidEnsemble("ragged rows".into()));
        }
        Self::new(rows.concat(), dim, t)
    }

    pub(crate) fn from_raw(data: Vec<f64>, dim: usize, t: f64) -> Self {
        let batch = data.len() / dim;
        Ensemble { data, batch, dim, t }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Appends the rows of `extra` (same dimension) after the existing particles.
    pub fn append(&mut self, extra: &[f64]) {
        debug_assert_eq!(extra.len() % self.dim, 0);
        self.data.extend_from_slice(extra);
        self.batch = self.data.len() / self.dim;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Applies `y -> a y + v` to every particle.
    pub fn affine_map(&self, a: &DMatrix<f64>, v: &[f64]) -> Ensemble {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.data.len());
        for p in self.particles() {
            for r in 0..d {
                let mut s = v[r];
                for c in 0..d {
                    s += a[(r, c)] * p[c];
                }
                out.push(s);
            }
        }
        Ensemble::from_raw(out, d, self.t)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.batch, self.dim, &self.data)
    }
}

/// Mean, covariance (divisor `B`) and the non-symmetric `D x B` root.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sqrt_factor: DMatrix<f64>,
}

pub fn compute_stats(e: &Ensemble) -> Result<EnsembleStats> {
    if !e.is_finite() {
        return Err(Error::InvalidEnsemble("non-finite particle entries".into()));
    }
    let (b, d) = (e.batch, e.dim);
    let mut mean = DVector::zeros(d);
    for p in e.particles() {
        for k in 0..d {
            mean[k] += p[k];
        }
    }
    mean /= b as f64;
    let scale = 1.0 / (b as f64).sqrt();
    let mut root = DMatrix::zeros(d, b);
    for (i, p) in e.particles().enumerate() {
        for k in 0..d {
            root[(k, i)] = (p[k] - mean[k]) * scale;
        }
    }
    let mut covariance = &root * root.transpose();
    // exact symmetry
    for r in 0..d {
        for c in 0..r {
            let m = 0.5 * (covariance[(r, c)] + covariance[(c, r)]);
            covariance[(r, c)] = m;
            covariance[(c, r)] = m;
        }
    }
    Ok(EnsembleStats { mean, covariance, sqrt_factor: root })
}

/// Weighted point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || weights.is_empty() || atoms.len() != weights.len() * dim {
            return Err(Error::InvalidEnsemble("atoms and weights disagree".into()));
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidEnsemble("non-finite atom".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidEnsemble("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnsemble(format!("weights sum to {total}")));
        }
        Ok(DiscreteMeasure { atoms, weights, dim })
    }

    /// Equal weights `1/n` on the rows of `atoms`.
    pub fn uniform(atoms: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(Error::InvalidEnsemble("empty or ragged atoms".into()));
        }
        let n = atoms.len() / dim;
        Self::new(atoms, vec![1.0 / n as f64; n], dim)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same atoms, reordered by `perm` (new position i holds old atom `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> DiscreteMeasure {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        let mut weights = Vec::with_capacity(self.weights.len());
        for &j in perm {
            atoms.extend_from_slice(self.atom(j));
            weights.push(self.weights[j]);
        }
        DiscreteMeasure { atoms, weights, dim: self.dim }
    }
}

pub fn empirical_measure(e: &Ensemble) -> DiscreteMeasure {
    let n = e.batch;
    DiscreteMeasure { atoms: e.data.clone(), weights: vec![1.0 / n as f64; n], dim: e.dim }
}
