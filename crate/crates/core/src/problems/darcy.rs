//! One-dimensional periodic Darcy flow: infer the log-permeability `u` from noisy
//! pressure observations.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::ensemble::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::{fill_normals, Lane, SeedSpec, StreamRng};

use super::mcmc::{StretchChain, StretchConfig, MIN_ACCEPTANCE};
use super::{Problem, ReferenceSample};

pub const DEFAULT_DATA_SEED: u64 = 20_230_601;
pub const NOISE_VARIANCE: f64 = 1e-4;
pub const PRIOR_MEAN_PENALTY: f64 = 100.0;

/// Discretized forward model and Bayesian potential. `u[j]` is the log-conductance of
/// the edge between nodes `j` and `j + 1` (periodic).
#[derive(Debug, Clone)]
pub struct DarcyModel {
    d: usize,
    h: f64,
    forcing: Vec<f64>,
    obs_idx: Vec<usize>,
    obs: Vec<f64>,
    sigma_r: f64,
    prior_prec: DMatrix<f64>,
}

/// Periodic second-difference operator scaled by `1/h^2`.
pub fn periodic_laplacian(d: usize, h: f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    let c = 1.0 / (h * h);
    for i in 0..d {
        l[(i, i)] -= 2.0 * c;
        l[(i, (i + 1) % d)] += c;
        l[(i, (i + d - 1) % d)] += c;
    }
    l
}

impl DarcyModel {
    /// Model with forcing and prior for a grid of `d` points and observations at
    /// indices `(d / k) j mod d`, `j = 1..k`. Observation values start at zero.
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if d < 3 || k == 0 || k > d || d % k != 0 {
            return Err(Error::InvalidConfig(format!("grid {d} must be a multiple of the observation count {k}")));
        }
        let h = 2.0 * PI / d as f64;
        let forcing = (0..d)
            .map(|i| {
                let x = i as f64 * h;
                (-(2.0 * x - 2.0 * PI).powi(2) / 40.0).exp() - 0.6
            })
            .collect();
        let obs_idx = (1..=k).map(|j| (d / k * j) % d).collect();
        let ones = DMatrix::from_element(d, d, PRIOR_MEAN_PENALTY / d as f64);
        let m = ones - periodic_laplacian(d, h);
        let prior_prec = (&m * &m) * (4.0 * h);
        Ok(DarcyModel { d, h, forcing, obs_idx, obs: vec![0.0; k], sigma_r: NOISE_VARIANCE, prior_prec })
    }

    pub fn grid_size(&self) -> usize {
        self.d
    }

    pub fn mesh_width(&self) -> f64 {
        self.h
    }

    pub fn forcing(&self) -> &[f64] {
        &self.forcing
    }

    pub fn observation_indices(&self) -> &[usize] {
        &self.obs_idx
    }

    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    pub fn set_observations(&mut self, obs: Vec<f64>) -> Result<()> {
        if obs.len() != self.obs_idx.len() {
            return Err(Error::DimensionMismatch { expected: self.obs_idx.len(), got: obs.len() });
        }
        self.obs = obs;
        Ok(())
    }

    pub fn set_forcing(&mut self, f: Vec<f64>) -> Result<()> {
        if f.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: f.len() });
        }
        self.forcing = f;
        Ok(())
    }

    pub fn prior_precision(&self) -> &DMatrix<f64> {
        &self.prior_prec
    }

    /// Finite-difference operator `M(u)`; `(M p)_i = -(a_{i+1/2}(p_{i+1}-p_i) - a_{i-1/2}(p_i-p_{i-1}))/h^2`.
    pub fn operator(&self, u: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let c = u[j].exp() / (self.h * self.h);
            let (a, b) = (j, (j + 1) % d);
            m[(a, a)] += c;
            m[(b, b)] += c;
            m[(a, b)] -= c;
            m[(b, a)] -= c;
        }
        m
    }

    /// `[M 1; 1^T 0]`: pins the mean of the solution to zero.
    fn bordered(&self, u: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut a = DMatrix::zeros(d + 1, d + 1);
        a.view_mut((0, 0), (d, d)).copy_from(&self.operator(u));
        for i in 0..d {
            a[(i, d)] = 1.0;
            a[(d, i)] = 1.0;
        }
        a
    }

    fn factor(&self, u: &[f64]) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        if u.len() != self.d || u.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolveFailed("non-finite or misshaped log-permeability".into()));
        }
        let lu = self.bordered(u).lu();
        if !lu.is_invertible() {
            return Err(Error::SolveFailed("singular Darcy system".into()));
        }
        Ok(lu)
    }

    fn solve_with(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: &[f64], d: usize) -> Result<Vec<f64>> {
        let mut b = DVector::zeros(d + 1);
        b.rows_mut(0, d).copy_from_slice(rhs);
        let z = lu.solve(&b).ok_or_else(|| Error::SolveFailed("singular Darcy system".into()))?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolveFailed("non-finite pressure".into()));
        }
        Ok(z.rows(0, d).iter().cloned().collect())
    }

    /// Mean-zero pressure solving `M(u) p = f - mean(f)`.
    pub fn pressure(&self, u: &[f64]) -> Result<Vec<f64>> {
        let lu = self.factor(u)?;
        Self::solve_with(&lu, &self.forcing, self.d)
    }

    /// Pressure at the observation indices.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        let p = self.pressure(u)?;
        Ok(self.obs_idx.iter().map(|&i| p[i]).collect())
    }

    /// Data misfit plus prior term, with the adjoint gradient when `grad` is given.
    pub fn evaluate(&self, u: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let d = self.d;
        let lu = self.factor(u)?;
        let p = Self::solve_with(&lu, &self.forcing, d)?;
        let resid: Vec<f64> = self.obs_idx.iter().zip(&self.obs).map(|(&i, o)| o - p[i]).collect();
        let misfit = 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / self.sigma_r;
        let uv = DVector::from_row_slice(u);
        let pu = &self.prior_prec * &uv;
        let value = misfit + 0.5 * uv.dot(&pu);
        if let Some(g) = grad {
            let mut rhs = vec![0.0; d];
            for (&i, r) in self.obs_idx.iter().zip(&resid) {
                rhs[i] -= r / self.sigma_r;
            }
            let w = Self::solve_with(&lu, &rhs, d)?;
            for j in 0..d {
                let (a, b) = (j, (j + 1) % d);
                let c = u[j].exp() / (self.h * self.h);
                g[j] = -c * (w[a] - w[b]) * (p[a] - p[b]) + pu[j];
            }
        }
        Ok(value)
    }

    /// Jacobian of the observation map, `K x D`.
    pub fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.d;
        let lu = self.factor(u)?;
        let p = Self::solve_with(&lu, &self.forcing, d)?;
        let mut jac = DMatrix::zeros(self.obs_idx.len(), d);
        let mut rhs = vec![0.0; d];
        for j in 0..d {
            let (a, b) = (j, (j + 1) % d);
            let c = u[j].exp() / (self.h * self.h) * (p[a] - p[b]);
            rhs.fill(0.0);
            rhs[a] = -c;
            rhs[b] = c;
            let dp = Self::solve_with(&lu, &rhs, d)?;
            for (r, &i) in self.obs_idx.iter().enumerate() {
                jac[(r, j)] = dp[i];
            }
        }
        Ok(jac)
    }

    /// Gauss-Newton precision `J^T J / sigma + P0^{-1}` at `u`.
    pub fn gauss_newton_precision(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let j = self.jacobian(u)?;
        Ok(j.transpose() * &j / self.sigma_r + &self.prior_prec)
    }

    /// Posterior mode by damped Gauss-Newton from `u = 0`.
    pub fn map_estimate(&self) -> Result<Vec<f64>> {
        let d = self.d;
        let mut u = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut val = self.evaluate(&u, Some(&mut g))?;
        for _ in 0..100 {
            let h = self.gauss_newton_precision(&u)?;
            let step = h
                .cholesky()
                .ok_or_else(|| Error::SolveFailed("Gauss-Newton matrix not positive definite".into()))?
                .solve(&DVector::from_row_slice(&g));
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, s)| x - alpha * s).collect();
                if let Ok(v) = self.evaluate(&trial, None) {
                    if v <= val {
                        u = trial;
                        val = self.evaluate(&u, Some(&mut g))?;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !improved || alpha * step.amax() < 1e-12 {
                break;
            }
        }
        Ok(u)
    }
}

impl Potential for DarcyModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, u: &[f64]) -> f64 {
        self.evaluate(u, None).unwrap_or(f64::INFINITY)
    }
    fn gradient(&self, u: &[f64], grad: &mut [f64]) {
        if self.evaluate(u, Some(grad)).is_err() {
            grad.fill(f64::NAN);
        }
    }
    fn value_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        match self.evaluate(u, Some(grad)) {
            Ok(v) => v,
            Err(_) => {
                grad.fill(f64::NAN);
                f64::INFINITY
            }
        }
    }
}

/// Thinned MCMC states shared by all reference requests under one master seed.
struct Pool {
    chain: StretchChain<Box<dyn Fn(&[f64]) -> f64 + Send>>,
    samples: Vec<f64>,
}

/// Darcy benchmark: model, synthetic data from the sinusoidal truth, a Gaussian
/// initial density linearized at the prior mean, and an MCMC reference.
pub struct DarcyProblem {
    model: Arc<DarcyModel>,
    k: usize,
    data_seed: u64,
    truth: Vec<f64>,
    init_chol: DMatrix<f64>,
    map: Vec<f64>,
    laplace_chol: DMatrix<f64>,
    mcmc: StretchConfig,
    pools: Mutex<HashMap<u64, Arc<Mutex<Pool>>>>,
}

impl DarcyProblem {
    pub fn new(d: usize, k: usize, data_seed: u64) -> Result<Self> {
        let mut model = DarcyModel::new(d, k)?;
        let h = model.h;
        let truth: Vec<f64> = (0..d).map(|j| 0.5 * ((j + 1) as f64 * h - h / 2.0).sin()).collect();
        let clean = model.forward(&truth)?;
        let seeds = SeedSpec::new(data_seed, 0);
        let obs = clean
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let mut xi = [0.0];
                fill_normals(&mut seeds.rng(Lane::Custom(0xDA7A), j as u64, 0), &mut xi);
                p + NOISE_VARIANCE.sqrt() * xi[0]
            })
            .collect();
        model.set_observations(obs)?;
        Self::from_model(model, k, data_seed, truth)
    }

    fn from_model(model: DarcyModel, k: usize, data_seed: u64, truth: Vec<f64>) -> Result<Self> {
        let d = model.d;
        let chol = |m: DMatrix<f64>| -> Result<DMatrix<f64>> {
            let inv = m
                .cholesky()
                .ok_or_else(|| Error::IllPosed("precision not positive definite".into()))?
                .inverse();
            Ok(inv
                .cholesky()
                .ok_or_else(|| Error::IllPosed("covariance not positive definite".into()))?
                .l())
        };
        let init_chol = chol(model.gauss_newton_precision(&vec![0.0; d])?)?;
        let map = model.map_estimate()?;
        let laplace_chol = chol(model.gauss_newton_precision(&map)?)?;
        Ok(DarcyProblem {
            model: Arc::new(model),
            k,
            data_seed,
            truth,
            init_chol,
            map,
            laplace_chol,
            mcmc: StretchConfig::for_dim(d),
            pools: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &DarcyModel {
        &self.model
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn map_point(&self) -> &[f64] {
        &self.map
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed
    }

    pub fn mcmc_config(&self) -> StretchConfig {
        self.mcmc
    }

    pub fn with_mcmc_config(mut self, cfg: StretchConfig) -> Self {
        self.mcmc = cfg;
        self.pools = Mutex::new(HashMap::new());
        self
    }

    /// Centered prior draw via the symmetric eigendecomposition of the prior precision.
    pub fn sample_prior(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let eig = self.model.prior_prec.clone().symmetric_eigen();
        let mut xi = vec![0.0; self.model.d];
        fill_normals(rng, &mut xi);
        let scaled = DVector::from_iterator(xi.len(), xi.iter().zip(eig.eigenvalues.iter()).map(|(x, l)| x / l.sqrt()));
        out.copy_from_slice((&eig.eigenvectors * scaled).as_slice());
    }

    fn new_chain(&self, seeds: SeedSpec) -> Result<StretchChain<Box<dyn Fn(&[f64]) -> f64 + Send>>> {
        let d = self.model.d;
        let mut init = vec![0.0; self.mcmc.walkers * d];
        let map = DVector::from_row_slice(&self.map);
        for (w, row) in init.chunks_mut(d).enumerate() {
            let mut xi = vec![0.0; d];
            fill_normals(&mut seeds.rng(Lane::Mcmc, 1 + w as u64, u64::MAX), &mut xi);
            let x = &map + &self.laplace_chol * DVector::from_vec(xi);
            row.copy_from_slice(x.as_slice());
        }
        let model = self.model.clone();
        let logp: Box<dyn Fn(&[f64]) -> f64 + Send> = Box::new(move |u| -model.value(u));
        let mut chain = StretchChain::new(self.mcmc, logp, d, init, seeds)?;
        chain.burn_in();
        Ok(chain)
    }

    /// A fresh chain: burn-in, then `n` thinned samples.
    pub fn mcmc_sample(&self, n: usize, seeds: SeedSpec) -> Result<ReferenceSample> {
        let mut chain = self.new_chain(seeds)?;
        let atoms = chain.collect(n);
        Ok(self.reference(atoms, chain.acceptance_rate()))
    }

    fn reference(&self, atoms: Vec<f64>, acc: f64) -> ReferenceSample {
        log::info!("stretch-move acceptance rate {acc:.3}");
        let quality_warning = acc < MIN_ACCEPTANCE;
        if quality_warning {
            log::warn!("stretch-move acceptance rate {acc:.3} below {MIN_ACCEPTANCE}");
        }
        ReferenceSample {
            measure: DiscreteMeasure::uniform(atoms, self.model.d).expect("finite MCMC states"),
            acceptance: Some(acc),
            quality_warning,
        }
    }

    /// Writes the data as `index,x,value` rows: observations first, then the truth.
    pub fn export_data<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# lidl-darcy-data v1 grid={} obs={} seed={}", self.model.d, self.k, self.data_seed)?;
        writeln!(w, "kind,index,x,value")?;
        let h = self.model.h;
        for (&i, v) in self.model.obs_idx.iter().zip(&self.model.obs) {
            writeln!(w, "obs,{i},{:.16e},{v:.16e}", i as f64 * h)?;
        }
        for (j, v) in self.truth.iter().enumerate() {
            writeln!(w, "truth,{j},{:.16e},{v:.16e}", (j as f64 + 0.5) * h)?;
        }
        Ok(())
    }

    /// Rebuilds a problem from [`DarcyProblem::export_data`] output.
    pub fn import_data<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let field = |key: &str| -> Result<u64> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(&format!("{key}=")))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::CacheFormat(format!("missing `{key}` in Darcy data header")))
        };
        if !header.starts_with("# lidl-darcy-data v1") {
            return Err(Error::CacheFormat("not a Darcy data file".into()));
        }
        let (d, k, seed) = (field("grid")? as usize, field("obs")? as usize, field("seed")?);
        let mut model = DarcyModel::new(d, k)?;
        lines.next();
        let mut obs = vec![f64::NAN; k];
        let mut truth = vec![f64::NAN; d];
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::CacheFormat(format!("bad Darcy data row `{line}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            let i: usize = f[1].parse().map_err(|_| bad())?;
            let v: f64 = f[3].parse().map_err(|_| bad())?;
            match f[0] {
                "obs" => {
                    let pos = model.obs_idx.iter().position(|&o| o == i).ok_or_else(bad)?;
                    obs[pos] = v;
                }
                "truth" if i < d => truth[i] = v,
                _ => return Err(bad()),
            }
        }
        if obs.iter().chain(&truth).any(|v| v.is_nan()) {
            return Err(Error::CacheFormat("incomplete Darcy data".into()));
        }
        model.set_observations(obs)?;
        Self::from_model(model, k, seed, truth)
    }
}

impl Problem for DarcyProblem {
    fn id(&self) -> String {
        format!("darcy-d{}", self.model.d)
    }
    fn dim(&self) -> usize {
        self.model.d
    }
    fn potential(&self) -> Arc<dyn Potential> {
        self.model.clone()
    }
    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let mut xi = vec![0.0; self.model.d];
        fill_normals(rng, &mut xi);
        out.copy_from_slice((&self.init_chol * DVector::from_vec(xi)).as_slice());
    }
    /// Disjoint blocks of one long chain per master seed: block `3 run + slot`.
    fn posterior_sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<ReferenceSample> {
        if slot > 2 {
            return Err(Error::InvalidConfig(format!("reference slot {slot} out of range")));
        }
        let pool = {
            let mut pools = self.pools.lock().expect("pool lock");
            match pools.get(&seeds.master_seed) {
                Some(p) => p.clone(),
                None => {
                    let chain = self.new_chain(SeedSpec::new(seeds.master_seed, u64::MAX))?;
                    let p = Arc::new(Mutex::new(Pool { chain, samples: Vec::new() }));
                    pools.insert(seeds.master_seed, p.clone());
                    p
                }
            }
        };
        let mut pool = pool.lock().expect("pool lock");
        let d = self.model.d;
        let block = 3 * seeds.run_index as usize + slot as usize;
        let need = (block + 1) * n * d;
        while pool.samples.len() < need {
            let w = pool.chain.next_save().to_vec();
            pool.samples.extend_from_slice(&w);
        }
        let atoms = pool.samples[block * n * d..need].to_vec();
        let acc = pool.chain.acceptance_rate();
        Ok(self.reference(atoms, acc))
    }
}
