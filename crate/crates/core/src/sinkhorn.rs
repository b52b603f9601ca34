//! Debiased Sinkhorn divergence with quadratic cost `1/2 |x - y|^2`.
//!
//! Dual potentials live in the log domain. Between absorptions the iteration runs on
//! scaling vectors against a stabilized kernel `exp((f0 + g0 - C) / eps)`, and the
//! scalings are folded back into `f0`, `g0` whenever they leave a safe range.

use std::cmp::Ordering;
use std::sync::OnceLock;

use crate::ensemble::DiscreteMeasure;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop when the sup-norm change of the dual potentials falls below this.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { epsilon: 0.1, max_iters: 1000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtSolution {
    /// Entropic transport cost `W_eps`.
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    pub converged: bool,
}

const ABSORB: f64 = 40.0;

fn cost_matrix(x: &DiscreteMeasure, y: &DiscreteMeasure) -> Vec<f64> {
    let (n, m, d) = (x.len(), y.len(), x.dim());
    assert_eq!(d, y.dim(), "measures live in different dimensions");
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let xi = x.atom(i);
        let row = &mut c[i * m..(i + 1) * m];
        for (j, cij) in row.iter_mut().enumerate() {
            let yj = y.atom(j);
            let mut s = 0.0;
            for k in 0..d {
                let t = xi[k] - yj[k];
                s += t * t;
            }
            *cij = 0.5 * s;
        }
    }
    c
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&x| x.ln()).collect()
}

/// `f_i = -eps log sum_j exp(lb_j + (g_j - C_ij) / eps)`, rows of `c` indexed by `i`.
fn softmin_rows(c: &[f64], n: usize, m: usize, g: &[f64], lb: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut z = vec![0.0; m];
    for i in 0..n {
        let row = &c[i * m..(i + 1) * m];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..m {
            z[j] = lb[j] + (g[j] - row[j]) / eps;
            mx = mx.max(z[j]);
        }
        let s: f64 = z.iter().map(|&v| (v - mx).exp()).sum();
        out[i] = -eps * (mx + s.ln());
    }
    out
}

/// Column version of [`softmin_rows`].
fn softmin_cols(c: &[f64], n: usize, m: usize, f: &[f64], la: &[f64], eps: f64) -> Vec<f64> {
    let mut mx = vec![f64::NEG_INFINITY; m];
    for i in 0..n {
        let row = &c[i * m..(i + 1) * m];
        let base = la[i] + f[i] / eps;
        for j in 0..m {
            mx[j] = mx[j].max(base - row[j] / eps);
        }
    }
    let mut s = vec![0.0; m];
    for i in 0..n {
        let row = &c[i * m..(i + 1) * m];
        let base = la[i] + f[i] / eps;
        for j in 0..m {
            s[j] += (base - row[j] / eps - mx[j]).exp();
        }
    }
    (0..m).map(|j| -eps * (mx[j] + s[j].ln())).collect()
}

fn kernel(c: &[f64], n: usize, m: usize, f0: &[f64], g0: &[f64], eps: f64, out: &mut Vec<f64>) {
    out.resize(n * m, 0.0);
    for i in 0..n {
        let row = &c[i * m..(i + 1) * m];
        let k = &mut out[i * m..(i + 1) * m];
        for j in 0..m {
            k[j] = ((f0[i] + g0[j] - row[j]) / eps).exp();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn safe(x: f64) -> bool {
    x.is_finite() && x > 1e-290
}

/// Entropic optimal transport cost between two measures.
pub fn entropic_ot(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SinkhornConfig) -> OtSolution {
    let (n, m) = (mu.len(), nu.len());
    let eps = cfg.epsilon;
    let c = cost_matrix(mu, nu);
    let (a, b) = (mu.weights(), nu.weights());
    let (la, lb) = (log_weights(a), log_weights(b));

    // exact log-domain sweep gives well-scaled anchors
    let mut f0 = softmin_rows(&c, n, m, &vec![0.0; m], &lb, eps);
    let mut g0 = softmin_cols(&c, n, m, &f0, &la, eps);
    let mut e = Vec::new();
    kernel(&c, n, m, &f0, &g0, eps, &mut e);
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut au = vec![0.0; n];
    let mut bv = vec![0.0; m];
    let mut ku = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        for j in 0..m {
            bv[j] = b[j] * v[j];
        }
        let mut df: f64 = 0.0;
        let mut ok = true;
        for i in 0..n {
            let kv = dot(&e[i * m..(i + 1) * m], &bv);
            if !safe(kv) {
                ok = false;
                break;
            }
            let un = 1.0 / kv;
            df = df.max((un / u[i]).ln().abs());
            u[i] = un;
        }
        if ok {
            for i in 0..n {
                au[i] = a[i] * u[i];
            }
            ku.fill(0.0);
            for i in 0..n {
                let w = au[i];
                let row = &e[i * m..(i + 1) * m];
                for j in 0..m {
                    ku[j] += row[j] * w;
                }
            }
        }
        let mut dg: f64 = 0.0;
        if ok {
            for j in 0..m {
                if !safe(ku[j]) {
                    ok = false;
                    break;
                }
                let vn = 1.0 / ku[j];
                dg = dg.max((vn / v[j]).ln().abs());
                v[j] = vn;
            }
        }
        if !ok {
            // scalings degenerated: fall back to one exact log-domain sweep
            let f: Vec<f64> = (0..n).map(|i| f0[i] + eps * u[i].max(1e-300).ln()).collect();
            let g: Vec<f64> = (0..m).map(|j| g0[j] + eps * v[j].max(1e-300).ln()).collect();
            let fn_ = softmin_rows(&c, n, m, &g, &lb, eps);
            let gn = softmin_cols(&c, n, m, &fn_, &la, eps);
            let change = fn_
                .iter()
                .zip(&f)
                .chain(gn.iter().zip(&g))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            f0 = fn_;
            g0 = gn;
            u.fill(1.0);
            v.fill(1.0);
            kernel(&c, n, m, &f0, &g0, eps, &mut e);
            if change < cfg.tol {
                converged = true;
                break;
            }
            continue;
        }
        if eps * df.max(dg) < cfg.tol {
            converged = true;
            break;
        }
        let big = u.iter().chain(v.iter()).any(|x| x.ln().abs() > ABSORB);
        if big {
            for i in 0..n {
                f0[i] += eps * u[i].ln();
            }
            for j in 0..m {
                g0[j] += eps * v[j].ln();
            }
            u.fill(1.0);
            v.fill(1.0);
            kernel(&c, n, m, &f0, &g0, eps, &mut e);
        }
    }
    let fa: f64 = (0..n).map(|i| a[i] * (f0[i] + eps * u[i].ln())).sum();
    let gb: f64 = (0..m).map(|j| b[j] * (g0[j] + eps * v[j].ln())).sum();
    OtSolution { cost: fa + gb, converged, iterations }
}

/// `W_eps(mu, mu)` through the symmetric averaged fixed point `f <- (f + T f) / 2`.
pub fn entropic_ot_self(mu: &DiscreteMeasure, cfg: &SinkhornConfig) -> OtSolution {
    let n = mu.len();
    let eps = cfg.epsilon;
    let c = cost_matrix(mu, mu);
    let a = mu.weights();
    let la = log_weights(a);
    let mut f0 = softmin_rows(&c, n, n, &vec![0.0; n], &la, eps);
    let t = softmin_rows(&c, n, n, &f0, &la, eps);
    for i in 0..n {
        f0[i] = 0.5 * (f0[i] + t[i]);
    }
    let mut e = Vec::new();
    kernel(&c, n, n, &f0, &f0, eps, &mut e);
    let mut u = vec![1.0; n];
    let mut au = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            au[i] = a[i] * u[i];
        }
        let mut change: f64 = 0.0;
        let mut ok = true;
        let mut un = vec![0.0; n];
        for i in 0..n {
            let k = dot(&e[i * n..(i + 1) * n], &au);
            if !safe(k) {
                ok = false;
                break;
            }
            un[i] = (u[i] / k).sqrt();
            change = change.max((un[i] / u[i]).ln().abs());
        }
        if !ok {
            let f: Vec<f64> = (0..n).map(|i| f0[i] + eps * u[i].max(1e-300).ln()).collect();
            let t = softmin_rows(&c, n, n, &f, &la, eps);
            let mut diff: f64 = 0.0;
            for i in 0..n {
                let nf = 0.5 * (f[i] + t[i]);
                diff = diff.max((nf - f[i]).abs());
                f0[i] = nf;
            }
            u.fill(1.0);
            kernel(&c, n, n, &f0, &f0, eps, &mut e);
            if diff < cfg.tol {
                converged = true;
                break;
            }
            continue;
        }
        u = un;
        if eps * change < cfg.tol {
            converged = true;
            break;
        }
        if u.iter().any(|x| x.ln().abs() > ABSORB) {
            for i in 0..n {
                f0[i] += eps * u[i].ln();
            }
            u.fill(1.0);
            kernel(&c, n, n, &f0, &f0, eps, &mut e);
        }
    }
    // one exact half-step so the dual value is evaluated with matched marginals
    let f: Vec<f64> = (0..n).map(|i| f0[i] + eps * u[i].ln()).collect();
    let g = softmin_cols(&c, n, n, &f, &la, eps);
    let cost = dot(a, &f) + dot(a, &g);
    OtSolution { cost, converged, iterations }
}

fn canonical_order(x: &DiscreteMeasure, y: &DiscreteMeasure) -> Ordering {
    x.len()
        .cmp(&y.len())
        .then_with(|| {
            x.atoms()
                .iter()
                .zip(y.atoms())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            x.weights()
                .iter()
                .zip(y.weights())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Cross term computed in a canonical argument order, so the divergence is exactly symmetric.
fn cross(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SinkhornConfig) -> OtSolution {
    if canonical_order(mu, nu) == Ordering::Greater {
        entropic_ot(nu, mu, cfg)
    } else {
        entropic_ot(mu, nu, cfg)
    }
}

fn combine(xy: OtSolution, xx: OtSolution, yy: OtSolution) -> Divergence {
    let raw = xy.cost - 0.5 * (xx.cost + yy.cost);
    Divergence { value: raw.max(0.0), converged: xy.converged && xx.converged && yy.converged }
}

/// `S_eps(mu, nu) = W(mu, nu) - (W(mu, mu) + W(nu, nu)) / 2`, clamped at zero.
pub fn sinkhorn_divergence(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SinkhornConfig) -> Divergence {
    combine(cross(mu, nu, cfg), entropic_ot_self(mu, cfg), entropic_ot_self(nu, cfg))
}

/// A measure with a lazily cached self term, for repeated divergences against it.
#[derive(Debug)]
pub struct PreparedMeasure {
    measure: DiscreteMeasure,
    cfg: SinkhornConfig,
    self_cost: OnceLock<OtSolution>,
}

impl PreparedMeasure {
    pub fn new(measure: DiscreteMeasure, cfg: SinkhornConfig) -> Self {
        PreparedMeasure { measure, cfg, self_cost: OnceLock::new() }
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn self_cost(&self) -> OtSolution {
        *self.self_cost.get_or_init(|| entropic_ot_self(&self.measure, &self.cfg))
    }

    pub fn divergence(&self, other: &PreparedMeasure) -> Divergence {
        combine(cross(&self.measure, &other.measure, &self.cfg), self.self_cost(), other.self_cost())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, SeedSpec};

    fn cloud(n: usize, d: usize, seed: u64, scale: f64, shift: f64) -> DiscreteMeasure {
        let mut x = vec![0.0; n * d];
        SeedSpec::new(seed, 0).streams(Lane::Custom(1)).normals(0, 0, &mut x);
        DiscreteMeasure::uniform(x.iter().map(|v| scale * v + shift).collect(), d).unwrap()
    }

    #[test]
    fn dirac_pair_closed_form() {
        let x = DiscreteMeasure::uniform(vec![1.0, 2.0], 2).unwrap();
        let y = DiscreteMeasure::uniform(vec![-0.5, 4.0], 2).unwrap();
        let s = sinkhorn_divergence(&x, &y, &SinkhornConfig::default());
        assert!((s.value - 0.5 * (1.5f64.powi(2) + 4.0)).abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn identical_measures_vanish() {
        let cfg = SinkhornConfig::default();
        for seed in 0..5 {
            let m = cloud(60, 2, seed, 1.0, 0.0);
            assert!(sinkhorn_divergence(&m, &m, &cfg).value < 1e-8);
        }
    }

    #[test]
    fn symmetric_bitwise() {
        let cfg = SinkhornConfig::default();
        let x = cloud(30, 2, 1, 1.0, 0.0);
        let y = cloud(45, 2, 2, 1.5, 0.3);
        assert_eq!(sinkhorn_divergence(&x, &y, &cfg), sinkhorn_divergence(&y, &x, &cfg));
    }

    #[test]
    fn far_apart_clouds_stay_finite() {
        let cfg = SinkhornConfig::default();
        let x = cloud(50, 2, 1, 1.0, 0.0);
        let y = cloud(50, 2, 2, 1.0, 30.0);
        let s = sinkhorn_divergence(&x, &y, &cfg);
        assert!(s.value.is_finite() && s.converged);
        // translation by (30, 30) of a similar cloud costs roughly 900
        assert!((s.value - 900.0).abs() < 50.0);
    }

    #[test]
    fn prepared_matches_direct() {
        let cfg = SinkhornConfig::default();
        let x = cloud(40, 2, 3, 1.0, 0.0);
        let y = cloud(40, 2, 4, 1.0, 0.5);
        let px = PreparedMeasure::new(x.clone(), cfg);
        let py = PreparedMeasure::new(y.clone(), cfg);
        assert_eq!(px.divergence(&py).value, sinkhorn_divergence(&x, &y, &cfg).value);
    }
}
