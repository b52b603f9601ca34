//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use lidl::rng::Lane;
use lidl::{DiscreteMeasure, SeedSpec};
use rand::Rng;

pub fn cost(x: &DiscreteMeasure, y: &DiscreteMeasure) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|i| (0..y.len()).map(|j| 0.5 * x.atom(i).iter().zip(y.atom(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).collect())
        .collect()
}

/// Plain scaling iterations `u = a / K v`, `v = b / K^T u`. With entropy taken relative to
/// `a x b` the potentials are `f = eps ln(u / a)`, `g = eps ln(v / b)`.
pub fn plain_ot(x: &DiscreteMeasure, y: &DiscreteMeasure, eps: f64) -> f64 {
    let c = cost(x, y);
    let k: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|v| (-v / eps).exp()).collect()).collect();
    let (a, b) = (x.weights(), y.weights());
    let mut u = vec![1.0; a.len()];
    let mut v = vec![1.0; b.len()];
    for _ in 0..100_000 {
        for i in 0..a.len() {
            u[i] = a[i] / (0..b.len()).map(|j| k[i][j] * v[j]).sum::<f64>();
        }
        let mut delta: f64 = 0.0;
        for j in 0..b.len() {
            let nv = b[j] / (0..a.len()).map(|i| k[i][j] * u[i]).sum::<f64>();
            delta = delta.max((nv.ln() - v[j].ln()).abs());
            v[j] = nv;
        }
        if delta < 1e-14 {
            break;
        }
    }
    eps * (a.iter().zip(&u).map(|(p, q)| p * (q / p).ln()).sum::<f64>() + b.iter().zip(&v).map(|(p, q)| p * (q / p).ln()).sum::<f64>())
}

/// Log-domain alternating softmin updates without any acceleration.
pub fn log_ot(x: &DiscreteMeasure, y: &DiscreteMeasure, eps: f64) -> f64 {
    let c = cost(x, y);
    let (a, b) = (x.weights(), y.weights());
    let (n, m) = (a.len(), b.len());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let lse = |vals: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = vals.collect();
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
    };
    for _ in 0..200_000 {
        for i in 0..n {
            f[i] = -eps * lse(&mut (0..m).map(|j| b[j].ln() + (g[j] - c[i][j]) / eps));
        }
        let mut delta: f64 = 0.0;
        for j in 0..m {
            let ng = -eps * lse(&mut (0..n).map(|i| a[i].ln() + (f[i] - c[i][j]) / eps));
            delta = delta.max((ng - g[j]).abs());
            g[j] = ng;
        }
        if delta < 1e-13 {
            break;
        }
    }
    a.iter().zip(&f).map(|(p, q)| p * q).sum::<f64>() + b.iter().zip(&g).map(|(p, q)| p * q).sum::<f64>()
}

pub fn oracle_divergence(x: &DiscreteMeasure, y: &DiscreteMeasure, eps: f64) -> f64 {
    (log_ot(x, y, eps) - 0.5 * log_ot(x, x, eps) - 0.5 * log_ot(y, y, eps)).max(0.0)
}

pub fn random_measure(seed: u64, n: usize, d: usize, spread: f64, weighted: bool) -> DiscreteMeasure {
    let mut rng = SeedSpec::new(seed, 0).rng(Lane::Custom(9), 0, 0);
    let atoms: Vec<f64> = (0..n * d).map(|_| rng.random_range(-spread..spread)).collect();
    if weighted {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        DiscreteMeasure::new(atoms, w.iter().map(|x| x / s).collect(), d).unwrap()
    } else {
        DiscreteMeasure::uniform(atoms, d).unwrap()
    }
}
