use std::sync::Arc;

use lidl::homotopy::{gaussian_blend, gaussian_w2, HomotopyPotential, HomotopySchedule, SwitchShape};
use lidl::metrics::{diff_heuristic, slope_heuristic};
use lidl::potential::GaussianPotential;
use lidl::problems::GaussianMixtureProblem;
use lidl::sinkhorn::PreparedMeasure;
use lidl::{compute_stats, sinkhorn_divergence, CallCounter, DiscreteMeasure, Ensemble, Potential, SinkhornConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn refs(v: &[PreparedMeasure]) -> Vec<&PreparedMeasure> {
    v.iter().collect()
}

fn ensemble_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 2usize..12).prop_flat_map(|(d, b)| (Just(d), Just(b), prop::collection::vec(-5.0f64..5.0, d * b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_follow_translations((d, _b, data) in ensemble_strategy(), shift in prop::collection::vec(-20.0f64..20.0, 6)) {
        let e = Ensemble::new(data.clone(), d, 0.0).unwrap();
        let moved = e.affine_map(&DMatrix::identity(d, d), &shift[..d]);
        let (s0, s1) = (compute_stats(&e).unwrap(), compute_stats(&moved).unwrap());
        for k in 0..d {
            prop_assert!((s1.mean[k] - s0.mean[k] - shift[k]).abs() < 1e-12 * (1.0 + shift[k].abs() + s0.mean[k].abs()));
        }
        prop_assert!((&s1.covariance - &s0.covariance).norm() < 1e-11 * (1.0 + s0.covariance.norm()));
    }

    #[test]
    fn stats_follow_linear_maps((d, _b, data) in ensemble_strategy(), entries in prop::collection::vec(-2.0f64..2.0, 25)) {
        let e = Ensemble::new(data, d, 0.0).unwrap();
        let a = DMatrix::from_fn(d, d, |i, j| entries[i * 5 + j]);
        let mapped = e.affine_map(&a, &vec![0.0; d]);
        let want = &a * compute_stats(&e).unwrap().covariance * a.transpose();
        let got = compute_stats(&mapped).unwrap().covariance;
        prop_assert!((&got - &want).norm() <= 1e-10 * want.norm().max(1e-300) + 1e-12);
    }

    #[test]
    fn stats_rank_and_root((d, b, data) in ensemble_strategy()) {
        let s = compute_stats(&Ensemble::new(data, d, 0.0).unwrap()).unwrap();
        let recon = &s.sqrt_factor * s.sqrt_factor.transpose();
        prop_assert!((&recon - &s.covariance).norm() <= 1e-12 * s.covariance.norm().max(1e-300) + 1e-14);
        let rank = s.covariance.singular_values().iter().filter(|v| **v > 1e-10).count();
        prop_assert!(rank <= d.min(b - 1));
        prop_assert_eq!(s.covariance.clone(), s.covariance.transpose());
    }

    #[test]
    fn divergence_nonnegative_symmetric_and_zero_on_diagonal(
        x in prop::collection::vec(-3.0f64..3.0, 2..40),
        y in prop::collection::vec(-3.0f64..3.0, 2..40),
    ) {
        let cfg = SinkhornConfig::default();
        let mu = DiscreteMeasure::uniform(x[..x.len() / 2 * 2].to_vec(), 2).unwrap();
        let nu = DiscreteMeasure::uniform(y[..y.len() / 2 * 2].to_vec(), 2).unwrap();
        let a = sinkhorn_divergence(&mu, &nu, &cfg).value;
        prop_assert!(a >= 0.0);
        prop_assert!((a - sinkhorn_divergence(&nu, &mu, &cfg).value).abs() < 1e-9);
        prop_assert!(sinkhorn_divergence(&mu, &mu, &cfg).value.abs() < 1e-8);
    }

    #[test]
    fn blend_is_the_convex_combination(s in 0.0f64..1.0, y in prop::collection::vec(-8.0f64..8.0, 2)) {
        let aux: Arc<dyn Potential> = Arc::new(GaussianPotential::isotropic(2, 8.0));
        let target: Arc<dyn Potential> = Arc::new(GaussianMixtureProblem::new(4, 5.0).unwrap());
        let h = HomotopyPotential::new(aux.clone(), target.clone(), s, CallCounter::new()).unwrap();
        prop_assert_eq!(h.value(&y), (1.0 - s) * aux.value(&y) + s * target.value(&y));
        let (mut g, mut ga, mut gt) = (vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]);
        h.gradient(&y, &mut g);
        aux.gradient(&y, &mut ga);
        target.gradient(&y, &mut gt);
        for k in 0..2 {
            prop_assert_eq!(g[k], (1.0 - s) * ga[k] + s * gt[k]);
        }
    }

    #[test]
    fn heuristics_ignore_particle_order(seed in 0u64..1000) {
        let cfg = SinkhornConfig::default();
        let snaps: Vec<DiscreteMeasure> = (0..10)
            .map(|k| {
                let atoms: Vec<f64> = (0..24).map(|i| ((i as u64 * 7 + seed * 13 + k * 3) % 17) as f64 / (2.0 + k as f64)).collect();
                DiscreteMeasure::uniform(atoms, 2).unwrap()
            })
            .collect();
        let perm: Vec<usize> = (0..12).map(|i| (i * 5 + seed as usize) % 12).collect();
        let plain: Vec<PreparedMeasure> = snaps.iter().map(|m| PreparedMeasure::new(m.clone(), cfg)).collect();
        let shuffled: Vec<PreparedMeasure> = snaps.iter().map(|m| PreparedMeasure::new(m.permuted(&perm), cfg)).collect();
        let a = diff_heuristic(&refs(&plain), 5, 5, 0.5, 1.0).unwrap();
        let b = diff_heuristic(&refs(&shuffled), 5, 5, 0.5, 1.0).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-6 * (1.0 + a.value.abs()), "{} {}", a.value, b.value);
        let a = slope_heuristic(&refs(&plain), 10, 0.05, 0.5, -1.0).unwrap();
        let b = slope_heuristic(&refs(&shuffled), 10, 0.05, 0.5, -1.0).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-4 * (1.0 + a.value.abs()), "{} {}", a.value, b.value);
    }
}

#[test]
fn schedules_are_monotone_on_a_fine_grid() {
    for shape in [SwitchShape::Linear, SwitchShape::Convex, SwitchShape::Concave] {
        let s = HomotopySchedule::ramp(shape, 2.0, 18.0, 40.0).unwrap();
        let mut last = 0.0;
        for i in 0..=10_000 {
            let v = s.value(40.0 * i as f64 / 10_000.0);
            assert!(v >= last && (0.0..=1.0).contains(&v));
            last = v;
        }
        assert_eq!(last, 1.0);
    }
}

#[test]
fn gaussian_homotopy_is_w2_continuous() {
    let aux = GaussianPotential::isotropic(2, 8.0);
    let target = GaussianPotential::from_covariance(
        DVector::from_vec(vec![5.0, -1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
    )
    .unwrap();
    let max_step = |n: usize| {
        let pts: Vec<_> = (0..=n).map(|i| gaussian_blend(&aux, &target, i as f64 / n as f64).unwrap()).collect();
        pts.windows(2).map(|w| gaussian_w2(&w[0].0, &w[0].1, &w[1].0, &w[1].1)).fold(0.0, f64::max)
    };
    let (coarse, fine) = (max_step(100), max_step(200));
    let total = {
        let (m0, c0) = gaussian_blend(&aux, &target, 0.0).unwrap();
        let (m1, c1) = gaussian_blend(&aux, &target, 1.0).unwrap();
        gaussian_w2(&m0, &c0, &m1, &c1)
    };
    assert!(coarse < 0.2 * total, "{coarse} vs {total}");
    assert!(fine < 0.6 * coarse, "{fine} vs {coarse}");

    // diagonal case against the per-coordinate closed form
    let (m1, c1) = (DVector::from_vec(vec![1.0, 2.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.25])));
    let (m2, c2) = (DVector::from_vec(vec![-1.0, 0.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0])));
    let want: f64 = (4.0 + 4.0 + (2.0f64 - 1.0).powi(2) + (0.5f64 - 1.0).powi(2)).sqrt();
    assert!((gaussian_w2(&m1, &c1, &m2, &c2) - want).abs() < 1e-12);
}
