use edmc::diagnostics::{cross_coherence, incoherence_nu};
use edmc::dualbasis::{f_omega_apply, rstar_r_coeffs, w_coefficients};
use edmc::geometry::{distances_from_gram, gram_from_points, DenseSym};
use edmc::manifold::{hard_threshold, project_tangent, retract_structured};
use edmc::sampling::{all_pairs, bernoulli_sample, IndexPair};
use edmc::synthdata::{generate, DatasetSpec};
use edmc::testutil::{gaussian, random_centered_gram, random_centered_sym, random_sym};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (4usize..14).prop_flat_map(|n| (Just(n), 1usize..4.min(n - 1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampling_operator_is_self_adjoint_and_psd(n in 3usize..16, p in 0.05f64..1.0, seed in any::<u64>()) {
        let omega = bernoulli_sample(n, p, seed).unwrap();
        let c: Vec<f64> = gaussian(omega.len(), 1, seed ^ 1).iter().cloned().collect();
        let d: Vec<f64> = gaussian(omega.len(), 1, seed ^ 2).iter().cloned().collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (rc, rd) = (rstar_r_coeffs(&omega, &c), rstar_r_coeffs(&omega, &d));
        let scale = 1.0 + dot(&rc, &rc).sqrt() * dot(&d, &d).sqrt();
        prop_assert!((dot(&rc, &d) - dot(&c, &rd)).abs() <= 1e-10 * scale);
        prop_assert!(dot(&rc, &c) >= -1e-10 * scale);
    }

    #[test]
    fn f_omega_is_adjoint_of_coefficient_map(n in 3usize..16, p in 0.05f64..1.0, seed in any::<u64>()) {
        let omega = bernoulli_sample(n, p, seed).unwrap();
        let y = random_sym(n, seed ^ 3);
        let c: Vec<f64> = gaussian(omega.len(), 1, seed ^ 4).iter().cloned().collect();
        let lhs = f_omega_apply(&omega, &c).to_dense().matrix().dot(y.matrix());
        let rhs: f64 = w_coefficients(&y, &omega).iter().zip(&c).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn generated_points_give_centered_grams((n, r) in dims(), seed in any::<u64>()) {
        let pts = generate(&DatasetSpec::sphere(n, r, seed)).unwrap();
        prop_assert!(pts.is_centered());
        let g = gram_from_points(&pts).unwrap();
        prop_assert!(g.row_sums().amax() <= 1e-10);
        let d = distances_from_gram(&g);
        for a in all_pairs(n) {
            let (x, y) = (pts.row(a.i), pts.row(a.j));
            let want: f64 = x.iter().zip(&y).map(|(s, t)| (s - t).powi(2)).sum();
            prop_assert!((d.get(a.i, a.j) - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn generation_and_sampling_are_deterministic((n, r) in dims(), seed in any::<u64>()) {
        let spec = DatasetSpec::sphere(n, r, seed);
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        prop_assert_eq!(a.coords(), b.coords());
        let (s, t) = (bernoulli_sample(n, 0.4, seed).unwrap(), bernoulli_sample(n, 0.4, seed).unwrap());
        prop_assert_eq!(s.pairs(), t.pairs());
    }

    #[test]
    fn incoherence_stays_within_bounds((n, r) in dims(), seed in any::<u64>()) {
        let x = random_centered_gram(n, r, seed);
        let rep = incoherence_nu(&x).unwrap();
        prop_assert!(rep.nu <= rep.upper_bound * (1.0 + 1e-12));
        prop_assert!(rep.nu >= rep.lower_bound * (1.0 - 1e-12));
    }

    #[test]
    fn cross_coherence_matches_dense_projector((n, r) in dims(), seed in any::<u64>(), k in 0usize..1000, l in 0usize..1000) {
        let x = random_centered_gram(n, r, seed);
        let pairs: Vec<IndexPair> = all_pairs(n).collect();
        let (a, b) = (pairs[k % pairs.len()], pairs[l % pairs.len()]);
        let pu = x.u() * x.u().transpose();
        let w = |q: IndexPair| {
            let mut m = DMatrix::zeros(n, n);
            m[(q.i, q.i)] = 1.0;
            m[(q.j, q.j)] = 1.0;
            m[(q.i, q.j)] = -1.0;
            m[(q.j, q.i)] = -1.0;
            &pu * m
        };
        let want = w(a).dot(&w(b));
        prop_assert!((cross_coherence(&x, a, b).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn tangent_projection_matches_dense_formula((n, r) in dims(), seed in any::<u64>()) {
        let x = random_centered_gram(n, r, seed);
        let y = random_centered_sym(n, seed ^ 5);
        let t = project_tangent(&x, &y).unwrap();
        let p = x.u() * x.u().transpose();
        let ym = y.matrix();
        let want = &p * ym + ym * &p - &p * ym * &p;
        prop_assert!((t.to_dense().matrix() - &want).amax() <= 1e-10);
        let again = project_tangent(&x, &t.to_dense()).unwrap();
        prop_assert!((again.to_dense().matrix() - t.to_dense().matrix()).amax() <= 1e-10);
    }

    #[test]
    fn structured_retraction_matches_dense_threshold((n, r) in dims(), seed in any::<u64>(), step in -2.0f64..2.0) {
        let x = random_centered_gram(n, r, seed);
        let t = project_tangent(&x, &random_centered_sym(n, seed ^ 6)).unwrap().scaled(0.3);
        let out = retract_structured(&x, &t, step).unwrap();
        let y = DenseSym::new(x.to_dense().matrix() + t.to_dense().matrix() * step).unwrap();
        let dense = hard_threshold(&y, r);
        prop_assume!(!dense.tie && !out.tie);
        prop_assert!((out.gram.to_dense().matrix() - dense.gram.to_dense().matrix()).amax() <= 1e-9);
        let change = (out.gram.to_dense().matrix() - x.to_dense().matrix()).norm();
        prop_assert!((out.change - change).abs() <= 1e-9 * (1.0 + change));
        prop_assert!(out.gram.centering_defect() <= 1e-10);
    }
}
