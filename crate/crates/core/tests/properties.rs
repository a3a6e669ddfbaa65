use std::sync::Arc;

use latentmech::dist::{prokhorov_distance, round_dist, round_point, tv_distance, DiscreteDist, PriorOracle, RoundingParams};
use latentmech::mechanism::table::{random_repaired, second_price_with_reserve};
use latentmech::mechanism::{audit_ir, build_robust, LatentValuation, Mechanism, RobustOptions, ValuationSpec};
use latentmech::matrix::sigma_min_p;
use latentmech::norm::{lp_dist, lp_norm};
use latentmech::regression::{loss, solve_exact, solve_l1};
use latentmech::scores::{leverage_scores, lewis_residual, lewis_weights, LEWIS_MAX_ITER};
use latentmech::sketch::build_sample_plan_seeded;
use latentmech::{Mat, NormIndex};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(d: usize, k: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::new(DMatrix::from_fn(d, k, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_dist(k: usize, size: usize, rng: &mut ChaCha8Rng) -> DiscreteDist {
    let atoms: Vec<(Vec<f64>, f64)> = (0..size)
        .map(|_| {
            let x: Vec<f64> = (0..k).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            (x, rng.random_range(0.2..1.0))
        })
        .collect();
    let total: f64 = atoms.iter().map(|(_, w)| w).sum();
    DiscreteDist::from_weighted(atoms.into_iter().map(|(x, w)| (x, w / total)).collect()).unwrap()
}

fn norm_index() -> impl Strategy<Value = NormIndex> {
    prop_oneof![
        Just(NormIndex::Finite(1)),
        Just(NormIndex::Finite(2)),
        Just(NormIndex::Finite(3)),
        Just(NormIndex::Inf),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leverage_scores_sum_to_rank(d in 4usize..40, k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(d >= k);
        let a = gaussian(d, k, seed);
        let s = leverage_scores(&a).unwrap();
        prop_assert!((s.sum() - k as f64).abs() < 1e-9);
        prop_assert!(s.scores.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn leverage_scores_follow_row_permutations(d in 4usize..30, k in 1usize..4, seed in any::<u64>()) {
        let a = gaussian(d, k, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut perm: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let b = Mat::new(DMatrix::from_fn(d, k, |i, j| a.inner()[(perm[i], j)])).unwrap();
        let sa = leverage_scores(&a).unwrap().scores;
        let sb = leverage_scores(&b).unwrap().scores;
        for i in 0..d {
            prop_assert!((sb[i] - sa[perm[i]]).abs() < 1e-9);
        }
    }

    #[test]
    fn scores_ignore_column_changes(d in 6usize..30, k in 1usize..4, seed in any::<u64>(), p in 1u32..4) {
        let a = gaussian(d, k, seed);
        let r = gaussian(k, k, seed.wrapping_add(7));
        prop_assume!(r.singular_values().iter().cloned().fold(f64::INFINITY, f64::min) > 0.1);
        let b = Mat::new(a.inner() * r.inner()).unwrap();
        let idx = NormIndex::Finite(p);
        let sa = lewis_weights(&a, idx, 1e-10, LEWIS_MAX_ITER).unwrap().scores;
        let sb = lewis_weights(&b, idx, 1e-10, LEWIS_MAX_ITER).unwrap().scores;
        for i in 0..d {
            prop_assert!((sa[i] - sb[i]).abs() < 1e-7, "row {i}: {} vs {}", sa[i], sb[i]);
        }
    }

    #[test]
    fn lewis_weights_are_fixed_points(d in 6usize..30, k in 1usize..4, seed in any::<u64>(), p in 1u32..5) {
        let a = gaussian(d, k, seed);
        let w = lewis_weights(&a, NormIndex::Finite(p), 1e-10, LEWIS_MAX_ITER).unwrap();
        prop_assert!(lewis_residual(&a, &w.scores, p).unwrap() <= 1e-8);
        prop_assert!((w.sum() - k as f64).abs() <= 1e-6);
    }

    #[test]
    fn sigma_two_is_smallest_singular_value(d in 3usize..30, k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(d >= k);
        let a = gaussian(d, k, seed);
        let s = sigma_min_p(&a, NormIndex::Finite(2)).unwrap();
        let svd = a.singular_values().into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!((s.value - svd).abs() <= 1e-9 * (1.0 + svd));
        prop_assert!(s.certified);
    }

    #[test]
    fn sigma_scales_with_matrix(d in 3usize..20, k in 1usize..4, seed in any::<u64>(), c in -5.0f64..5.0, p in 1u32..3) {
        prop_assume!(d >= k && c.abs() > 0.05);
        let a = gaussian(d, k, seed);
        let idx = NormIndex::Finite(p);
        let s = sigma_min_p(&a, idx).unwrap().value;
        let sc = sigma_min_p(&a.scaled(c), idx).unwrap().value;
        prop_assert!((sc - c.abs() * s).abs() <= 1e-7 * (1.0 + sc));
    }

    #[test]
    fn certified_sigma_is_a_lower_bound(d in 3usize..20, k in 1usize..4, seed in any::<u64>(), p in 1u32..3) {
        prop_assume!(d >= k);
        let a = gaussian(d, k, seed);
        let idx = NormIndex::Finite(p);
        let s = sigma_min_p(&a, idx).unwrap().value;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
        for _ in 0..200 {
            let x = random_vec(k, &mut rng);
            let ratio = lp_norm(&a.mul_vec(&x), idx) / lp_norm(&x, idx);
            prop_assert!(ratio >= s - 1e-9 * (1.0 + s));
        }
    }

    #[test]
    fn plans_act_linearly(d in 5usize..40, s in 1usize..20, seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, p in norm_index()) {
        prop_assume!(p != NormIndex::Inf);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let plan = build_sample_plan_seeded(&q, s, p, seed).unwrap();
        let u = random_vec(d, &mut rng);
        let v = random_vec(d, &mut rng);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = plan.apply_vec(&mix).unwrap();
        let pu = plan.apply_vec(&u).unwrap();
        let pv = plan.apply_vec(&v).unwrap();
        for i in 0..s {
            let rhs = alpha * pu[i] + beta * pv[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * plan.max_rescale().max(1.0));
        }
    }

    #[test]
    fn solver_beats_the_zero_vector(d in 4usize..30, k in 1usize..4, seed in any::<u64>(), p in 1u32..5) {
        prop_assume!(d >= k);
        let a = gaussian(d, k, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let b = random_vec(d, &mut rng);
        let idx = NormIndex::Finite(p);
        let sol = solve_exact(a.inner(), &b, idx).unwrap();
        prop_assert!(sol.loss <= lp_norm(&b, idx) + 1e-9);
        prop_assert!((loss(a.inner(), &sol.z, &b, idx) - sol.loss).abs() <= 1e-8 * (1.0 + sol.loss));
    }

    #[test]
    fn l1_solution_is_locally_optimal(d in 4usize..30, k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(d >= k);
        let a = gaussian(d, k, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let b = random_vec(d, &mut rng);
        let sol = solve_l1(a.inner(), &b).unwrap();
        for j in 0..k {
            for h in [1e-4, -1e-4] {
                let mut z = sol.z.clone();
                z[j] += h;
                prop_assert!(loss(a.inner(), &z, &b, NormIndex::Finite(1)) >= sol.loss - 1e-9);
            }
        }
    }

    #[test]
    fn rounding_is_close_and_idempotent(k in 1usize..5, seed in any::<u64>(), delta in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rp = RoundingParams::random(k, delta, &mut rng).unwrap();
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
        let r = round_point(&x, &rp);
        prop_assert!(lp_dist(&x, &r, NormIndex::Inf) <= delta + 1e-12);
        prop_assert_eq!(round_point(&r, &rp), r);
    }

    #[test]
    fn rounding_keeps_mass(k in 1usize..4, size in 1usize..8, seed in any::<u64>(), delta in 0.05f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_dist(k, size, &mut rng);
        let rp = RoundingParams::random(k, delta, &mut rng).unwrap();
        let r = round_dist(&f, &rp);
        prop_assert!((r.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.len() <= f.len());
    }

    #[test]
    fn tv_is_a_symmetric_fraction(k in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_dist(k, 4, &mut rng);
        let g = random_dist(k, 5, &mut rng);
        let fg = tv_distance(&f, &g);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&fg));
        prop_assert_eq!(fg, tv_distance(&g, &f));
        prop_assert_eq!(tv_distance(&f, &f), 0.0);
    }

    #[test]
    fn prokhorov_is_a_metric(k in 1usize..3, seed in any::<u64>(), p in norm_index()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_dist(k, 4, &mut rng);
        let g = random_dist(k, 4, &mut rng);
        let h = random_dist(k, 3, &mut rng);
        let tol = 1e-6;
        let fg = prokhorov_distance(&f, &g, p, tol).unwrap();
        let gf = prokhorov_distance(&g, &f, p, tol).unwrap();
        let gh = prokhorov_distance(&g, &h, p, tol).unwrap();
        let fh = prokhorov_distance(&f, &h, p, tol).unwrap();
        prop_assert_eq!(fg, gf);
        prop_assert!((0.0..=1.0).contains(&fg));
        prop_assert!(fh <= fg + gh + 3.0 * tol);
        prop_assert_eq!(prokhorov_distance(&f, &f, p, tol).unwrap(), 0.0);
    }

    #[test]
    fn rounding_moves_prokhorov_a_little(k in 1usize..3, seed in any::<u64>(), delta in 0.02f64..0.3, p in norm_index()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_dist(k, 4, &mut rng);
        let g = random_dist(k, 4, &mut rng);
        let rp = RoundingParams::random(k, delta, &mut rng).unwrap();
        let tol = 1e-6;
        let eps = prokhorov_distance(&f, &g, p, tol).unwrap();
        let rounded = prokhorov_distance(&round_dist(&f, &rp), &round_dist(&g, &rp), p, tol).unwrap();
        prop_assert!(rounded <= eps + delta * p.root(k as f64) + 2.0 * tol);
    }

    #[test]
    fn prokhorov_mass_lies_near_the_support(k in 1usize..3, seed in any::<u64>(), p in norm_index()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_dist(k, 5, &mut rng);
        let g = random_dist(k, 4, &mut rng);
        let eps = prokhorov_distance(&f, &g, p, 1e-7).unwrap() + 1e-7;
        let far: f64 = f
            .atoms()
            .filter(|(x, _)| g.support().iter().all(|y| lp_dist(x, y, p) > eps))
            .map(|(_, w)| w)
            .sum();
        prop_assert!(far <= eps + 1e-12);
    }

    #[test]
    fn robust_chain_is_ir_with_nonnegative_payments(seed in any::<u64>(), zeta in 0.0f64..0.1, n in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 2;
        let a = Mat::new(DMatrix::from_fn(2, k, |i, j| if i == j { 1.0 } else { 0.25 })).unwrap();
        let vals = LatentValuation::new(ValuationSpec::additive(2), a.clone()).unwrap();
        let dhat: Vec<DiscreteDist> = (0..n).map(|_| random_dist(k, 2, &mut rng)).collect();
        let mhat: Arc<dyn Mechanism> = Arc::new(second_price_with_reserve(&dhat, &vals, 0b11, 0.1).unwrap());
        let priors: Vec<Arc<dyn PriorOracle>> = dhat.iter().map(|d| Arc::new(d.clone()) as Arc<dyn PriorOracle>).collect();
        let rm = build_robust(
            mhat, priors, zeta, 0.0, NormIndex::Finite(2), vals.spec.lipschitz, a.inf_norm(), k,
            &RobustOptions::default(), &mut rng,
        ).unwrap();
        let truth: Vec<DiscreteDist> = (0..n).map(|_| random_dist(k, 2, &mut rng)).collect();
        let rounded: Vec<DiscreteDist> = truth.iter().map(|f| round_dist(f, &rm.params.rounding())).collect();
        prop_assert_eq!(audit_ir(rm.composed().as_ref(), &truth, &vals).unwrap(), 0.0);
        prop_assert_eq!(audit_ir(rm.m2().as_ref(), &rounded, &vals).unwrap(), 0.0);
        for f in &rounded {
            let bids: Vec<Vec<f64>> = (0..n).map(|_| f.support()[0].clone()).collect();
            for b in rm.composed().lottery(&bids).unwrap().branches {
                prop_assert!(b.payments.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn repaired_tables_are_ir(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mat::identity(2);
        let vals = LatentValuation::new(ValuationSpec::additive(2), a).unwrap();
        let dhat: Vec<DiscreteDist> = (0..2).map(|_| random_dist(2, 3, &mut rng)).collect();
        let t = random_repaired(&dhat, &vals, 0b01, &mut rng).unwrap();
        prop_assert!(audit_ir(&t, &dhat, &vals).unwrap() <= 1e-12);
    }
}
