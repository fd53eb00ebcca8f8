use num_complex::Complex64;
use proptest::prelude::*;

use skewlab::base_systems::{BasePoint, BaseSystem};
use skewlab::cocycles::{CylinderFunction, IntGenerator, IntegerCocycle, ScalarCocycle, DEFAULT_GROWTH_THRESHOLD};
use skewlab::criterion::{check_criterion, CriterionOptions, DenseSetSpec, FiberSetup, IndexSequence};
use skewlab::fiber_space::{NormSpace, ScaledVector, Side, SparseVector, WeightSequence, WeightedShift, WindowSpec};
use skewlab::skew_lab::{
    classify, hitting_set, product_hitting, HitOptions, HittingSet, IntSkew, ProductBox, ScalarSkew, SkewProduct,
};

fn sparse(lo: i64, hi: i64, max_len: usize) -> impl Strategy<Value = SparseVector> {
    prop::collection::vec((lo..=hi, -2.0..2.0f64, -2.0..2.0f64), 1..=max_len)
        .prop_map(|e| SparseVector::from_entries(e.into_iter().map(|(i, re, im)| (i, Complex64::new(re, im)))))
}

fn plain(shift: WeightedShift) -> FiberSetup {
    FiberSetup {
        shift,
        space: NormSpace::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integer_identity_on_odometer(
        values in prop::collection::vec(-20i64..=20, 8),
        a in 0u64..1 << 12,
        m in -200i64..=200,
        n in -200i64..=200,
    ) {
        let base = BaseSystem::odometer(12).unwrap();
        let g = CylinderFunction::new(3, values).unwrap();
        let h = IntegerCocycle::new(base.clone(), IntGenerator::OdometerCoboundary { g: g.clone() }).unwrap();
        let a = BasePoint::odometer(a, 12).unwrap();
        let fna = base.apply(&a, n).unwrap();
        prop_assert_eq!(
            h.cocycle_sum(&a, m + n).unwrap(),
            h.cocycle_sum(&fna, m).unwrap() + h.cocycle_sum(&a, n).unwrap()
        );
        let report = h.boundedness_report(&a, 2000, DEFAULT_GROWTH_THRESHOLD).unwrap();
        prop_assert!(report.max_abs <= 2 * g.max_abs());
    }

    #[test]
    fn example2_closed_form_matches_sum(gamma in 0.05..2.0f64, c1 in 3u64..6, gap in 4u64..20) {
        let centers = vec![c1, c1 + gap, c1 + 3 * gap];
        let w = WeightSequence::example2(gamma, WindowSpec::new(centers).unwrap()).unwrap();
        let mut sum = 0.0;
        for n in 1..=200u64 {
            sum += w.log_weight(n as i64).unwrap();
            prop_assert!((w.log_prefix(n) - sum).abs() <= 1e-9, "n={}", n);
        }
    }

    #[test]
    fn scaling_covariance(
        gamma in -1.0..1.0f64,
        c in -2.0..2.0f64,
        x in sparse(1, 30, 5),
        n in 0u64..60,
        a in 0.0..1.0f64,
    ) {
        // (h, T) and (e^c h, e^{−c} T) give the same skew
        let shift = WeightedShift::new(WeightSequence::table(vec![1.5, 0.7, 2.0]).unwrap(), Side::Unilateral).unwrap();
        let p = ScalarSkew::new(
            ScalarCocycle::exp_gamma(BaseSystem::golden_rotation(), gamma).unwrap(),
            plain(shift.clone()),
        );
        let q = ScalarSkew::new(
            ScalarCocycle::exp_gamma(BaseSystem::golden_rotation(), gamma + c).unwrap(),
            plain(shift.with_log_scalar(-c)),
        );
        let a = BasePoint::circle(a);
        let x = ScaledVector::from_sparse(x);
        let (s, t) = (p.iterate(&a, &x, n).unwrap(), q.iterate(&a, &x, n).unwrap());
        prop_assert_eq!(s.point, t.point);
        let tol = 1e-9 * (1 + n) as f64;
        for (j, z) in s.fiber.iter_log() {
            prop_assert!(t.fiber.log_entry(j).unwrap().approx_eq(&z, tol));
        }
        prop_assert_eq!(s.fiber.iter_log().count(), t.fiber.iter_log().count());
    }

    #[test]
    fn classify_is_pure(hits in prop::collection::btree_set(0u64..300, 0..200)) {
        let set = HittingSet::new(300, hits.into_iter().collect());
        prop_assert_eq!(set.stats, set.recompute_stats());
        prop_assert_eq!(classify(&set), classify(&set.clone()));
        let rebuilt = HittingSet::new(set.horizon, set.hits.clone());
        prop_assert_eq!(rebuilt, set);
    }

    #[test]
    fn int_skew_signed_iterates_invert(x in sparse(-10, 10, 4), n in -40i64..=40, a in 0.0..1.0f64) {
        let shift = WeightedShift::new(WeightSequence::split(0.5, 2.0).unwrap(), Side::Bilateral).unwrap();
        let skew = IntSkew::new(IntegerCocycle::constant(BaseSystem::golden_rotation(), 1), plain(shift)).unwrap();
        let a = BasePoint::circle(a);
        let there = skew.iterate_signed(&a, &ScaledVector::from_sparse(x.clone()), n).unwrap();
        let back = skew.iterate_signed(&there.point, &there.fiber, -n).unwrap();
        let y = back.fiber.materialize().unwrap();
        for (j, z) in x.iter() {
            prop_assert!((y.get(j) - z).norm() <= 1e-12 * z.norm().max(1.0));
        }
    }
}

#[test]
fn int_skew_transitivity_witness() {
    // h̃ ≡ 1 over a rotation; bilateral weights 1/2 on the left and 2 on the
    // right, so T^n u → 0 and S^n v → 0
    let shift = WeightedShift::new(WeightSequence::split(0.5, 2.0).unwrap(), Side::Bilateral).unwrap();
    let skew = IntSkew::new(IntegerCocycle::constant(BaseSystem::golden_rotation(), 1), plain(shift)).unwrap();
    let pairs = [
        (vec![(0, 1.0)], vec![(2, -1.5)]),
        (vec![(-3, 0.5), (4, 2.0)], vec![(1, 1.0)]),
        (vec![(5, -1.0)], vec![(-5, 3.0), (0, 1.0)]),
        (vec![(1, 1.0), (2, 1.0)], vec![(1, -1.0), (2, -1.0)]),
        (vec![(-1, 2.0)], vec![(-1, 2.5)]),
    ];
    for (u, v) in pairs {
        let u = ProductBox::whole_circle(SparseVector::from_real(&u), 0.1).unwrap();
        let v = ProductBox::whole_circle(SparseVector::from_real(&v), 0.1).unwrap();
        let r = hitting_set(&skew, &u, &v, 1000, &HitOptions { base_samples: 8 }).unwrap();
        assert!(!r.set.hits.is_empty());
        assert!(r.set.stats.cofinite_tail_start.is_some());
    }
}

#[test]
fn mixing_certificate_implies_cofinite_hits() {
    let setup = plain(WeightedShift::new(WeightSequence::constant(3.0).unwrap(), Side::Unilateral).unwrap());
    let d = DenseSetSpec::default().with_seed(4);
    let cert = check_criterion(&setup, &IndexSequence::full(5000).unwrap(), &d, &d, 0.5, &CriterionOptions::default())
        .unwrap();
    assert_eq!(cert.verdict.name(), "mixing_certificate");
    let skew = ScalarSkew::new(ScalarCocycle::exp_gamma(BaseSystem::golden_rotation(), 0.5).unwrap(), setup);
    for k in 1..=5i64 {
        let u = ProductBox::whole_circle(SparseVector::from_real(&[(k, 1.0), (k + 2, -0.5)]), 0.2).unwrap();
        let v = ProductBox::whole_circle(SparseVector::from_real(&[(6 - k, 2.0)]), 0.3).unwrap();
        let r = hitting_set(&skew, &u, &v, 200, &HitOptions::default()).unwrap();
        assert!(matches!(r.set.stats.cofinite_tail_start, Some(s) if s <= 60), "{:?}", r.set.stats);
    }
}

#[test]
fn product_hitting_diagonal_and_empty_target() {
    let setup = plain(WeightedShift::new(WeightSequence::constant(2.0).unwrap(), Side::Unilateral).unwrap());
    let skew = ScalarSkew::new(ScalarCocycle::exp_gamma(BaseSystem::golden_rotation(), 0.0).unwrap(), setup);
    let opts = HitOptions { base_samples: 8 };
    let u = ProductBox::whole_circle(SparseVector::from_real(&[(1, 1.0)]), 0.25).unwrap();
    let v = ProductBox::whole_circle(SparseVector::from_real(&[(3, -2.0)]), 0.25).unwrap();
    let single = hitting_set(&skew, &u, &v, 100, &opts).unwrap().set;
    assert_eq!(product_hitting(&skew, &u, &v, &u, &v, 100, &opts).unwrap(), single);
    let empty = ProductBox::whole_circle(SparseVector::from_real(&[(3, -2.0)]), 0.0).unwrap();
    assert!(product_hitting(&skew, &u, &v, &u, &empty, 100, &opts).unwrap().hits.is_empty());
}

#[test]
fn fiber_maps_match_iterates() {
    let setup = plain(WeightedShift::new(WeightSequence::table(vec![2.0, 0.5, 1.25]).unwrap(), Side::Unilateral).unwrap());
    let skew = ScalarSkew::new(ScalarCocycle::cos_profile(BaseSystem::golden_rotation(), 3.0, -1.0).unwrap(), setup);
    let a = BasePoint::circle(0.37);
    let maps = skew.fiber_maps(&a, 80).unwrap();
    let x = ScaledVector::from_sparse(SparseVector::basis(90));
    for (n, map) in maps.iter().enumerate() {
        let st = skew.iterate(&a, &x, n as u64).unwrap();
        let coeff = skew.fiber().shift.log_coefficient(90 - n as i64, n as u64).unwrap();
        let entry = st.fiber.log_entry(90 - n as i64).unwrap();
        assert!((entry.log_mag - (map.scale.log_mag + coeff)).abs() <= 1e-9 * (1 + n) as f64, "n={n}");
    }
}
