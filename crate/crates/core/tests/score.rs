use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use sandi::scorekit::{
    noised_update, reputation, update_score, Epsilon, Fixed, ReputationConfig, ScoreParams,
};

fn arb_params() -> impl Strategy<Value = ScoreParams> {
    (1u32..5, 1i64..=100, 1i64..=200).prop_map(|(k, b, m)| {
        ScoreParams::new(k, Fixed::from_raw(b), Fixed::from_int(m), Epsilon::OFF).unwrap()
    })
}

proptest! {
    #[test]
    fn never_exceeds_ceiling(p in arb_params(), sc in -5000i64..20000, x in 0u64..50) {
        let sc = Fixed::from_raw(sc).min(p.ceiling());
        prop_assert!(update_score(sc, x, &p) <= p.ceiling());
    }

    #[test]
    fn monotone_in_score_and_reports(p in arb_params(), sc in -5000i64..20000, d in 0i64..500, x in 0u64..50) {
        let sc = Fixed::from_raw(sc).min(p.ceiling());
        let hi = Fixed::from_raw(sc.raw() + d).min(p.ceiling());
        prop_assert!(update_score(hi, x, &p) >= update_score(sc, x, &p));
        prop_assert!(update_score(sc, x + 1, &p) <= update_score(sc, x, &p));
    }

    #[test]
    fn under_tolerance_never_loses(p in arb_params(), sc in -5000i64..20000, x in 0u64..5) {
        let sc = Fixed::from_raw(sc).min(p.ceiling());
        prop_assume!(x < u64::from(p.k()));
        let next = update_score(sc, x, &p);
        prop_assert!(next >= sc);
        if sc >= Fixed::ZERO {
            prop_assert_eq!(next, Fixed::from_raw((sc.raw() + p.b().raw()).min(p.ceiling().raw())));
        }
    }

    #[test]
    fn each_report_past_tolerance_costs_one(p in arb_params(), sc in -5000i64..20000, extra in 0u64..30) {
        let sc = Fixed::from_raw(sc).min(p.ceiling());
        let x = u64::from(p.k()) + extra;
        prop_assert_eq!(update_score(sc, x, &p).raw(), sc.raw() - 100 * extra as i64);
    }

    #[test]
    fn noised_update_respects_ceiling(p in arb_params(), sc in -5000i64..20000, x in 0u64..10, seed: u64) {
        let p = p.with_epsilon(Epsilon::new(0.5).unwrap());
        let sc = Fixed::from_raw(sc).min(p.ceiling());
        let mut rng = StdRng::seed_from_u64(seed);
        prop_assert!(noised_update(sc, x, &p, &mut rng) <= p.ceiling());
    }

    #[test]
    fn labels_are_monotone(m in 4i64..400, a in -1000i64..40000, d in 0i64..1000) {
        let cfg = ReputationConfig::default_for(Fixed::from_int(m));
        let lo = Fixed::from_raw(a);
        let hi = Fixed::from_raw(a + d);
        prop_assert!(cfg.index(hi) >= cfg.index(lo));
        prop_assert_eq!(reputation(lo, &cfg), cfg.label(cfg.index(lo)).unwrap());
    }

    #[test]
    fn fixed_text_round_trip(raw in -10_000_000i64..10_000_000) {
        let v = Fixed::from_raw(raw);
        prop_assert_eq!(v.to_string().parse::<Fixed>().unwrap(), v);
        prop_assert_eq!(serde_json::from_str::<Fixed>(&serde_json::to_string(&v).unwrap()).unwrap(), v);
    }
}

#[test]
fn noise_off_is_exact() {
    let p = ScoreParams::new(2, Fixed::from_raw(50), Fixed::from_int(10), Epsilon::OFF).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    for raw in (-1000..=1000).step_by(25) {
        for x in 0..6 {
            let sc = Fixed::from_raw(raw);
            assert_eq!(noised_update(sc, x, &p, &mut rng), update_score(sc, x, &p));
        }
    }
}

#[test]
fn default_labels_split_at_quarters() {
    let cfg = ReputationConfig::default_for(Fixed::from_int(100));
    let at = |v: i64| reputation(Fixed::from_int(v), &cfg);
    assert_eq!([at(-1), at(0), at(24), at(25), at(74), at(75), at(100)], [
        "low", "medium", "medium", "high", "high", "very high", "very high"
    ]);
}
