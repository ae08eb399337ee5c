mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use common::{params, random_game};
use sandi::scorekit::{Fixed, ReputationConfig};
use sandi::stratsim::{
    brute_force_value, brute_force_with, evaluate_policy, optimal_policy, simulate, theorem_form_value,
    verify_theorem_structure, Action, GameSpec, MessageType, Observation, OracleMode, Policy, Violation,
};

fn game(horizon: u32, cap: u32, sc: Fixed, messages: Vec<MessageType>) -> GameSpec {
    let p = params(1, 1.0, 10.0);
    GameSpec::new(horizon, cap, p, ReputationConfig::default_for(p.ceiling()), sc, messages).unwrap()
}

fn rising() -> MessageType {
    MessageType { reward: 1.0, q: vec![0.2, 0.4, 0.6, 0.8], p: vec![0.8, 0.6, 0.4, 0.2] }
}

fn tiny(g: &GameSpec) -> bool {
    !(g.send_cap == 4 && g.messages.len() == 3)
}

#[test]
fn oracle_matches_solver_on_random_tiny_games() {
    let mut rng = StdRng::seed_from_u64(100);
    let mut checked = 0;
    while checked < 100 {
        let g = random_game(&mut rng);
        if !tiny(&g) {
            continue;
        }
        let v = optimal_policy(&g).unwrap().value;
        let b = brute_force_value(&g).unwrap();
        assert!((v - b).abs() <= 1e-12, "{v} vs {b} for {}", g.to_json());
        checked += 1;
    }
}

#[test]
fn oracle_modes_agree_where_both_fit() {
    let mut rng = StdRng::seed_from_u64(101);
    let mut checked = 0;
    for _ in 0..400 {
        let g = random_game(&mut rng);
        if OracleMode::for_game(&g).unwrap_or(OracleMode::PerEpoch) != OracleMode::Global {
            continue;
        }
        let a = brute_force_with(&g, OracleMode::Global).unwrap();
        let b = brute_force_with(&g, OracleMode::PerEpoch).unwrap();
        assert!((a - b).abs() <= 1e-12);
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} small games");
}

#[test]
fn single_send_final_epoch_is_the_best_expected_reward() {
    let msgs = vec![
        MessageType { reward: 2.0, q: vec![0.5; 4], p: vec![0.5; 4] },
        MessageType { reward: 5.0, q: vec![0.3; 4], p: vec![0.9; 4] },
    ];
    let g = game(1, 1, Fixed::ZERO, msgs);
    assert_eq!(brute_force_value(&g).unwrap(), 1.5);
    assert_eq!(optimal_policy(&g).unwrap().policy.slice(&sandi::stratsim::SliceKey { epochs_left: 1, score: Fixed::ZERO }).unwrap(), [Action::Send(1)]);
}

#[test]
fn two_epoch_rising_game_matches_the_oracle() {
    for sc in [Fixed::from_raw(240), Fixed::from_raw(250), Fixed::from_raw(740), Fixed::from_raw(750)] {
        let g = game(2, 2, sc, vec![rising()]);
        let sol = optimal_policy(&g).unwrap();
        assert!((sol.value - brute_force_value(&g).unwrap()).abs() <= 1e-12);
        assert!((evaluate_policy(&g, &sol.policy).value - sol.value).abs() <= 1e-12);
    }
}

#[test]
fn two_epoch_rising_game_sends_past_tolerance() {
    // With sc = 2.5 (label "high"), after one report a second send earns
    // 0.6 now and risks losing 0.2 per send next epoch: 1.64 against 1.2.
    let g = game(2, 2, Fixed::from_raw(250), vec![rising()]);
    let sol = optimal_policy(&g).unwrap();
    let key = sandi::stratsim::SliceKey { epochs_left: 2, score: Fixed::from_raw(250) };
    assert_eq!(sol.policy.slice(&key).unwrap(), [Action::Send(0), Action::Send(0), Action::Send(0)]);
    let rep = verify_theorem_structure(&g, &sol.policy);
    assert_eq!(rep.violations, vec![Violation::ThresholdAboveK { slice: key, threshold: 2, k: 1 }]);
    assert!(sol.value > theorem_form_value(&g) + 1e-3);
}

#[test]
fn zero_rewards_are_worth_nothing() {
    let g = game(3, 3, Fixed::ZERO, vec![MessageType { reward: 0.0, q: vec![0.9; 4], p: vec![0.1; 4] }]);
    assert_eq!(brute_force_value(&g).unwrap(), 0.0);
    let sol = optimal_policy(&g).unwrap();
    assert_eq!(sol.value, 0.0);
    assert!(sol.policy.slices().all(|(_, a)| a.iter().all(|&x| x == Action::Wait)));
}

#[test]
fn optimal_play_simulates_to_its_value() {
    let g = game(1, 3, Fixed::ZERO, vec![MessageType { reward: 2.0, q: vec![0.5; 4], p: vec![0.5; 4] }]);
    let sol = optimal_policy(&g).unwrap();
    let res = simulate(&g, &sol.policy, 100_000, Observation::TrueReports, &mut StdRng::seed_from_u64(9));
    assert!((res.mean - 3.0).abs() <= 3.0 * res.stderr);
    let wait = simulate(&g, &Policy::always_wait(&g), 1000, Observation::TrueReports, &mut StdRng::seed_from_u64(9));
    assert_eq!(wait.mean, 0.0);
}

fn small_game() -> impl Strategy<Value = GameSpec> {
    any::<u64>().prop_map(|seed| {
        let mut rng = StdRng::seed_from_u64(seed);
        loop {
            let g = random_game(&mut rng);
            if g.send_cap <= 3 && g.horizon <= 3 {
                return g;
            }
        }
    })
}

fn value(g: &GameSpec) -> f64 {
    optimal_policy(g).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn more_reward_never_hurts(g in small_game(), i in 0usize..3, bump in 0.01f64..1.0) {
        let mut h = g.clone();
        let i = i % h.messages.len();
        h.messages[i].reward += bump;
        prop_assert!(value(&h) >= value(&g) - 1e-12);
    }

    #[test]
    fn more_engagement_never_hurts(g in small_game(), i in 0usize..3, from in 0usize..4, bump in 0.01f64..0.5) {
        let mut h = g.clone();
        let i = i % h.messages.len();
        for q in &mut h.messages[i].q[from..] {
            *q = (*q + bump).min(1.0);
        }
        h.validate().unwrap();
        prop_assert!(value(&h) >= value(&g) - 1e-12);
    }

    #[test]
    fn more_reports_never_help(g in small_game(), i in 0usize..3, upto in 0usize..4, bump in 0.01f64..0.5) {
        let mut h = g.clone();
        let i = i % h.messages.len();
        for p in &mut h.messages[i].p[..=upto] {
            *p = (*p + bump).min(1.0);
        }
        h.validate().unwrap();
        prop_assert!(value(&h) <= value(&g) + 1e-12);
    }

    #[test]
    fn higher_start_never_hurts(g in small_game(), steps in 1i64..10) {
        let mut h = g.clone();
        h.initial_score = Fixed::from_raw((g.initial_score.raw() + 50 * steps).min(g.params.ceiling().raw()));
        prop_assert!(value(&h) >= value(&g) - 1e-12);
    }

    #[test]
    fn theorem_form_never_beats_the_optimum(g in small_game()) {
        prop_assert!(theorem_form_value(&g) <= value(&g) + 1e-12);
    }
}
