//! Monte Carlo rollouts of the sender game.

use rand::Rng;
use serde::Serialize;

use super::game::GameSpec;
use super::solver::{Action, Strategy};
use crate::scorekit::{noised_update, Score};

/// What the strategy sees as "reports so far" within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// The sender sees each report as it happens.
    #[default]
    TrueReports,
    /// The sender never sees reports; the strategy is always told 0.
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochQuantiles {
    /// 0 is the initial score; `i` is the score after epoch `i`.
    pub epoch: u32,
    pub p10: Score,
    pub p50: Score,
    pub p90: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub trials: u64,
    pub mean: f64,
    pub stderr: f64,
    /// `report_histogram[x]`: number of (trial, epoch) pairs with `x` reports.
    pub report_histogram: Vec<u64>,
    pub score_quantiles: Vec<EpochQuantiles>,
}

fn quantile(sorted: &[Score], q: f64) -> Score {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Runs `trials` independent rollouts of `strategy`. Rewards and reports are
/// independent Bernoulli draws; with epsilon set, epoch updates are noised.
pub fn simulate<S: Strategy + ?Sized, R: Rng + ?Sized>(
    g: &GameSpec,
    strategy: &S,
    trials: u64,
    observation: Observation,
    rng: &mut R,
) -> SimResult {
    let trials = trials.max(1);
    let epochs = g.horizon as usize;
    let mut histogram = vec![0u64; g.send_cap as usize + 1];
    let mut scores: Vec<Vec<Score>> = vec![Vec::with_capacity(trials as usize); epochs + 1];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let mut sc = g.initial_score;
        let mut total = 0.0;
        scores[0].push(sc);
        for e in 0..epochs {
            let epochs_left = g.horizon - e as u32;
            let label = g.label(sc);
            let mut reports = 0u32;
            for sends in 0..g.send_cap {
                let seen = match observation {
                    Observation::TrueReports => reports,
                    Observation::Blind => 0,
                };
                let Action::Send(m) = strategy.action(epochs_left, sc, seen, sends) else { break };
                let msg = &g.messages[m];
                if rng.gen_bool(msg.q[label]) {
                    total += msg.reward;
                }
                if rng.gen_bool(msg.p[label]) {
                    reports += 1;
                }
            }
            histogram[reports as usize] += 1;
            sc = noised_update(sc, u64::from(reports), &g.params, rng);
            scores[e + 1].push(sc);
        }
        sum += total;
        sum_sq += total * total;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let score_quantiles = scores
        .iter_mut()
        .enumerate()
        .map(|(epoch, v)| {
            v.sort_unstable();
            EpochQuantiles { epoch: epoch as u32, p10: quantile(v, 0.1), p50: quantile(v, 0.5), p90: quantile(v, 0.9) }
        })
        .collect();
    SimResult { trials, mean, stderr: (var / n).sqrt(), report_histogram: histogram, score_quantiles }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorekit::{Epsilon, Fixed, ReputationConfig, ScoreParams};
    use crate::stratsim::{optimal_policy, LazyOptimal, MessageType, Policy};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn game(horizon: u32, cap: u32, eps: Epsilon) -> GameSpec {
        let params = ScoreParams::new(1, Fixed::from_int(1), Fixed::from_int(10), eps).unwrap();
        let m = MessageType { reward: 2.0, q: vec![0.5; 4], p: vec![0.5; 4] };
        GameSpec::new(horizon, cap, params, ReputationConfig::default_for(params.ceiling()), Fixed::ZERO, vec![m]).unwrap()
    }

    #[test]
    fn always_wait_earns_nothing() {
        let g = game(3, 2, Epsilon::OFF);
        let res = simulate(&g, &Policy::always_wait(&g), 1000, Observation::TrueReports, &mut StdRng::seed_from_u64(1));
        assert_eq!(res.mean, 0.0);
        assert_eq!(res.stderr, 0.0);
        assert_eq!(res.report_histogram[0], 3000);
    }

    #[test]
    fn final_epoch_mean_matches() {
        let g = game(1, 3, Epsilon::OFF);
        let sol = optimal_policy(&g).unwrap();
        let res = simulate(&g, &sol.policy, 100_000, Observation::TrueReports, &mut StdRng::seed_from_u64(2));
        assert!((res.mean - 3.0).abs() <= 3.0 * res.stderr, "{res:?}");
        assert_eq!(res.report_histogram.iter().sum::<u64>(), 100_000);
    }

    #[test]
    fn noised_games_run_with_either_observation() {
        let g = game(3, 2, Epsilon::new(1.0).unwrap());
        let lazy = LazyOptimal::new(&g);
        for obs in [Observation::TrueReports, Observation::Blind] {
            let res = simulate(&g, &lazy, 2000, obs, &mut StdRng::seed_from_u64(3));
            assert!(res.mean > 0.0);
            assert_eq!(res.score_quantiles.len(), 4);
        }
    }
}
