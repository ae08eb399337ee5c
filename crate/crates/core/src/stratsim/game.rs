use serde::{Deserialize, Serialize};

use crate::scorekit::{update_score, Fixed, ReputationConfig, Score, ScoreParams};

use super::StratError;

/// One kind of message a sender can choose to send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageType {
    pub reward: f64,
    /// Engagement probability per reputation label, lowest label first.
    pub q: Vec<f64>,
    /// Report probability per reputation label, lowest label first.
    pub p: Vec<f64>,
}

impl MessageType {
    pub fn expected_reward(&self, label: usize) -> f64 {
        self.q[label] * self.reward
    }

    /// `(q / p) * Reward` at `label`.
    pub fn ratio(&self, label: usize) -> f64 {
        self.q[label] / self.p[label] * self.reward
    }
}

/// The finite-horizon sender game.
///
/// JSON form:
///
/// ```json
/// {
///   "horizon": 2,
///   "send_cap": 2,
///   "params": {"k": 1, "b": 1, "M": 10, "epsilon": "off"},
///   "reputation": {"labels": ["low", "medium", "high", "very high"], "thresholds": [0, 2.5, 7.5]},
///   "initial_score": 2.5,
///   "messages": [{"reward": 1.0, "q": [0.2, 0.4, 0.6, 0.8], "p": [0.8, 0.6, 0.4, 0.2]}]
/// }
/// ```
///
/// `reputation` defaults to the four-label config for `M`; `initial_score`
/// defaults to 0. `params.epsilon` selects the noised epoch update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGame", into = "RawGame")]
pub struct GameSpec {
    pub horizon: u32,
    pub send_cap: u32,
    pub params: ScoreParams,
    pub reputation: ReputationConfig,
    pub initial_score: Score,
    pub messages: Vec<MessageType>,
}

#[derive(Serialize, Deserialize)]
struct RawGame {
    horizon: u32,
    send_cap: u32,
    params: ScoreParams,
    #[serde(default)]
    reputation: Option<ReputationConfig>,
    #[serde(default)]
    initial_score: Score,
    messages: Vec<MessageType>,
}

impl TryFrom<RawGame> for GameSpec {
    type Error = StratError;
    fn try_from(r: RawGame) -> Result<Self, Self::Error> {
        let reputation = r.reputation.unwrap_or_else(|| ReputationConfig::default_for(r.params.ceiling()));
        GameSpec::new(r.horizon, r.send_cap, r.params, reputation, r.initial_score, r.messages)
    }
}

impl From<GameSpec> for RawGame {
    fn from(g: GameSpec) -> Self {
        RawGame {
            horizon: g.horizon,
            send_cap: g.send_cap,
            params: g.params,
            reputation: Some(g.reputation),
            initial_score: g.initial_score,
            messages: g.messages,
        }
    }
}

fn check_prob(v: f64, what: &str) -> Result<(), StratError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(StratError::InvalidGame(format!("{what} probability {v} outside [0, 1]")))
    }
}

impl GameSpec {
    pub fn new(
        horizon: u32,
        send_cap: u32,
        params: ScoreParams,
        reputation: ReputationConfig,
        initial_score: Score,
        messages: Vec<MessageType>,
    ) -> Result<Self, StratError> {
        let g = GameSpec { horizon, send_cap, params, reputation, initial_score, messages };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, StratError> {
        serde_json::from_str(text).map_err(|e| StratError::InvalidGame(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("game spec serializes")
    }

    pub fn dp_off(&self) -> bool {
        self.params.epsilon().is_off()
    }

    pub fn validate(&self) -> Result<(), StratError> {
        let bad = |m: &str| Err(StratError::InvalidGame(m.to_string()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if self.send_cap < 1 {
            return bad("send_cap must be at least 1");
        }
        if self.messages.is_empty() {
            return bad("at least one message type is required");
        }
        if self.initial_score > self.params.ceiling() {
            return bad("initial score exceeds the ceiling M");
        }
        let labels = self.reputation.len();
        for (i, m) in self.messages.iter().enumerate() {
            if !(m.reward.is_finite() && m.reward >= 0.0) {
                return Err(StratError::InvalidGame(format!("message {i}: reward must be finite and nonnegative")));
            }
            if m.q.len() != labels || m.p.len() != labels {
                return Err(StratError::InvalidGame(format!("message {i}: q and p need one entry per label ({labels})")));
            }
            for (&q, &p) in m.q.iter().zip(&m.p) {
                check_prob(q, "q")?;
                check_prob(p, "p")?;
                if p <= 0.0 {
                    return Err(StratError::InvalidGame(format!("message {i}: report probability must be positive")));
                }
            }
            if m.q.windows(2).any(|w| w[0] > w[1]) {
                return Err(StratError::InvalidGame(format!("message {i}: q must be non-decreasing in label")));
            }
            if m.p.windows(2).any(|w| w[0] < w[1]) {
                return Err(StratError::InvalidGame(format!("message {i}: p must be non-increasing in label")));
            }
        }
        Ok(())
    }

    pub fn label(&self, sc: Score) -> usize {
        self.reputation.index(sc)
    }

    pub fn next_score(&self, sc: Score, reports: u32) -> Score {
        update_score(sc, u64::from(reports), &self.params)
    }

    /// Number of `(reports, sends)` pairs with `reports <= sends <= L`.
    pub fn lattice_len(&self) -> usize {
        let l = self.send_cap as usize;
        (l + 1) * (l + 2) / 2
    }

    /// Number of lattice states where a choice is made (`sends < L`).
    pub fn decision_len(&self) -> usize {
        let l = self.send_cap as usize;
        l * (l + 1) / 2
    }
}

/// Index of `(reports, sends)` in the per-slice lattice; decision states
/// (`sends < L`) occupy the first [`GameSpec::decision_len`] slots.
pub fn lattice_index(reports: u32, sends: u32) -> usize {
    let s = sends as usize;
    s * (s + 1) / 2 + reports as usize
}

/// `(epochs_left, entering score)`: the part of the state fixed for a whole epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub epochs_left: u32,
    pub score: Fixed,
}
