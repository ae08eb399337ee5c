//! Score function, reputation map and the noised epoch update.
//!
//! Scores live on a fixed-point grid with denominator [`SCALE`] so that
//! repeated epoch updates are exact.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Fixed-point denominator shared by every score, threshold and rate.
pub const SCALE: i64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("tolerance k must be at least 1")]
    Tolerance,
    #[error("recovery rate b must lie in (0, 1]")]
    Recovery,
    #[error("score ceiling M must be at least 1")]
    Ceiling,
    #[error("epsilon must be a positive finite number, got {0}")]
    Epsilon(f64),
    #[error("reputation config needs at least two labels and one threshold per gap")]
    LabelCount,
    #[error("reputation thresholds must be strictly increasing")]
    Thresholds,
    #[error("invalid fixed-point value {0:?}")]
    Parse(String),
}

/// Signed fixed-point number with denominator [`SCALE`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);

    pub const fn from_raw(raw: i64) -> Self {
        Fixed(raw)
    }

    pub const fn from_int(v: i64) -> Self {
        Fixed(v * SCALE)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    /// Converts a float that sits exactly on the grid (within 1e-9).
    pub fn from_f64(v: f64) -> Result<Self, ScoreError> {
        let scaled = v * SCALE as f64;
        let rounded = scaled.round();
        if !v.is_finite() || (scaled - rounded).abs() > 1e-6 || rounded.abs() > 9.0e15 {
            return Err(ScoreError::Parse(v.to_string()));
        }
        Ok(Fixed(rounded as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let scale = SCALE as u64;
        write!(f, "{sign}{}.{:02}", abs / scale, abs % scale)
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Fixed {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScoreError::Parse(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let int: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| err())? };
        let digits = SCALE.ilog10() as usize;
        let trimmed = frac_part.trim_end_matches('0');
        if trimmed.len() > digits {
            return Err(err());
        }
        let frac: i64 = if trimmed.is_empty() {
            0
        } else {
            trimmed.parse::<i64>().map_err(|_| err())? * 10_i64.pow((digits - trimmed.len()) as u32)
        };
        let raw = int.checked_mul(SCALE).and_then(|v| v.checked_add(frac)).ok_or_else(err)?;
        Ok(Fixed(if neg { -raw } else { raw }))
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => v.checked_mul(SCALE).map(Fixed).ok_or_else(|| serde::de::Error::custom("fixed-point overflow")),
            Repr::Float(v) => Fixed::from_f64(v).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A sender's score. Bounded above by the ceiling `M`, unbounded below.
pub type Score = Fixed;

/// DP parameter: `None` disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Epsilon(Option<f64>);

impl Epsilon {
    pub const OFF: Epsilon = Epsilon(None);

    pub fn new(eps: f64) -> Result<Self, ScoreError> {
        if eps.is_finite() && eps > 0.0 {
            Ok(Epsilon(Some(eps)))
        } else {
            Err(ScoreError::Epsilon(eps))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    pub fn is_off(self) -> bool {
        self.0.is_none()
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("off"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Epsilon::new(v).map_err(serde::de::Error::custom),
            Repr::Text(t) if t.eq_ignore_ascii_case("off") => Ok(Epsilon::OFF),
            Repr::Text(t) => {
                let v: f64 = t.parse().map_err(|_| serde::de::Error::custom(format!("bad epsilon {t:?}")))?;
                Epsilon::new(v).map_err(serde::de::Error::custom)
            }
        }
    }
}

/// Parameters `(k, b, M)` of the score function plus the DP setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ScoreParams {
    k: u32,
    b: Fixed,
    ceiling: Fixed,
    epsilon: Epsilon,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    k: u32,
    b: Fixed,
    #[serde(rename = "M")]
    ceiling: Fixed,
    #[serde(default)]
    epsilon: Epsilon,
}

impl TryFrom<RawParams> for ScoreParams {
    type Error = ScoreError;
    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        ScoreParams::new(r.k, r.b, r.ceiling, r.epsilon)
    }
}

impl From<ScoreParams> for RawParams {
    fn from(p: ScoreParams) -> Self {
        RawParams { k: p.k, b: p.b, ceiling: p.ceiling, epsilon: p.epsilon }
    }
}

impl ScoreParams {
    pub fn new(k: u32, b: Fixed, ceiling: Fixed, epsilon: Epsilon) -> Result<Self, ScoreError> {
        if k < 1 {
            return Err(ScoreError::Tolerance);
        }
        if b.raw() <= 0 || b.raw() > SCALE {
            return Err(ScoreError::Recovery);
        }
        if ceiling.raw() < SCALE {
            return Err(ScoreError::Ceiling);
        }
        Ok(ScoreParams { k, b, ceiling, epsilon })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn b(&self) -> Fixed {
        self.b
    }

    pub fn ceiling(&self) -> Fixed {
        self.ceiling
    }

    pub fn epsilon(&self) -> Epsilon {
        self.epsilon
    }

    pub fn with_epsilon(mut self, epsilon: Epsilon) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// Ordered labels and the inclusive lower-bound cut points between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReputation", into = "RawReputation")]
pub struct ReputationConfig {
    labels: Vec<String>,
    thresholds: Vec<Fixed>,
}

#[derive(Serialize, Deserialize)]
struct RawReputation {
    labels: Vec<String>,
    thresholds: Vec<Fixed>,
}

impl TryFrom<RawReputation> for ReputationConfig {
    type Error = ScoreError;
    fn try_from(r: RawReputation) -> Result<Self, Self::Error> {
        ReputationConfig::new(r.labels, r.thresholds)
    }
}

impl From<ReputationConfig> for RawReputation {
    fn from(c: ReputationConfig) -> Self {
        RawReputation { labels: c.labels, thresholds: c.thresholds }
    }
}

impl ReputationConfig {
    pub fn new(labels: Vec<String>, thresholds: Vec<Fixed>) -> Result<Self, ScoreError> {
        if labels.len() < 2 || thresholds.len() + 1 != labels.len() {
            return Err(ScoreError::LabelCount);
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScoreError::Thresholds);
        }
        Ok(ReputationConfig { labels, thresholds })
    }

    /// `low < medium < high < very high` with cuts at `0`, `M/4` and `3M/4`.
    pub fn default_for(ceiling: Fixed) -> Self {
        let m = ceiling.raw();
        ReputationConfig {
            labels: ["low", "medium", "high", "very high"].map(String::from).to_vec(),
            thresholds: vec![Fixed::ZERO, Fixed::from_raw(m / 4), Fixed::from_raw(3 * m / 4)],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn thresholds(&self) -> &[Fixed] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label index: the number of thresholds at or below `sc`.
    pub fn index(&self, sc: Score) -> usize {
        self.thresholds.partition_point(|t| *t <= sc)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

/// The epoch score function.
///
/// * `x >= k`: `sc - x + k`
/// * `x < k`, `sc >= 0`: `min(sc + b, M)`
/// * `x < k`, `sc < 0`: `min(sc - x + k, 0)`
pub fn update_score(sc: Score, x: u64, p: &ScoreParams) -> Score {
    let k = u64::from(p.k);
    let shifted = || {
        let delta = (x as i128 - k as i128) * SCALE as i128;
        let v = (sc.raw() as i128 - delta).clamp(i64::MIN as i128, i64::MAX as i128);
        Fixed(v as i64)
    };
    if x >= k {
        shifted()
    } else if sc.raw() >= 0 {
        Fixed((sc.raw() + p.b.raw()).min(p.ceiling.raw()))
    } else {
        shifted().min(Fixed::ZERO)
    }
}

pub fn reputation<'a>(sc: Score, cfg: &'a ReputationConfig) -> &'a str {
    &cfg.labels[cfg.index(sc)]
}

/// Two-sided geometric noise with `P[N = v] ∝ exp(-epsilon |v|)`.
///
/// Drawn as the difference of two i.i.d. geometric variables with success
/// probability `1 - exp(-epsilon)`.
pub fn sample_report_noise<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> Result<i64, ScoreError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ScoreError::Epsilon(epsilon));
    }
    let success = -(-epsilon).exp_m1();
    let geo = Geometric::new(success).map_err(|_| ScoreError::Epsilon(epsilon))?;
    let a = geo.sample(rng) as i64;
    let b = geo.sample(rng) as i64;
    Ok(a - b)
}

/// Epoch update with the report count perturbed by two-sided geometric noise.
/// Negative noised counts are clamped to zero.
pub fn noised_update<R: Rng + ?Sized>(sc: Score, x: u64, p: &ScoreParams, rng: &mut R) -> Score {
    match p.epsilon.value() {
        None => update_score(sc, x, p),
        Some(eps) => {
            let noise = sample_report_noise(eps, rng).expect("epsilon validated at construction");
            let noisy = (x as i64).saturating_add(noise).max(0) as u64;
            update_score(sc, noisy, p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand::rngs::StdRng;

    fn fx(s: &str) -> Fixed {
        s.parse().unwrap()
    }

    fn params(k: u32, b: &str, m: &str) -> ScoreParams {
        ScoreParams::new(k, fx(b), fx(m), Epsilon::OFF).unwrap()
    }

    #[test]
    fn eq1_examples() {
        assert_eq!(update_score(fx("50"), 5, &params(2, "1", "100")), fx("47"));
        assert_eq!(update_score(fx("100"), 0, &params(2, "1", "100")), fx("100"));
        assert_eq!(update_score(fx("-0.5"), 0, &params(1, "0.5", "10")), fx("0"));
        assert_eq!(update_score(fx("-4"), 1, &params(2, "1", "100")), fx("-3"));
    }

    #[test]
    fn reputation_examples() {
        let cfg = ReputationConfig::default_for(fx("100"));
        assert_eq!(reputation(fx("100"), &cfg), "very high");
        assert_eq!(reputation(fx("25"), &cfg), "high");
        assert_eq!(reputation(fx("-10"), &cfg), "low");
        assert_eq!(reputation(Fixed::ZERO, &cfg), "medium");
        assert_eq!(reputation(fx("24.99"), &cfg), "medium");
    }

    #[test]
    fn fixed_parse_and_display() {
        assert_eq!(fx("-2").to_string(), "-2.00");
        assert_eq!(fx("0.5").raw(), 50);
        assert_eq!(fx("-0.05").raw(), -5);
        assert_eq!(fx(".25").raw(), 25);
        assert_eq!(fx("3.10").raw(), 310);
        assert!("0.125".parse::<Fixed>().is_err());
        assert!("abc".parse::<Fixed>().is_err());
        assert!("-".parse::<Fixed>().is_err());
        assert_eq!(Fixed::from_f64(0.25).unwrap().raw(), 25);
        assert!(Fixed::from_f64(0.001).is_err());
        let json: Fixed = serde_json::from_str("\"-1.5\"").unwrap();
        assert_eq!(json.raw(), -150);
        let json: Fixed = serde_json::from_str("7").unwrap();
        assert_eq!(json.raw(), 700);
    }

    #[test]
    fn params_validation() {
        assert_eq!(ScoreParams::new(0, fx("1"), fx("10"), Epsilon::OFF), Err(ScoreError::Tolerance));
        assert_eq!(ScoreParams::new(1, fx("0"), fx("10"), Epsilon::OFF), Err(ScoreError::Recovery));
        assert_eq!(ScoreParams::new(1, fx("1.01"), fx("10"), Epsilon::OFF), Err(ScoreError::Recovery));
        assert_eq!(ScoreParams::new(1, fx("1"), fx("0.5"), Epsilon::OFF), Err(ScoreError::Ceiling));
        assert!(Epsilon::new(0.0).is_err());
        assert!(Epsilon::new(-1.0).is_err());
        assert!(Epsilon::new(f64::NAN).is_err());
        let p: ScoreParams = serde_json::from_str(r#"{"k":2,"b":0.5,"M":10,"epsilon":"off"}"#).unwrap();
        assert_eq!(p, params(2, "0.5", "10"));
        assert!(serde_json::from_str::<ScoreParams>(r#"{"k":0,"b":0.5,"M":10}"#).is_err());
    }

    #[test]
    fn reputation_validation() {
        let labels = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        assert_eq!(ReputationConfig::new(labels(1), vec![]), Err(ScoreError::LabelCount));
        assert_eq!(ReputationConfig::new(labels(3), vec![fx("1")]), Err(ScoreError::LabelCount));
        assert_eq!(ReputationConfig::new(labels(3), vec![fx("1"), fx("1")]), Err(ScoreError::Thresholds));
        assert!(ReputationConfig::new(labels(3), vec![fx("1"), fx("2")]).is_ok());
    }

    #[test]
    fn noise_rejects_bad_epsilon() {
        let mut rng = StdRng::seed_from_u64(1);
        assert!(sample_report_noise(0.0, &mut rng).is_err());
        assert!(sample_report_noise(-0.3, &mut rng).is_err());
    }

    #[test]
    fn noised_update_off_is_exact() {
        let mut rng = StdRng::seed_from_u64(7);
        assert_eq!(noised_update(fx("5"), 3, &params(1, "1", "100"), &mut rng), fx("3"));
    }

    #[test]
    fn noised_update_respects_ceiling() {
        let p = params(2, "1", "10").with_epsilon(Epsilon::new(std::f64::consts::LN_2).unwrap());
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..10_000 {
            assert!(noised_update(p.ceiling(), 0, &p, &mut rng) <= p.ceiling());
        }
    }

    #[test]
    fn recovery_ladder() {
        let p = params(1, "0.5", "10");
        let mut sc = fx("-5");
        let mut hit_zero = None;
        let mut hit_ceiling = None;
        for epoch in 1..=40 {
            sc = update_score(sc, 0, &p);
            if sc == Fixed::ZERO && hit_zero.is_none() {
                hit_zero = Some(epoch);
            }
            if sc == p.ceiling() && hit_ceiling.is_none() {
                hit_ceiling = Some(epoch);
            }
        }
        assert_eq!(hit_zero, Some(5));
        assert_eq!(hit_ceiling, Some(25));
    }
}
