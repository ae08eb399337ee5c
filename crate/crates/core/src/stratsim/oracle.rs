//! Brute-force optimal value by enumerating deterministic policies.
//!
//! Shares no code with the solver beyond the score function. Within-epoch
//! play is evaluated forward, by pushing probability mass down the
//! `(reports, sends)` lattice, instead of by backward induction.

use std::collections::{BTreeMap, BTreeSet};

use super::game::{GameSpec, SliceKey};
use super::StratError;
use crate::scorekit::Fixed;

/// Largest number of policies enumerated in one pass.
pub const MAX_POLICIES: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Every deterministic policy over every reachable decision state.
    Global,
    /// Every within-epoch policy, per slice, fed with the best continuation
    /// of the following epoch.
    PerEpoch,
}

impl OracleMode {
    /// Picks the most exhaustive mode that fits [`MAX_POLICIES`].
    pub fn for_game(g: &GameSpec) -> Result<Self, StratError> {
        let slices = slices_by_level(g).iter().map(BTreeSet::len).sum::<usize>();
        let choices = (g.messages.len() + 1) as f64;
        let per_slice = choices.powi(decision_states(g).len() as i32);
        let global = per_slice.powi(slices as i32);
        if global <= MAX_POLICIES as f64 {
            Ok(OracleMode::Global)
        } else if per_slice <= MAX_POLICIES as f64 {
            Ok(OracleMode::PerEpoch)
        } else {
            Err(StratError::InstanceTooLarge { policies: per_slice })
        }
    }
}

/// Best expected total reward over all deterministic policies (DP off).
pub fn brute_force_value(g: &GameSpec) -> Result<f64, StratError> {
    brute_force_with(g, OracleMode::for_game(g)?)
}

/// As [`brute_force_value`] with an explicit mode. `Global` refuses games
/// over the policy limit.
pub fn brute_force_with(g: &GameSpec, mode: OracleMode) -> Result<f64, StratError> {
    g.validate()?;
    if !g.dp_off() {
        return Err(StratError::RequiresDpOff);
    }
    let ctx = Ctx::new(g);
    match mode {
        OracleMode::Global => ctx.global(),
        OracleMode::PerEpoch => ctx.per_epoch(),
    }
}

/// `(reports, sends)` pairs with `sends < L`, in a fixed order.
fn decision_states(g: &GameSpec) -> Vec<(u32, u32)> {
    (0..g.send_cap).flat_map(|s| (0..=s).map(move |r| (r, s))).collect()
}

/// Entering scores reachable at each depth; index 0 is the first epoch.
fn slices_by_level(g: &GameSpec) -> Vec<BTreeSet<Fixed>> {
    let mut levels = vec![BTreeSet::from([g.initial_score])];
    while levels.len() < g.horizon as usize {
        let mut next = BTreeSet::new();
        for &sc in levels.last().unwrap() {
            for x in 0..=g.send_cap {
                next.insert(g.next_score(sc, x));
            }
        }
        levels.push(next);
    }
    levels
}

struct Ctx<'g> {
    g: &'g GameSpec,
    states: Vec<(u32, u32)>,
    /// Position of `(r, s)` in `states`, row-major by `s`.
    pos: Vec<Vec<usize>>,
    /// Slices ordered from the last epoch backwards.
    order: Vec<SliceKey>,
}

impl<'g> Ctx<'g> {
    fn new(g: &'g GameSpec) -> Self {
        let states = decision_states(g);
        let mut pos = vec![Vec::new(); g.send_cap as usize];
        for (i, &(_, s)) in states.iter().enumerate() {
            pos[s as usize].push(i);
        }
        let levels = slices_by_level(g);
        let mut order = Vec::new();
        for (depth, set) in levels.iter().enumerate().rev() {
            for &score in set {
                order.push(SliceKey { epochs_left: g.horizon - depth as u32, score });
            }
        }
        Ctx { g, states, pos, order }
    }

    /// Value of wait after `x` reports, given the values of later slices.
    fn continuation(&self, key: SliceKey, best: &BTreeMap<SliceKey, f64>) -> Vec<f64> {
        (0..=self.g.send_cap)
            .map(|x| {
                if key.epochs_left == 1 {
                    0.0
                } else {
                    best[&SliceKey { epochs_left: key.epochs_left - 1, score: self.g.next_score(key.score, x) }]
                }
            })
            .collect()
    }

    /// Forward evaluation of one epoch. `choice[i]` is 0 for wait or
    /// `1 + message` at decision state `self.states[i]`.
    fn epoch_value(&self, label: usize, choice: &[usize], cont: &[f64], mass: &mut Vec<f64>) -> f64 {
        let cap = self.g.send_cap as usize;
        mass.clear();
        mass.resize(cap + 1, 0.0);
        let mut next = vec![0.0; cap + 1];
        mass[0] = 1.0;
        let mut total = 0.0;
        for s in 0..cap {
            next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..=s {
                let w = mass[r];
                if w == 0.0 {
                    continue;
                }
                match choice[self.pos[s][r]] {
                    0 => total += w * cont[r],
                    c => {
                        let m = &self.g.messages[c - 1];
                        let p = m.p[label];
                        total += w * m.q[label] * m.reward;
                        next[r + 1] += w * p;
                        next[r] += w * (1.0 - p);
                    }
                }
            }
            std::mem::swap(mass, &mut next);
        }
        for r in 0..=cap {
            total += mass[r] * cont[r];
        }
        total
    }

    fn per_epoch(&self) -> Result<f64, StratError> {
        let radix = self.g.messages.len() + 1;
        let n = self.states.len();
        let count = (radix as f64).powi(n as i32);
        if count > MAX_POLICIES as f64 {
            return Err(StratError::InstanceTooLarge { policies: count });
        }
        let mut best = BTreeMap::new();
        let mut mass = Vec::new();
        for &key in &self.order {
            let cont = self.continuation(key, &best);
            let label = self.g.label(key.score);
            let mut digits = vec![0usize; n];
            let mut top = f64::NEG_INFINITY;
            loop {
                top = top.max(self.epoch_value(label, &digits, &cont, &mut mass));
                if !odometer(&mut digits, radix) {
                    break;
                }
            }
            best.insert(key, top);
        }
        Ok(best[&self.order[self.order.len() - 1]])
    }

    fn global(&self) -> Result<f64, StratError> {
        let radix = self.g.messages.len() + 1;
        let n = self.states.len();
        let total_digits = n * self.order.len();
        let count = (radix as f64).powi(total_digits as i32);
        if count > MAX_POLICIES as f64 {
            return Err(StratError::InstanceTooLarge { policies: count });
        }
        let labels: Vec<usize> = self.order.iter().map(|k| self.g.label(k.score)).collect();
        let mut digits = vec![0usize; total_digits];
        let mut mass = Vec::new();
        let mut top = f64::NEG_INFINITY;
        loop {
            let mut values = BTreeMap::new();
            for (i, &key) in self.order.iter().enumerate() {
                let cont = self.continuation(key, &values);
                let v = self.epoch_value(labels[i], &digits[i * n..(i + 1) * n], &cont, &mut mass);
                values.insert(key, v);
            }
            top = top.max(values[self.order.last().unwrap()]);
            if !odometer(&mut digits, radix) {
                break;
            }
        }
        Ok(top)
    }
}

/// Advances a mixed-radix counter; false once it wraps to zero.
fn odometer(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorekit::{Epsilon, ReputationConfig, ScoreParams};
    use crate::stratsim::MessageType;

    fn game(horizon: u32, cap: u32, messages: Vec<MessageType>, sc: Fixed) -> GameSpec {
        let params = ScoreParams::new(1, Fixed::from_int(1), Fixed::from_int(10), Epsilon::OFF).unwrap();
        GameSpec::new(horizon, cap, params, ReputationConfig::default_for(params.ceiling()), sc, messages).unwrap()
    }

    fn flat(reward: f64, q: f64, p: f64) -> MessageType {
        MessageType { reward, q: vec![q; 4], p: vec![p; 4] }
    }

    #[test]
    fn one_send_closed_form() {
        let g = game(1, 1, vec![flat(2.0, 0.5, 0.5), flat(3.0, 0.2, 0.9)], Fixed::ZERO);
        assert_eq!(OracleMode::for_game(&g).unwrap(), OracleMode::Global);
        assert_eq!(brute_force_value(&g).unwrap(), 1.0);
        let g = game(1, 1, vec![flat(0.0, 0.5, 0.5)], Fixed::ZERO);
        assert_eq!(brute_force_value(&g).unwrap(), 0.0);
    }

    #[test]
    fn modes_agree() {
        let m = MessageType { reward: 1.0, q: vec![0.2, 0.4, 0.6, 0.8], p: vec![0.8, 0.6, 0.4, 0.2] };
        let g = game(2, 2, vec![m], Fixed::from_raw(250));
        assert_eq!(OracleMode::for_game(&g).unwrap(), OracleMode::Global);
        let a = brute_force_with(&g, OracleMode::Global).unwrap();
        let b = brute_force_with(&g, OracleMode::PerEpoch).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn terminal_epoch_sends_to_the_cap() {
        let g = game(1, 3, vec![flat(2.0, 0.5, 0.5)], Fixed::ZERO);
        assert!((brute_force_value(&g).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_huge_instances() {
        let msgs = (0..6).map(|_| flat(1.0, 0.5, 0.5)).collect();
        let g = game(3, 4, msgs, Fixed::ZERO);
        assert!(matches!(brute_force_value(&g), Err(StratError::InstanceTooLarge { .. })));
    }
}
