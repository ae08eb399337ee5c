//! Checks that a policy has the report-threshold, best-ratio form.

use std::collections::BTreeMap;

use serde::Serialize;

use super::game::{lattice_index, GameSpec, SliceKey};
use super::solver::{continuation, evaluate_policy, evaluate_slice, reachable_slices, Action, Policy, Strategy};

/// Allowed slice-value change when swapping a send for a best-ratio message.
pub const SWAP_TOLERANCE: f64 = 1e-12;

const RATIO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Actions in the slice are not "send below t reports, wait from t on".
    NotThreshold { slice: SliceKey, reports: u32, sends: u32, action: Action },
    /// A threshold exists but exceeds the tolerance level `k`.
    ThresholdAboveK { slice: SliceKey, threshold: u32, k: u32 },
    /// A send picks a message below the best `(q / p) * Reward` and swapping
    /// in every best-ratio message changes the slice value.
    NotBestRatio { slice: SliceKey, reports: u32, sends: u32, message: usize, best: Vec<usize>, value_change: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub slice: SliceKey,
    pub terminal: bool,
    /// `None` when the slice has no threshold form.
    pub threshold: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub passed: bool,
    pub slices: Vec<SliceReport>,
    pub violations: Vec<Violation>,
}

impl TheoremReport {
    /// Largest threshold over non-terminal slices.
    pub fn max_threshold(&self) -> Option<u32> {
        self.slices.iter().filter(|s| !s.terminal).filter_map(|s| s.threshold).max()
    }

    /// Thresholds in the final epoch, reported without any bound.
    pub fn terminal_thresholds(&self) -> Vec<(SliceKey, Option<u32>)> {
        self.slices.iter().filter(|s| s.terminal).map(|s| (s.slice, s.threshold)).collect()
    }
}

/// Threshold `t` such that the slice sends exactly at decision states with
/// `reports < t`, or the first state breaking that form.
fn threshold(g: &GameSpec, pol: &Policy, key: SliceKey) -> Result<u32, (u32, u32, Action)> {
    let act = |r, s| pol.action(key.epochs_left, key.score, r, s);
    let t = (0..g.send_cap)
        .flat_map(|s| (0..=s).map(move |r| (r, s)))
        .filter(|&(r, s)| act(r, s) == Action::Wait)
        .map(|(r, _)| r)
        .min()
        .unwrap_or(g.send_cap);
    for s in 0..g.send_cap {
        for r in 0..=s {
            let a = act(r, s);
            if (r < t) != matches!(a, Action::Send(_)) {
                return Err((r, s, a));
            }
        }
    }
    Ok(t)
}

fn best_ratio(g: &GameSpec, label: usize) -> Vec<usize> {
    let ratios: Vec<f64> = g.messages.iter().map(|m| m.ratio(label)).collect();
    let top = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..ratios.len()).filter(|&i| ratios[i] >= top - RATIO_TOLERANCE * top.abs().max(1.0)).collect()
}

/// Checks every slice of `pol` against the threshold form (non-terminal
/// slices only) and the best-ratio message choice (all slices).
pub fn verify_theorem_structure(g: &GameSpec, pol: &Policy) -> TheoremReport {
    let k = g.params.k();
    let values: BTreeMap<SliceKey, f64> = evaluate_policy(g, pol).slice_values;
    let mut slices = Vec::new();
    let mut violations = Vec::new();
    for (&key, _) in pol.slices() {
        let terminal = key.epochs_left == 1;
        let t = threshold(g, pol, key);
        if !terminal {
            match t {
                Err((reports, sends, action)) => {
                    violations.push(Violation::NotThreshold { slice: key, reports, sends, action })
                }
                Ok(t) if t > k => violations.push(Violation::ThresholdAboveK { slice: key, threshold: t, k }),
                Ok(_) => {}
            }
        }
        slices.push(SliceReport { slice: key, terminal, threshold: t.ok() });

        let label = g.label(key.score);
        let best = best_ratio(g, label);
        let waits = continuation(g, key, &values);
        let base = values[&key];
        for s in 0..g.send_cap {
            for r in 0..=s {
                let Action::Send(m) = pol.action(key.epochs_left, key.score, r, s) else { continue };
                if best.contains(&m) {
                    continue;
                }
                let change = best
                    .iter()
                    .map(|&b| {
                        let v = evaluate_slice(g, key.score, &waits, |rr, ss| {
                            if (rr, ss) == (r, s) {
                                Action::Send(b)
                            } else {
                                pol.action(key.epochs_left, key.score, rr, ss)
                            }
                        });
                        v - base
                    })
                    .fold(f64::INFINITY, |acc, d| if d.abs() < acc.abs() { d } else { acc });
                if change.abs() > SWAP_TOLERANCE {
                    violations.push(Violation::NotBestRatio {
                        slice: key,
                        reports: r,
                        sends: s,
                        message: m,
                        best: best.clone(),
                        value_change: change,
                    });
                }
            }
        }
    }
    TheoremReport { passed: violations.is_empty(), slices, violations }
}

/// Best expected reward over policies of the checked form: per slice, send
/// best-ratio messages until `t` reports, with `t <= k` except in the final
/// epoch. Comparing it with the optimum separates tie-breaking from a
/// genuine gap.
pub fn theorem_form_value(g: &GameSpec) -> f64 {
    let mut slices = reachable_slices(g);
    slices.sort_by_key(|k| k.epochs_left);
    let lattice = g.lattice_len();
    let mut values: BTreeMap<SliceKey, f64> = BTreeMap::new();
    for key in slices {
        let waits = continuation(g, key, &values);
        let label = g.label(key.score);
        let best = best_ratio(g, label);
        let t_max = if key.epochs_left == 1 { g.send_cap } else { g.params.k().min(g.send_cap) };
        let mut top = waits[0];
        for t in 1..=t_max {
            let mut v = vec![0.0; lattice];
            for s in (0..=g.send_cap).rev() {
                for r in 0..=s {
                    let i = lattice_index(r, s);
                    v[i] = if s == g.send_cap || r >= t {
                        waits[r as usize]
                    } else {
                        best.iter()
                            .map(|&m| {
                                let msg = &g.messages[m];
                                let p = msg.p[label];
                                msg.expected_reward(label)
                                    + p * v[lattice_index(r + 1, s + 1)]
                                    + (1.0 - p) * v[lattice_index(r, s + 1)]
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                }
            }
            top = top.max(v[0]);
        }
        values.insert(key, top);
    }
    values[&SliceKey { epochs_left: g.horizon, score: g.initial_score }]
}
