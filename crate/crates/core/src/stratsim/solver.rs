//! Exact backward induction over `(epochs_left, score, reports, sends)`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::game::{lattice_index, GameSpec, SliceKey};
use super::StratError;
use crate::scorekit::{Fixed, Score};

/// Upper bound on solver states.
pub const MAX_STATES: usize = 10_000_000;

/// Values closer than this are treated as ties (resolved toward wait, then
/// toward the lowest message index).
pub const TIE_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Wait,
    Send(usize),
}

/// Anything that picks an action from the observable state.
pub trait Strategy {
    fn action(&self, epochs_left: u32, score: Score, reports: u32, sends: u32) -> Action;
}

/// Deterministic policy table over `(epochs_left, score)` slices. Each slice
/// holds one action per decision state `(reports, sends)` with `sends < L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    send_cap: u32,
    slices: BTreeMap<SliceKey, Vec<Action>>,
}

impl Policy {
    pub fn new(send_cap: u32) -> Self {
        Policy { send_cap, slices: BTreeMap::new() }
    }

    /// Builds a policy over every slice reachable from the game's start.
    pub fn from_fn(g: &GameSpec, mut f: impl FnMut(SliceKey, u32, u32) -> Action) -> Self {
        let mut pol = Policy::new(g.send_cap);
        for key in reachable_slices(g) {
            let mut actions = vec![Action::Wait; g.decision_len()];
            for s in 0..g.send_cap {
                for r in 0..=s {
                    actions[lattice_index(r, s)] = f(key, r, s);
                }
            }
            pol.slices.insert(key, actions);
        }
        pol
    }

    pub fn always_wait(g: &GameSpec) -> Self {
        Self::from_fn(g, |_, _, _| Action::Wait)
    }

    pub fn send_cap(&self) -> u32 {
        self.send_cap
    }

    pub fn insert_slice(&mut self, key: SliceKey, actions: Vec<Action>) {
        self.slices.insert(key, actions);
    }

    pub fn slice(&self, key: &SliceKey) -> Option<&[Action]> {
        self.slices.get(key).map(Vec::as_slice)
    }

    pub fn slices(&self) -> impl Iterator<Item = (&SliceKey, &[Action])> {
        self.slices.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn set(&mut self, key: SliceKey, reports: u32, sends: u32, action: Action) {
        if let Some(s) = self.slices.get_mut(&key) {
            s[lattice_index(reports, sends)] = action;
        }
    }

    /// `epochs_left,score,reports,sends,action` rows, one per decision state.
    pub fn to_csv(&self, g: &GameSpec) -> String {
        let mut out = String::from("epochs_left,score,label,reports,sends,action\n");
        for (key, actions) in &self.slices {
            let label = g.reputation.label(g.label(key.score)).unwrap_or("?");
            for s in 0..self.send_cap {
                for r in 0..=s {
                    let a = match actions[lattice_index(r, s)] {
                        Action::Wait => "wait".to_string(),
                        Action::Send(m) => format!("send:{m}"),
                    };
                    out.push_str(&format!("{},{},{},{},{},{}\n", key.epochs_left, key.score, label, r, s, a));
                }
            }
        }
        out
    }
}

impl Strategy for Policy {
    /// Missing slices and exhausted send budgets map to wait.
    fn action(&self, epochs_left: u32, score: Score, reports: u32, sends: u32) -> Action {
        if sends >= self.send_cap || reports > sends {
            return Action::Wait;
        }
        self.slices
            .get(&SliceKey { epochs_left, score })
            .map(|a| a[lattice_index(reports, sends)])
            .unwrap_or(Action::Wait)
    }
}

/// Slices reachable from the start under some policy, highest `epochs_left` first.
pub fn reachable_slices(g: &GameSpec) -> Vec<SliceKey> {
    let mut levels: Vec<BTreeSet<Fixed>> = vec![BTreeSet::from([g.initial_score])];
    for _ in 1..g.horizon {
        let prev = levels.last().unwrap();
        let next = prev.iter().flat_map(|&sc| (0..=g.send_cap).map(move |r| (sc, r))).map(|(sc, r)| g.next_score(sc, r)).collect();
        levels.push(next);
    }
    levels
        .iter()
        .enumerate()
        .flat_map(|(depth, set)| set.iter().map(move |&score| SliceKey { epochs_left: g.horizon - depth as u32, score }))
        .collect()
}

#[derive(Debug, Clone)]
struct SolvedSlice {
    value: f64,
    actions: Vec<Action>,
}

/// Memoizing solver; slices are solved on first request.
#[derive(Debug, Clone)]
pub struct Solver<'g> {
    game: &'g GameSpec,
    memo: HashMap<SliceKey, SolvedSlice>,
}

impl<'g> Solver<'g> {
    pub fn new(game: &'g GameSpec) -> Self {
        Solver { game, memo: HashMap::new() }
    }

    /// Optimal expected reward from the start of slice `key`.
    pub fn value(&mut self, key: SliceKey) -> f64 {
        self.solve(key).value
    }

    pub fn action(&mut self, key: SliceKey, reports: u32, sends: u32) -> Action {
        if sends >= self.game.send_cap || reports > sends {
            return Action::Wait;
        }
        self.solve(key).actions[lattice_index(reports, sends)]
    }

    fn solve(&mut self, key: SliceKey) -> &SolvedSlice {
        if !self.memo.contains_key(&key) {
            let g = self.game;
            let waits: Vec<f64> = if key.epochs_left <= 1 {
                vec![0.0; g.send_cap as usize + 1]
            } else {
                (0..=g.send_cap)
                    .map(|r| self.value(SliceKey { epochs_left: key.epochs_left - 1, score: g.next_score(key.score, r) }))
                    .collect()
            };
            let solved = solve_slice(g, key.score, &waits);
            self.memo.insert(key, solved);
        }
        &self.memo[&key]
    }
}

/// Backward induction inside one epoch given the continuation value `waits[r]`
/// of stopping with `r` reports.
fn solve_slice(g: &GameSpec, score: Score, waits: &[f64]) -> SolvedSlice {
    let label = g.label(score);
    let cap = g.send_cap;
    let mut values = vec![0.0; g.lattice_len()];
    let mut actions = vec![Action::Wait; g.decision_len()];
    for r in 0..=cap {
        values[lattice_index(r, cap)] = waits[r as usize];
    }
    for s in (0..cap).rev() {
        for r in 0..=s {
            let mut best = waits[r as usize];
            let mut act = Action::Wait;
            let hit = values[lattice_index(r + 1, s + 1)];
            let miss = values[lattice_index(r, s + 1)];
            for (i, m) in g.messages.iter().enumerate() {
                let p = m.p[label];
                let v = m.expected_reward(label) + p * hit + (1.0 - p) * miss;
                if v > best + TIE_TOLERANCE {
                    best = v;
                    act = Action::Send(i);
                }
            }
            values[lattice_index(r, s)] = best;
            actions[lattice_index(r, s)] = act;
        }
    }
    SolvedSlice { value: values[0], actions }
}

#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub policy: Policy,
    pub value: f64,
    pub slice_values: BTreeMap<SliceKey, f64>,
}

/// Counts solver states for the reachable slices.
pub fn state_count(g: &GameSpec) -> usize {
    reachable_slices(g).len().saturating_mul(g.lattice_len())
}

/// Optimal policy and value for a DP-off game.
pub fn optimal_policy(g: &GameSpec) -> Result<OptimalSolution, StratError> {
    g.validate()?;
    if !g.dp_off() {
        return Err(StratError::RequiresDpOff);
    }
    let states = state_count(g);
    if states > MAX_STATES {
        return Err(StratError::StateSpaceTooLarge { states, limit: MAX_STATES });
    }
    let mut solver = Solver::new(g);
    let root = SliceKey { epochs_left: g.horizon, score: g.initial_score };
    let value = solver.value(root);
    let mut policy = Policy::new(g.send_cap);
    let mut slice_values = BTreeMap::new();
    for (key, solved) in solver.memo {
        slice_values.insert(key, solved.value);
        policy.insert_slice(key, solved.actions);
    }
    Ok(OptimalSolution { policy, value, slice_values })
}

/// Optimal play that solves slices lazily, for rollouts that leave the
/// DP-off reachable set (noised score updates).
pub struct LazyOptimal<'g> {
    solver: RefCell<Solver<'g>>,
}

impl<'g> LazyOptimal<'g> {
    pub fn new(g: &'g GameSpec) -> Self {
        LazyOptimal { solver: RefCell::new(Solver::new(g)) }
    }
}

impl Strategy for LazyOptimal<'_> {
    fn action(&self, epochs_left: u32, score: Score, reports: u32, sends: u32) -> Action {
        self.solver.borrow_mut().action(SliceKey { epochs_left, score }, reports, sends)
    }
}

/// Expected reward of `pol` from every slice it was evaluated on.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub value: f64,
    pub slice_values: BTreeMap<SliceKey, f64>,
}

/// Evaluates one slice of a policy given continuation values, optionally
/// overriding a single decision state.
pub(crate) fn evaluate_slice(
    g: &GameSpec,
    score: Score,
    waits: &[f64],
    action_at: impl Fn(u32, u32) -> Action,
) -> f64 {
    let label = g.label(score);
    let cap = g.send_cap;
    let mut values = vec![0.0; g.lattice_len()];
    for r in 0..=cap {
        values[lattice_index(r, cap)] = waits[r as usize];
    }
    for s in (0..cap).rev() {
        for r in 0..=s {
            values[lattice_index(r, s)] = match action_at(r, s) {
                Action::Wait => waits[r as usize],
                Action::Send(i) => {
                    let m = &g.messages[i];
                    let p = m.p[label];
                    m.expected_reward(label) + p * values[lattice_index(r + 1, s + 1)] + (1.0 - p) * values[lattice_index(r, s + 1)]
                }
            };
        }
    }
    values[0]
}

/// Continuation values `waits[r]` for a slice, from already-evaluated slices.
pub(crate) fn continuation(g: &GameSpec, key: SliceKey, values: &BTreeMap<SliceKey, f64>) -> Vec<f64> {
    (0..=g.send_cap)
        .map(|r| {
            if key.epochs_left <= 1 {
                0.0
            } else {
                let next = SliceKey { epochs_left: key.epochs_left - 1, score: g.next_score(key.score, r) };
                values.get(&next).copied().unwrap_or(0.0)
            }
        })
        .collect()
}

/// Exact expected reward of a deterministic policy (DP off). Slices missing
/// from the table play wait.
pub fn evaluate_policy(g: &GameSpec, pol: &Policy) -> PolicyEvaluation {
    let mut slices = reachable_slices(g);
    slices.sort_by_key(|k| k.epochs_left);
    let mut values = BTreeMap::new();
    for key in slices {
        let waits = continuation(g, key, &values);
        let v = evaluate_slice(g, key.score, &waits, |r, s| pol.action(key.epochs_left, key.score, r, s));
        values.insert(key, v);
    }
    let root = SliceKey { epochs_left: g.horizon, score: g.initial_score };
    PolicyEvaluation { value: values[&root], slice_values: values }
}
