//! The sender game: a sender with `n` epochs left picks, within each epoch,
//! up to `L` messages to send or stops. Every send earns `q * Reward` in
//! expectation and draws a report with probability `p`; at the end of the
//! epoch the report count updates the score, which sets next epoch's label.

mod game;
mod oracle;
mod simulate;
mod solver;
mod theorem;

use thiserror::Error;

pub use game::{lattice_index, GameSpec, MessageType, SliceKey};
pub use oracle::{brute_force_value, brute_force_with, OracleMode, MAX_POLICIES};
pub use simulate::{simulate, EpochQuantiles, Observation, SimResult};
pub use solver::{
    evaluate_policy, optimal_policy, reachable_slices, state_count, Action, LazyOptimal, OptimalSolution, Policy,
    PolicyEvaluation, Solver, Strategy, MAX_STATES, TIE_TOLERANCE,
};
pub use theorem::{theorem_form_value, verify_theorem_structure, SliceReport, TheoremReport, Violation, SWAP_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StratError {
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("state space of {states} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error("instance too large to enumerate: {policies} policies")]
    InstanceTooLarge { policies: f64 },
    #[error("exact solving requires epsilon = off")]
    RequiresDpOff,
}
