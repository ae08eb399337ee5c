//! Accountability server: registry, tag issuance, report ingestion, epochs.

pub mod config;
pub mod http;
mod server;
pub mod store;

pub use config::{ConfigError, ServerConfig, ServerSettings, ADMIN_TOKEN_ENV, REGISTRATION_TOKEN_ENV};
pub use http::{router, serve, BackgroundServer};
pub use server::{
    AccountabilityServer, AsdError, Clock, EpochSummary, ManualClock, RejectReason, ReportOutcome, ScoreView,
    ServerKeys, SystemClock,
};
pub use store::{Snapshot, Store};
