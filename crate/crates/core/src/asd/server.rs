use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{SigningKey, VerifyingKey};
use parking_lot::RwLock;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, info};

use super::config::ServerSettings;
use super::store::{AccountRecord, EpochRecord, Event, LogRecord, Snapshot, Store, KEYS_FILE};
use crate::scorekit::{noised_update, Fixed, Score};
use crate::tagcrypt::{
    decode_tag, decrypt_sender_id, encrypt_sender_id, sign_tag, verify_tag_signature, Digest32, EndorsementTag,
    IdKey, SenderId,
};

#[derive(Debug, Error)]
pub enum AsdError {
    #[error("authentication failed")]
    Auth,
    #[error("bad request: {0}")]
    Request(String),
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
}

/// Why a report was refused. Rejections never change server state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Decode,
    Signature,
    Decrypt,
    Expired,
    Replay,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Decode => "decode",
            RejectReason::Signature => "signature",
            RejectReason::Decrypt => "decrypt",
            RejectReason::Expired => "expired",
            RejectReason::Replay => "replay",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportOutcome {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub updated: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreView {
    pub sc: Score,
    pub y: String,
}

/// Seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

/// Settable clock for tests and simulations.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock(AtomicU64::new(start))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

/// `K` and `sk`. Neither leaves the server; `vk` is published.
#[derive(Clone)]
pub struct ServerKeys {
    id_key: IdKey,
    signing: SigningKey,
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    id_key: String,
    signing_seed: String,
}

impl ServerKeys {
    pub fn generate() -> Self {
        ServerKeys { id_key: IdKey::generate(&mut OsRng), signing: SigningKey::generate(&mut OsRng) }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    /// Loads `keys.json` from `dir`, creating it on first start.
    pub fn load_or_create(dir: &Path) -> io::Result<Self> {
        let path = dir.join(KEYS_FILE);
        match std::fs::read(&path) {
            Ok(bytes) => {
                let kf: KeyFile = serde_json::from_slice(&bytes).map_err(io::Error::other)?;
                let decode32 = |s: &str| -> io::Result<[u8; 32]> {
                    hex::decode(s)
                        .ok()
                        .and_then(|v| v.try_into().ok())
                        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad key material"))
                };
                Ok(ServerKeys {
                    id_key: IdKey::from_bytes(decode32(&kf.id_key)?),
                    signing: SigningKey::from_bytes(&decode32(&kf.signing_seed)?),
                })
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                std::fs::create_dir_all(dir)?;
                let keys = ServerKeys::generate();
                let kf = KeyFile {
                    id_key: hex::encode(keys.id_key.to_bytes()),
                    signing_seed: hex::encode(keys.signing.to_bytes()),
                };
                let tmp = dir.join("keys.json.tmp");
                std::fs::write(&tmp, serde_json::to_vec(&kf).map_err(io::Error::other)?)?;
                std::fs::File::open(&tmp)?.sync_all()?;
                std::fs::rename(&tmp, &path)?;
                Ok(keys)
            }
            Err(e) => Err(e),
        }
    }
}

impl std::fmt::Debug for ServerKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerKeys").field("vk", &hex::encode(self.verifying_key().as_bytes())).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Account {
    credential_hash: Digest32,
    sc: Score,
    x: u64,
    created_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EpochState {
    index: u64,
    started_at: u64,
    previous_started_at: Option<u64>,
    seen_current: BTreeSet<Digest32>,
    seen_previous: BTreeSet<Digest32>,
}

impl EpochState {
    /// Oldest `tau` still accepted: start of the previous epoch.
    fn window_start(&self) -> u64 {
        self.previous_started_at.unwrap_or(self.started_at)
    }

    fn seen(&self, com: &Digest32) -> bool {
        self.seen_current.contains(com) || self.seen_previous.contains(com)
    }
}

#[derive(Debug, Clone)]
struct State {
    accounts: BTreeMap<SenderId, Account>,
    by_credential: HashMap<Digest32, SenderId>,
    epoch: EpochState,
    last_seq: u64,
    since_snapshot: u64,
}

impl State {
    fn fresh(now: u64) -> Self {
        State {
            accounts: BTreeMap::new(),
            by_credential: HashMap::new(),
            epoch: EpochState {
                index: 0,
                started_at: now,
                previous_started_at: None,
                seen_current: BTreeSet::new(),
                seen_previous: BTreeSet::new(),
            },
            last_seq: 0,
            since_snapshot: 0,
        }
    }

    fn to_snapshot(&self) -> Snapshot {
        let hexset = |s: &BTreeSet<Digest32>| s.iter().map(hex::encode).collect();
        Snapshot {
            last_seq: self.last_seq,
            epoch: EpochRecord {
                index: self.epoch.index,
                started_at: self.epoch.started_at,
                previous_started_at: self.epoch.previous_started_at,
                seen_current: hexset(&self.epoch.seen_current),
                seen_previous: hexset(&self.epoch.seen_previous),
            },
            accounts: self
                .accounts
                .iter()
                .map(|(id, a)| AccountRecord {
                    id: hex::encode(id),
                    credential_hash: hex::encode(a.credential_hash),
                    sc: a.sc,
                    x: a.x,
                    created_epoch: a.created_epoch,
                })
                .collect(),
        }
    }

    fn from_snapshot(s: &Snapshot) -> io::Result<Self> {
        let mut state = State {
            accounts: BTreeMap::new(),
            by_credential: HashMap::new(),
            epoch: EpochState {
                index: s.epoch.index,
                started_at: s.epoch.started_at,
                previous_started_at: s.epoch.previous_started_at,
                seen_current: s.epoch.seen_current.iter().map(|h| parse_hex(h)).collect::<io::Result<_>>()?,
                seen_previous: s.epoch.seen_previous.iter().map(|h| parse_hex(h)).collect::<io::Result<_>>()?,
            },
            last_seq: s.last_seq,
            since_snapshot: 0,
        };
        for a in &s.accounts {
            let id: SenderId = parse_hex(&a.id)?;
            let credential_hash: Digest32 = parse_hex(&a.credential_hash)?;
            state.by_credential.insert(credential_hash, id);
            state.accounts.insert(id, Account { credential_hash, sc: a.sc, x: a.x, created_epoch: a.created_epoch });
        }
        Ok(state)
    }

    fn apply(&mut self, rec: &LogRecord) -> io::Result<()> {
        match &rec.event {
            Event::Register { id, credential_hash, epoch } => {
                let id: SenderId = parse_hex(id)?;
                let credential_hash: Digest32 = parse_hex(credential_hash)?;
                self.by_credential.insert(credential_hash, id);
                self.accounts.insert(id, Account { credential_hash, sc: Fixed::ZERO, x: 0, created_epoch: *epoch });
            }
            Event::Report { id, com } => {
                let id: SenderId = parse_hex(id)?;
                let com: Digest32 = parse_hex(com)?;
                let acct = self
                    .accounts
                    .get_mut(&id)
                    .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "report for unknown account"))?;
                acct.x += 1;
                self.epoch.seen_current.insert(com);
            }
        }
        self.last_seq = rec.seq;
        self.since_snapshot += 1;
        Ok(())
    }
}

fn parse_hex<const N: usize>(s: &str) -> io::Result<[u8; N]> {
    hex::decode(s)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad hex field {s:?}")))
}

fn credential_hash(credential: &str) -> Digest32 {
    let mut h = Sha256::new();
    h.update(b"sandi-cred-v1");
    h.update(credential.as_bytes());
    h.finalize().into()
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

struct Inner {
    state: State,
    store: Store,
}

/// The accountability server.
///
/// Issuance takes a shared lock; report ingestion, registration and the
/// epoch sweep take the exclusive lock, so a sweep never interleaves with
/// counter updates.
pub struct AccountabilityServer {
    settings: ServerSettings,
    keys: ServerKeys,
    clock: Box<dyn Clock>,
    inner: RwLock<Inner>,
}

impl AccountabilityServer {
    /// Opens the server over `store`, recovering any persisted state.
    pub fn open(settings: ServerSettings, keys: ServerKeys, mut store: Store, clock: Box<dyn Clock>) -> io::Result<Self> {
        let state = match store.recover()? {
            Some((snap, records)) => {
                let mut state = State::from_snapshot(&snap)?;
                for rec in &records {
                    state.apply(rec)?;
                }
                info!(epoch = state.epoch.index, replayed = records.len(), accounts = state.accounts.len(), "recovered state");
                state
            }
            None => State::fresh(clock.now()),
        };
        store.write_snapshot(&state.to_snapshot())?;
        let mut state = state;
        state.since_snapshot = 0;
        Ok(AccountabilityServer { settings, keys, clock, inner: RwLock::new(Inner { state, store }) })
    }

    pub fn in_memory(settings: ServerSettings) -> Self {
        Self::open(settings, ServerKeys::generate(), Store::memory(), Box::new(SystemClock))
            .expect("memory store cannot fail")
    }

    /// Opens (or creates) a server rooted at `dir`, keys included.
    pub fn open_dir(settings: ServerSettings, dir: &Path, clock: Box<dyn Clock>) -> io::Result<Self> {
        let keys = ServerKeys::load_or_create(dir)?;
        Self::open(settings, keys, Store::open(dir)?, clock)
    }

    pub fn settings(&self) -> &ServerSettings {
        &self.settings
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.keys.verifying_key()
    }

    pub fn epoch_index(&self) -> u64 {
        self.inner.read().state.epoch.index
    }

    /// Start of the current epoch, seconds since the Unix epoch.
    pub fn epoch_started_at(&self) -> u64 {
        self.inner.read().state.epoch.started_at
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Full in-memory state in its persisted form.
    pub fn snapshot(&self) -> Snapshot {
        self.inner.read().state.to_snapshot()
    }

    fn append_locked(inner: &mut Inner, event: Event, snapshot_every: u64) -> io::Result<()> {
        let rec = LogRecord { seq: inner.state.last_seq + 1, event };
        inner.store.append(&rec)?;
        inner.state.apply(&rec).expect("locally built record applies");
        if inner.state.since_snapshot >= snapshot_every {
            let snap = inner.state.to_snapshot();
            inner.store.write_snapshot(&snap)?;
            inner.state.since_snapshot = 0;
        }
        Ok(())
    }

    /// Creates an account and returns its bearer credential.
    pub fn register(&self, registration_token: &str) -> Result<String, AsdError> {
        if !constant_time_eq(registration_token.as_bytes(), self.settings.registration_token.as_bytes()) {
            return Err(AsdError::Auth);
        }
        let mut secret = [0u8; 32];
        OsRng.fill_bytes(&mut secret);
        let credential = URL_SAFE_NO_PAD.encode(secret);
        let cred_hash = credential_hash(&credential);
        let mut guard = self.inner.write();
        let id = loop {
            let mut id = [0u8; 16];
            OsRng.fill_bytes(&mut id);
            if !guard.state.accounts.contains_key(&id) {
                break id;
            }
        };
        let epoch = guard.state.epoch.index;
        let event = Event::Register { id: hex::encode(id), credential_hash: hex::encode(cred_hash), epoch };
        Self::append_locked(&mut guard, event, self.settings.snapshot_every)?;
        debug!("registered sender");
        Ok(credential)
    }

    fn account_id(state: &State, credential: &str) -> Result<SenderId, AsdError> {
        state.by_credential.get(&credential_hash(credential)).copied().ok_or(AsdError::Auth)
    }

    /// Endorses commitment `com` for the authenticated sender.
    pub fn issue_tag(&self, credential: &str, com: &[u8]) -> Result<EndorsementTag, AsdError> {
        let (id, y, tau) = {
            let guard = self.inner.read();
            let id = Self::account_id(&guard.state, credential)?;
            let sc = guard.state.accounts[&id].sc;
            let y = self.settings.reputation.index(sc) as u8;
            // Issuance time never precedes the current epoch's start.
            let tau = self.clock.now().max(guard.state.epoch.started_at);
            (id, y, tau)
        };
        let com: Digest32 = com
            .try_into()
            .map_err(|_| AsdError::Request(format!("commitment must be 32 bytes, got {}", com.len())))?;
        let mut rng = rand::thread_rng();
        let ct = encrypt_sender_id(&self.keys.id_key, &id, &mut rng);
        let sigma = sign_tag(&self.keys.signing, &com, tau, y, &ct);
        Ok(EndorsementTag { com, tau, y, ct, sigma })
    }

    /// Verifies and counts a report. Any rejection leaves state untouched.
    pub fn ingest_report(&self, tag_bytes: &[u8]) -> Result<ReportOutcome, AsdError> {
        use ReportOutcome::Rejected;
        let Ok(tag) = decode_tag(tag_bytes) else {
            return Ok(Rejected(RejectReason::Decode));
        };
        if !verify_tag_signature(&self.keys.verifying_key(), &tag) {
            return Ok(Rejected(RejectReason::Signature));
        }
        let Ok(id) = decrypt_sender_id(&self.keys.id_key, &tag.ct) else {
            return Ok(Rejected(RejectReason::Decrypt));
        };
        let mut guard = self.inner.write();
        let state = &guard.state;
        if tag.tau < state.epoch.window_start() {
            return Ok(Rejected(RejectReason::Expired));
        }
        if state.epoch.seen(&tag.com) {
            return Ok(Rejected(RejectReason::Replay));
        }
        if !state.accounts.contains_key(&id) {
            return Ok(Rejected(RejectReason::Decrypt));
        }
        let event = Event::Report { id: hex::encode(id), com: hex::encode(tag.com) };
        Self::append_locked(&mut guard, event, self.settings.snapshot_every)?;
        Ok(ReportOutcome::Accepted)
    }

    pub fn advance_epoch(&self, admin_token: &str) -> Result<EpochSummary, AsdError> {
        if !constant_time_eq(admin_token.as_bytes(), self.settings.admin_token.as_bytes()) {
            return Err(AsdError::Auth);
        }
        self.advance_epoch_unchecked()
    }

    /// Epoch sweep used by the timer. Persists the new state before it becomes visible.
    pub fn advance_epoch_unchecked(&self) -> Result<EpochSummary, AsdError> {
        let mut guard = self.inner.write();
        let mut next = guard.state.clone();
        let mut rng = rand::thread_rng();
        for acct in next.accounts.values_mut() {
            acct.sc = noised_update(acct.sc, acct.x, &self.settings.params, &mut rng);
            acct.x = 0;
        }
        let ep = &mut next.epoch;
        ep.index += 1;
        ep.previous_started_at = Some(ep.started_at);
        // Strictly later whole second, so tags from the old epoch sort before it.
        ep.started_at = self.clock.now().max(ep.started_at) + 1;
        ep.seen_previous = std::mem::take(&mut ep.seen_current);
        next.since_snapshot = 0;
        guard.store.write_snapshot(&next.to_snapshot())?;
        let summary = EpochSummary { epoch: next.epoch.index, updated: next.accounts.len() as u64 };
        guard.state = next;
        info!(epoch = summary.epoch, updated = summary.updated, "epoch advanced");
        Ok(summary)
    }

    pub fn get_score(&self, credential: &str) -> Result<ScoreView, AsdError> {
        let guard = self.inner.read();
        let id = Self::account_id(&guard.state, credential)?;
        let sc = guard.state.accounts[&id].sc;
        Ok(ScoreView { sc, y: self.settings.reputation.labels()[self.settings.reputation.index(sc)].clone() })
    }

    /// Report counter of the current epoch for the authenticated account.
    pub fn pending_reports(&self, credential: &str) -> Result<u64, AsdError> {
        let guard = self.inner.read();
        let id = Self::account_id(&guard.state, credential)?;
        Ok(guard.state.accounts[&id].x)
    }
}
