//! Durable server state: an append-only event log plus a full snapshot.
//!
//! Every accepted mutation is appended to `events.log` and fsynced before it
//! is acknowledged. Snapshots are written to a temporary file, fsynced and
//! renamed over `snapshot.json`; the log is truncated afterwards. Each log
//! record carries a sequence number and recovery skips records already
//! covered by the snapshot, so a crash between rename and truncation is
//! harmless. A torn final log line is discarded.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scorekit::Fixed;

const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_TMP: &str = "snapshot.json.tmp";
const LOG_FILE: &str = "events.log";
pub(crate) const KEYS_FILE: &str = "keys.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub id: String,
    pub credential_hash: String,
    pub sc: Fixed,
    pub x: u64,
    pub created_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub index: u64,
    pub started_at: u64,
    pub previous_started_at: Option<u64>,
    pub seen_current: Vec<String>,
    pub seen_previous: Vec<String>,
}

/// Serialized form of the whole server state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_seq: u64,
    pub epoch: EpochRecord,
    pub accounts: Vec<AccountRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    Register { id: String, credential_hash: String, epoch: u64 },
    Report { id: String, com: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug)]
pub struct DiskStore {
    dir: PathBuf,
    log: File,
}

/// Where the server keeps its state.
#[derive(Debug)]
pub enum Store {
    Memory,
    Disk(DiskStore),
}

impl Store {
    pub fn memory() -> Self {
        Store::Memory
    }

    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Store::Disk(DiskStore::open(dir.as_ref())?))
    }

    pub fn data_dir(&self) -> Option<&Path> {
        match self {
            Store::Memory => None,
            Store::Disk(d) => Some(&d.dir),
        }
    }

    pub fn append(&mut self, rec: &LogRecord) -> io::Result<()> {
        match self {
            Store::Memory => Ok(()),
            Store::Disk(d) => d.append(rec),
        }
    }

    pub fn write_snapshot(&mut self, snap: &Snapshot) -> io::Result<()> {
        match self {
            Store::Memory => Ok(()),
            Store::Disk(d) => d.write_snapshot(snap),
        }
    }

    /// Latest snapshot plus the log records not yet folded into it.
    pub fn recover(&mut self) -> io::Result<Option<(Snapshot, Vec<LogRecord>)>> {
        match self {
            Store::Memory => Ok(None),
            Store::Disk(d) => d.recover(),
        }
    }
}

impl DiskStore {
    fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
        Ok(DiskStore { dir: dir.to_path_buf(), log })
    }

    fn append(&mut self, rec: &LogRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(rec).map_err(io::Error::other)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()
    }

    fn write_snapshot(&mut self, snap: &Snapshot) -> io::Result<()> {
        let tmp = self.dir.join(SNAPSHOT_TMP);
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&serde_json::to_vec_pretty(snap).map_err(io::Error::other)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        sync_dir(&self.dir)?;
        self.log.set_len(0)?;
        self.log.sync_all()
    }

    fn recover(&mut self) -> io::Result<Option<(Snapshot, Vec<LogRecord>)>> {
        let snap_path = self.dir.join(SNAPSHOT_FILE);
        let snapshot: Option<Snapshot> = match fs::read(&snap_path) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(io::Error::other)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        let log_path = self.dir.join(LOG_FILE);
        let file_len = fs::metadata(&log_path)?.len();
        let reader = BufReader::new(File::open(&log_path)?);
        let mut records = Vec::new();
        let mut good_len = 0u64;
        for line in reader.split(b'\n') {
            let line = line?;
            let end = good_len + line.len() as u64;
            // An unterminated or unparsable line is a torn tail from a crash mid-append.
            if end >= file_len {
                break;
            }
            match serde_json::from_slice::<LogRecord>(&line) {
                Ok(rec) => {
                    good_len = end + 1;
                    records.push(rec);
                }
                Err(_) => break,
            }
        }
        if good_len != file_len {
            self.log.set_len(good_len)?;
            self.log.sync_all()?;
        }
        match snapshot {
            None if records.is_empty() => Ok(None),
            None => Err(io::Error::new(io::ErrorKind::InvalidData, "event log present without a snapshot")),
            Some(s) => {
                records.retain(|r| r.seq > s.last_seq);
                Ok(Some((s, records)))
            }
        }
    }
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(last_seq: u64) -> Snapshot {
        Snapshot {
            last_seq,
            epoch: EpochRecord { index: 0, started_at: 10, previous_started_at: None, seen_current: vec![], seen_previous: vec![] },
            accounts: vec![],
        }
    }

    fn report(seq: u64) -> LogRecord {
        LogRecord { seq, event: Event::Report { id: "00".into(), com: format!("{seq:02x}") } }
    }

    #[test]
    fn recovers_snapshot_and_tail() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        assert!(store.recover().unwrap().is_none());
        store.write_snapshot(&snap(0)).unwrap();
        store.append(&report(1)).unwrap();
        store.append(&report(2)).unwrap();
        drop(store);
        let mut store = Store::open(dir.path()).unwrap();
        let (s, recs) = store.recover().unwrap().unwrap();
        assert_eq!(s, snap(0));
        assert_eq!(recs, vec![report(1), report(2)]);
    }

    #[test]
    fn skips_records_covered_by_snapshot_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.write_snapshot(&snap(0)).unwrap();
        store.append(&report(1)).unwrap();
        store.append(&report(2)).unwrap();
        // Snapshot renamed but log not yet truncated.
        fs::write(dir.path().join(SNAPSHOT_FILE), serde_json::to_vec(&snap(1)).unwrap()).unwrap();
        let mut f = OpenOptions::new().append(true).open(dir.path().join(LOG_FILE)).unwrap();
        f.write_all(b"{\"seq\":3,\"ev\":\"rep").unwrap();
        drop(f);
        drop(store);
        let mut store = Store::open(dir.path()).unwrap();
        let (_, recs) = store.recover().unwrap().unwrap();
        assert_eq!(recs, vec![report(2)]);
        store.append(&report(3)).unwrap();
        let (_, recs) = store.recover().unwrap().unwrap();
        assert_eq!(recs, vec![report(2), report(3)]);
    }

    #[test]
    fn snapshot_truncates_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.write_snapshot(&snap(0)).unwrap();
        store.append(&report(1)).unwrap();
        store.write_snapshot(&snap(1)).unwrap();
        assert_eq!(fs::metadata(dir.path().join(LOG_FILE)).unwrap().len(), 0);
        assert!(!dir.path().join(SNAPSHOT_TMP).exists());
    }
}
