use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use serde_json::{json, Value};

use crate::asd::{AccountabilityServer, ReportOutcome, ServerSettings};
use crate::scorekit::{Epsilon, Fixed, ScoreParams};
use crate::tagcrypt::{commit, decode_tag, encode_tag, verify_tag_signature};

fn micros(sorted: &[Duration], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i].as_secs_f64() * 1e6
}

fn summary(mut samples: Vec<Duration>) -> Value {
    samples.sort_unstable();
    json!({ "median_us": micros(&samples, 0.5), "p95_us": micros(&samples, 0.95) })
}

/// In-process timings with no networking: server-side issuance, the full
/// sender-side issuance path, and report ingestion.
pub(super) fn run(iterations: u64, threads: usize) -> Value {
    let params = ScoreParams::new(1, Fixed::from_int(1), Fixed::from_int(10), Epsilon::OFF).expect("valid params");
    let server = AccountabilityServer::in_memory(ServerSettings::new(params, "bench-reg", "bench-admin"));
    let cred = server.register("bench-reg").expect("registration");
    let vk = server.verifying_key();
    let message = b"see you at the station at nine";
    let n = iterations as usize;

    let mut server_side = Vec::with_capacity(n);
    for _ in 0..n {
        let c = commit(message, "bench@example.org", &mut OsRng);
        let t = Instant::now();
        let tag = server.issue_tag(&cred, &c.com).expect("issuance");
        server_side.push(t.elapsed());
        std::hint::black_box(tag);
    }

    let mut total = Vec::with_capacity(n);
    let mut encoded = Vec::with_capacity(n);
    for _ in 0..n {
        let t = Instant::now();
        let c = commit(message, "bench@example.org", &mut OsRng);
        let tag = server.issue_tag(&cred, &c.com).expect("issuance");
        let bytes = encode_tag(&tag);
        let back = decode_tag(&bytes).expect("own tag decodes");
        assert!(back.com == c.com && verify_tag_signature(&vk, &back));
        total.push(t.elapsed());
        encoded.push(bytes);
    }
    let tag_bytes = encoded[0].len();

    let mut ingest = Vec::with_capacity(n);
    for bytes in &encoded {
        let t = Instant::now();
        let outcome = server.ingest_report(bytes).expect("ingestion");
        ingest.push(t.elapsed());
        assert_eq!(outcome, ReportOutcome::Accepted);
    }

    let mut out = json!({
        "iterations": iterations,
        "issuance_server_side": summary(server_side),
        "issuance_total": summary(total),
        "report_ingestion": summary(ingest),
        "tag_bytes": tag_bytes,
    });
    if threads > 1 {
        let per_thread = n / threads;
        let t = Instant::now();
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| {
                    for _ in 0..per_thread {
                        let c = commit(message, "bench@example.org", &mut OsRng);
                        let tag = server.issue_tag(&cred, &c.com).expect("issuance");
                        let _ = server.ingest_report(&encode_tag(&tag)).expect("ingestion");
                    }
                });
            }
        });
        let secs = t.elapsed().as_secs_f64();
        out["parallel"] = json!({
            "threads": threads,
            "issue_and_report_per_sec": (per_thread * threads) as f64 / secs,
        });
    }
    out
}
