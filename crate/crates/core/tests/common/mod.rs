#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use rand::Rng;
use sandi::scorekit::{Epsilon, Fixed, ReputationConfig, ScoreParams};
use sandi::stratsim::{GameSpec, MessageType};

pub fn params(k: u32, b: f64, m: f64) -> ScoreParams {
    ScoreParams::new(k, Fixed::from_f64(b).unwrap(), Fixed::from_f64(m).unwrap(), Epsilon::OFF).unwrap()
}

fn two_places<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo..hi) * 100.0).round() / 100.0
}

/// Random game with `n <= 4`, `L <= 4`, at most three messages and dp off.
pub fn random_game<R: Rng>(rng: &mut R) -> GameSpec {
    let k = rng.gen_range(1..=3);
    let b = [0.5, 1.0][rng.gen_range(0..2)];
    let m = [5.0, 10.0][rng.gen_range(0..2)];
    let params = params(k, b, m);
    let messages = (0..rng.gen_range(1..=3))
        .map(|_| {
            let mut q: Vec<f64> = (0..4).map(|_| two_places(rng, 0.0, 1.0)).collect();
            let mut p: Vec<f64> = (0..4).map(|_| two_places(rng, 0.05, 0.95)).collect();
            q.sort_by(|a, b| a.partial_cmp(b).unwrap());
            p.sort_by(|a, b| b.partial_cmp(a).unwrap());
            MessageType { reward: (rng.gen_range(0.1..2.0f64) * 10.0).round() / 10.0, q, p }
        })
        .collect();
    let ceiling = params.ceiling().raw();
    let sc = Fixed::from_raw(rng.gen_range(-ceiling / 2..=ceiling) / 50 * 50);
    GameSpec::new(
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        params,
        ReputationConfig::default_for(params.ceiling()),
        sc,
        messages,
    )
    .unwrap()
}

/// Server config for `sandi serve` on an ephemeral port.
pub fn write_server_config(path: &Path, data_dir: Option<&Path>, k: u32) {
    let mut text = format!(
        "listen_addr = \"127.0.0.1:0\"\nepoch_duration_secs = 0\nk = {k}\nb = 1\nM = 10\nepsilon = \"off\"\nsnapshot_every = 40\n"
    );
    if let Some(d) = data_dir {
        text.push_str(&format!("data_dir = {:?}\n", d.display().to_string()));
    }
    std::fs::write(path, text).unwrap();
}

pub const REG_TOKEN: &str = "test-registration-token";
pub const ADMIN_TOKEN: &str = "test-admin-token";

/// A `sandi serve` child process; killed when dropped.
pub struct ServeProcess {
    pub child: Child,
    pub url: String,
}

impl ServeProcess {
    pub fn start(config: &Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_sandi"))
            .args(["serve", "--config"])
            .arg(config)
            .env("SANDI_REGISTRATION_TOKEN", REG_TOKEN)
            .env("SANDI_ADMIN_TOKEN", ADMIN_TOKEN)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn sandi serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
        ServeProcess { child, url }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        self.kill();
    }
}
