//! The `sandi` command line.
//!
//! Secrets are read from the environment or from files, never from
//! positional arguments. Exit codes: 0 success, 1 protocol or verification
//! failure (a reason class is printed), 2 usage or configuration error.

mod bench;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ed25519_dalek::VerifyingKey;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::{json, Value};

use crate::asd::{AccountabilityServer, ReportOutcome, ServerConfig, SystemClock, ADMIN_TOKEN_ENV, REGISTRATION_TOKEN_ENV};
use crate::clientkit::{verify_endorsed_message, ApiClient, ClientError, SenderSession};
use crate::stratsim::{
    brute_force_value, optimal_policy, simulate, verify_theorem_structure, GameSpec, LazyOptimal, Observation,
    StratError,
};
use crate::tagcrypt::{encode_tag, EndorsedMessage};

#[derive(Debug, Parser)]
#[command(name = "sandi", version, about = "Accountable messaging: server, clients and strategy simulator")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the accountability server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Register a sender account and store its credential.
    Register {
        #[arg(long)]
        server: String,
        #[arg(long)]
        credential_file: PathBuf,
        /// File holding the registration token (default: $SANDI_REGISTRATION_TOKEN).
        #[arg(long)]
        token_file: Option<PathBuf>,
    },
    /// Endorse a message for one receiver and write it to a file.
    Send {
        #[arg(long)]
        credential_file: PathBuf,
        /// Receiver address.
        #[arg(long)]
        to: String,
        #[command(flatten)]
        message: MessageArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an endorsed message as its receiver.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        /// The receiver's own address.
        #[arg(long)]
        me: String,
        #[command(flatten)]
        key: KeyArg,
    },
    /// Report an endorsed message to the server.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        server: String,
    },
    /// Epoch administration.
    Epoch {
        #[command(subcommand)]
        action: EpochCommand,
    },
    /// Show the sender's current score and label.
    Score {
        #[arg(long)]
        credential_file: PathBuf,
    },
    /// Solve and simulate a sender game.
    Sim(SimArgs),
    /// Time issuance and report ingestion in-process.
    Bench {
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(10_000..))]
        iterations: u64,
        /// Extra parallel-load pass with this many threads.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct MessageArg {
    #[arg(long)]
    message: Option<String>,
    #[arg(long)]
    message_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct KeyArg {
    /// Fetch the verification key and label names from this server.
    #[arg(long)]
    server: Option<String>,
    /// Base64 verification key.
    #[arg(long)]
    vk: Option<String>,
}

#[derive(Debug, Subcommand)]
enum EpochCommand {
    /// Close the current epoch (admin token from $SANDI_ADMIN_TOKEN or --token-file).
    Advance {
        #[arg(long)]
        server: String,
        #[arg(long)]
        token_file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Game description (JSON).
    #[arg(long)]
    game: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the optimal policy as CSV.
    #[arg(long)]
    policy_csv: Option<PathBuf>,
    /// What the simulated sender sees of its own reports.
    #[arg(long, value_enum, default_value_t = ObservationArg::True)]
    observation: ObservationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObservationArg {
    True,
    Blind,
}

/// A failed command: exit status, reason class and detail.
#[derive(Debug)]
struct Failure {
    code: i32,
    reason: String,
    detail: String,
}

impl Failure {
    fn usage(detail: impl ToString) -> Self {
        Failure { code: 2, reason: "usage".into(), detail: detail.to_string() }
    }

    fn protocol(reason: &str, detail: impl ToString) -> Self {
        Failure { code: 1, reason: reason.into(), detail: detail.to_string() }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let reason = match &e {
            ClientError::Transport(_) => "transport",
            ClientError::Auth => "auth",
            ClientError::Server { .. } => "server",
            ClientError::Protocol(_) => "protocol",
            ClientError::KeyChanged => "key_changed",
            ClientError::CredentialFile(_) => return Failure::usage(e),
        };
        Failure::protocol(reason, e)
    }
}

impl From<StratError> for Failure {
    fn from(e: StratError) -> Self {
        match e {
            StratError::InvalidGame(_) => Failure::usage(e),
            _ => Failure::protocol("game", e),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let format = cli.format;
    match dispatch(cli.command) {
        Ok(out) => {
            emit(format, &out);
            0
        }
        Err(f) => {
            match format {
                Format::Json => {
                    println!("{}", json!({ "ok": false, "reason": f.reason, "error": f.detail }));
                }
                Format::Text => eprintln!("error[{}]: {}", f.reason, f.detail),
            }
            f.code
        }
    }
}

fn emit(format: Format, out: &Value) {
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Json => {
            let _ = writeln!(stdout, "{out}");
        }
        Format::Text => {
            if let Value::Object(map) = out {
                for (k, v) in map {
                    match v {
                        Value::String(s) => {
                            let _ = writeln!(stdout, "{k}: {s}");
                        }
                        other => {
                            let _ = writeln!(stdout, "{k}: {other}");
                        }
                    }
                }
            }
        }
    }
}

fn secret(env: &str, file: Option<&Path>) -> Result<String, Failure> {
    if let Some(path) = file {
        let s = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        return Ok(s.trim().to_string());
    }
    std::env::var(env)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Failure::usage(format!("set {env} or pass --token-file")))
}

fn read_endorsed(path: &Path) -> Result<EndorsedMessage, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    EndorsedMessage::from_file_bytes(&bytes).map_err(|e| Failure::protocol("format", e))
}

fn dispatch(cmd: Command) -> Result<Value, Failure> {
    match cmd {
        Command::Serve { config } => serve(&config),
        Command::Register { server, credential_file, token_file } => {
            let token = secret(REGISTRATION_TOKEN_ENV, token_file.as_deref())?;
            let session = SenderSession::register(&server, &token)?;
            session.save(&credential_file)?;
            Ok(json!({ "registered": true, "credential_file": credential_file.display().to_string() }))
        }
        Command::Send { credential_file, to, message, out } => {
            let body = match (message.message, message.message_file) {
                (Some(m), _) => m.into_bytes(),
                (None, Some(p)) => std::fs::read(&p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
                (None, None) => return Err(Failure::usage("--message or --message-file is required")),
            };
            let mut session = SenderSession::load(&credential_file)?;
            let em = session.prepare_endorsed_message(&body, &to)?;
            session.save(&credential_file)?;
            std::fs::write(&out, em.to_file_bytes()).map_err(|e| Failure::usage(format!("{}: {e}", out.display())))?;
            Ok(json!({ "out": out.display().to_string(), "tau": em.tag.tau, "y": em.tag.y, "tag_bytes": encode_tag(&em.tag).len() }))
        }
        Command::Verify { input, me, key } => {
            let em = read_endorsed(&input)?;
            let (vk, labels) = match (key.server, key.vk) {
                (Some(url), _) => ApiClient::new(&url).verifying_key()?,
                (None, Some(b64)) => (parse_vk(&b64)?, Vec::new()),
                (None, None) => return Err(Failure::usage("--server or --vk is required")),
            };
            let v = verify_endorsed_message(&vk, &em, &me).map_err(|e| Failure::protocol(e.as_str(), "message rejected"))?;
            let label = labels.get(v.y as usize).cloned().unwrap_or_else(|| v.y.to_string());
            Ok(json!({ "valid": true, "reputation": label, "y": v.y, "tau": v.tau }))
        }
        Command::Report { input, server } => {
            let em = read_endorsed(&input)?;
            match ApiClient::new(&server).report_bytes(&encode_tag(&em.tag))? {
                ReportOutcome::Accepted => Ok(json!({ "report": "accepted" })),
                ReportOutcome::Rejected(r) => Err(Failure::protocol(r.as_str(), "report rejected")),
            }
        }
        Command::Epoch { action: EpochCommand::Advance { server, token_file } } => {
            let token = secret(ADMIN_TOKEN_ENV, token_file.as_deref())?;
            let s = ApiClient::new(&server).advance_epoch(&token)?;
            Ok(json!({ "epoch": s.epoch, "updated": s.updated }))
        }
        Command::Score { credential_file } => {
            let view = SenderSession::load(&credential_file)?.score()?;
            Ok(json!({ "sc": view.sc.to_string(), "y": view.y }))
        }
        Command::Sim(args) => sim(args),
        Command::Bench { iterations, threads } => Ok(bench::run(iterations, threads)),
    }
}

fn parse_vk(b64: &str) -> Result<VerifyingKey, Failure> {
    B64.decode(b64.trim())
        .ok()
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .and_then(|b| VerifyingKey::from_bytes(&b).ok())
        .ok_or_else(|| Failure::usage("--vk is not a base64 Ed25519 key"))
}

fn serve(config: &Path) -> Result<Value, Failure> {
    let cfg = ServerConfig::load(config).map_err(Failure::usage)?;
    let settings = cfg.settings().map_err(Failure::usage)?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let server = match &cfg.data_dir {
        Some(dir) => AccountabilityServer::open_dir(settings, dir, Box::new(SystemClock))
            .map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?,
        None => AccountabilityServer::in_memory(settings),
    };
    let server = Arc::new(server);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::usage(e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen_addr)
            .await
            .map_err(|e| Failure::usage(format!("{}: {e}", cfg.listen_addr)))?;
        let addr = listener.local_addr().map_err(Failure::usage)?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        crate::asd::serve(server, listener, shutdown_signal())
            .await
            .map_err(|e| Failure::protocol("server", e))
    })?;
    Ok(json!({ "stopped": true }))
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn sim(args: SimArgs) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(&args.game).map_err(|e| Failure::usage(format!("{}: {e}", args.game.display())))?;
    let g = GameSpec::from_json(&text)?;
    let observation = match args.observation {
        ObservationArg::True => Observation::TrueReports,
        ObservationArg::Blind => Observation::Blind,
    };
    let mut rng = StdRng::seed_from_u64(args.seed);
    let mut out = serde_json::Map::new();
    if g.dp_off() {
        let sol = optimal_policy(&g)?;
        out.insert("value".into(), json!(sol.value));
        match brute_force_value(&g) {
            Ok(v) => {
                out.insert("brute_force_value".into(), json!(v));
            }
            Err(StratError::InstanceTooLarge { .. }) => {
                out.insert("brute_force_value".into(), json!("too large"));
            }
            Err(e) => return Err(e.into()),
        }
        let report = verify_theorem_structure(&g, &sol.policy);
        out.insert("theorem_structure".into(), json!(if report.passed { "pass" } else { "fail" }));
        out.insert("violations".into(), serde_json::to_value(&report.violations).expect("serializable"));
        if let Some(path) = &args.policy_csv {
            std::fs::write(path, sol.policy.to_csv(&g)).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        }
        let res = simulate(&g, &sol.policy, args.trials, observation, &mut rng);
        out.insert("simulation".into(), serde_json::to_value(res).expect("serializable"));
    } else {
        // The noised game has no exact solver; play the noise-free optimum.
        let lazy = LazyOptimal::new(&g);
        let res = simulate(&g, &lazy, args.trials, observation, &mut rng);
        out.insert("simulation".into(), serde_json::to_value(res).expect("serializable"));
    }
    Ok(Value::Object(out))
}
