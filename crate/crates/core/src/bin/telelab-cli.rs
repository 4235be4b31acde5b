use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Parser, Subcommand};
use telelab::client::{
    echo, replay, run_script, teleop, ClientError, Link, Recorder, Recording, Script, TcpLink, TeleopKey,
};
use telelab::config::PlatformConfig;
use telelab::host::server::{self, unix_now_us, ServerOptions};
use telelab::host::host_from_config;

#[derive(Parser)]
#[command(name = "telelab-cli", version, about = "Student client and host for the telelab testbed")]
struct Cli {
    #[arg(long, global = true, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, global = true, default_value_t = 7447)]
    port: u16,
    /// Session token (or the operator token).
    #[arg(long, global = true, env = "TELELAB_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Authenticate and print the granted profile.
    Connect,
    /// Drive with w/a/s/d, stop with space or x, quit with q (one key per line).
    Teleop,
    /// Print every frame on TOPIC in wire format.
    Echo {
        topic: String,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Execute a script file.
    Run { file: PathBuf },
    /// Record the session to FILE, running a script or listening for a while.
    Record {
        file: PathBuf,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Listen-only duration when no script is given.
        #[arg(long, default_value_t = 10_000)]
        duration_ms: u64,
        /// Topics to subscribe to when listening.
        #[arg(long, default_values_t = ["scan".to_owned(), "odom".to_owned(), "joint_states".to_owned(), "score".to_owned()])]
        topic: Vec<String>,
    },
    /// Re-publish a recording at its original offsets.
    Replay { file: PathBuf },
    /// Run the host: bus, HTTP API and console bridge.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "TELELAB_OPERATOR_TOKEN", hide_env_values = true)]
        operator_token: Option<String>,
    },
}

fn connect(cli: &Cli) -> Result<TcpLink, ClientError> {
    let token = cli.token.as_deref().ok_or(ClientError::AuthFailed)?;
    TcpLink::connect((cli.host.as_str(), cli.port), token)
}

fn print_json(v: &impl serde::Serialize) -> Result<(), ClientError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn listen<L: Link>(link: &mut L, topics: &[String], duration_ms: u64) -> Result<(), ClientError> {
    for t in topics {
        let topic = telelab::client::resolve_topic(link.identity(), t)?;
        let now = link.now_us();
        link.send(&telelab::bus::Envelope::control(telelab::bus::Op::Sub, topic, "Empty", 0, now))?;
    }
    let end = link.now_us() + duration_ms * 1000;
    while link.now_us() < end {
        link.recv_until(end)?;
    }
    Ok(())
}

fn client(cli: &Cli) -> Result<(), ClientError> {
    match &cli.command {
        Command::Connect => print_json(&connect(cli)?.identity().to_json()),
        Command::Teleop => {
            let mut link = connect(cli)?;
            let (tx, rx) = mpsc::channel();
            std::thread::spawn(move || {
                for line in std::io::stdin().lock().lines().map_while(Result::ok) {
                    let line = if line.is_empty() { " ".to_owned() } else { line };
                    for key in line.chars().filter_map(TeleopKey::from_char) {
                        if tx.send(key).is_err() {
                            return;
                        }
                    }
                }
            });
            teleop(&mut link, rx, &mut std::io::stdout()).map(|_| ())
        }
        Command::Echo { topic, count } => {
            echo(&mut connect(cli)?, topic, *count, &mut std::io::stdout().lock()).map(|_| ())
        }
        Command::Run { file } => {
            let script = Script::load(file)?;
            print_json(&run_script(&mut connect(cli)?, &script)?)
        }
        Command::Record {
            file,
            script,
            duration_ms,
            topic,
        } => {
            let script = script.as_deref().map(Script::load).transpose()?;
            let out = std::io::BufWriter::new(std::fs::File::create(file)?);
            let mut rec = Recorder::new(connect(cli)?, out)?;
            let result = match &script {
                Some(s) => run_script(&mut rec, s).map(Some),
                None => listen(&mut rec, topic, *duration_ms).map(|_| None),
            };
            rec.finish()?;
            if let Some(report) = result? {
                print_json(&report)?;
            }
            Ok(())
        }
        Command::Replay { file } => {
            let rec = Recording::load(file)?;
            let report = replay(&mut connect(cli)?, &rec)?;
            eprintln!("replayed {} frames, received {}, errors {}", report.sent, report.received, report.errors);
            Ok(())
        }
        Command::Serve { .. } => unreachable!(),
    }
}

fn serve(config: Option<&PathBuf>, operator_token: Option<&str>) -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let cfg = match config {
        Some(p) => PlatformConfig::load(p)?,
        None => PlatformConfig::default(),
    };
    let token = operator_token
        .map(str::to_owned)
        .or_else(|| cfg.server.operator_token.clone())
        .ok_or("an operator token is required (--operator-token, TELELAB_OPERATOR_TOKEN or server.operator_token)")?;
    let host = host_from_config(&cfg, &token, unix_now_us())?;
    let ip: std::net::IpAddr = cfg.server.bind.parse()?;
    let opts = ServerOptions {
        bus_addr: SocketAddr::new(ip, cfg.server.bus_port),
        http_addr: SocketAddr::new(ip, cfg.server.http_port),
        console_dir: cfg.server.console_dir.clone(),
    };
    tokio::runtime::Runtime::new()?.block_on(server::serve(host, opts))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Serve { config, operator_token } = &cli.command {
        return match serve(config.as_ref(), operator_token.as_deref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }
    match client(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
