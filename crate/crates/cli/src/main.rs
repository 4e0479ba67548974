//! `knotgate` operator command line.
//!
//! Exit codes: 0 ok, 1 validation or operation failure, 2 usage or config
//! error, 3 bind error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use knotgate_core::annotation::parse_registrations;
use knotgate_core::gateway::Gateway;
use knotgate_core::model::parse_triples;
use knotgate_core::query::ResultTable;
use knotgate_core::rules::parse_rulepack;
use knotgate_core::services::{CompositionSpec, Services};
use knotgate_core::{replay, ReplaySpeed, ReplaySummary};
use knotgate_net::runtime::StartError;
use knotgate_net::{start, Config};

#[derive(Parser)]
#[command(name = "knotgate", version, about = "Semantic IoT gateway")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, short, global = true, env = "KNOTGATE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API and the enabled adapters until interrupted.
    Serve,
    /// Feed a recorded sensor log through the pipeline and print a summary.
    Replay {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Speed::Max)]
        speed: Speed,
    },
    /// Run one query against the configured store and print a table.
    Query {
        text: String,
        /// Replay this log before querying.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Check a rule pack, knowledge pack, sensor list or composition file.
    Validate { path: PathBuf },
    /// Write the configured store as N-Triples (stdout when no path is given).
    Export {
        path: Option<PathBuf>,
        /// Replay this log before exporting.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Speed {
    Realtime,
    Max,
}

enum Failure {
    Operation(String),
    Usage(String),
    Bind(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Operation(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Bind(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Operation(m) | Failure::Usage(m) | Failure::Bind(m) => m,
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let path = path.ok_or_else(|| Failure::Usage("no configuration: pass --config or set KNOTGATE_CONFIG".into()))?;
    Config::load(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn gateway_from(path: Option<&Path>) -> Result<Gateway, Failure> {
    load_config(path)?.build_gateway().map_err(|e| Failure::Usage(e.to_string()))
}

fn run_replay(gateway: &mut Gateway, log: &Path, speed: ReplaySpeed) -> Result<ReplaySummary, Failure> {
    let text = read(log)?;
    replay(gateway, &text, speed).map_err(|e| Failure::Operation(format!("{}: {e}", log.display())))
}

fn format_summary(summary: &ReplaySummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "readings {}", summary.readings);
    let _ = writeln!(out, "triples {}", summary.triples);
    let _ = writeln!(out, "derived {}", summary.derived);
    let _ = writeln!(out, "notifications {}", summary.notifications);
    for (rule, count) in &summary.per_rule {
        let _ = writeln!(out, "rule {rule} {count}");
    }
    out
}

fn format_table(table: &ResultTable) -> String {
    let header: Vec<String> = table.columns.iter().map(|c| format!("?{c}")).collect();
    let rows = table.string_rows();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&header) + "\n";
    for row in &rows {
        out += &line(row);
        out.push('\n');
    }
    let _ = writeln!(out, "({} row{})", rows.len(), if rows.len() == 1 { "" } else { "s" });
    out
}

fn validate(path: &Path) -> Result<String, Failure> {
    let text = read(path)?;
    let fail = |e: &dyn std::fmt::Display| Failure::Operation(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("nt") => {
            let triples = parse_triples(&text).map_err(|e| fail(&e))?;
            Ok(format!("ok: knowledge pack, {} triples", triples.len()))
        }
        Some("csv") => {
            let registrations = parse_registrations(&text).map_err(|e| fail(&e))?;
            Ok(format!("ok: {} sensor registrations", registrations.len()))
        }
        Some("json") => {
            let spec: CompositionSpec = serde_json::from_str(&text).map_err(|e| fail(&e))?;
            let id = Services::new().register_composition(spec).map_err(|e| fail(&e))?;
            Ok(format!("ok: composition {id}"))
        }
        _ => {
            let pack = parse_rulepack(&text).map_err(|e| fail(&e))?;
            let domains = if pack.domains.is_empty() { String::from("none") } else { pack.domains.join(", ") };
            let rules = pack.rules.len();
            Ok(format!(
                "ok: rule pack {} ({rules} rule{}, domains: {domains})",
                pack.pack_id,
                if rules == 1 { "" } else { "s" }
            ))
        }
    }
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term =
            tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(config_path: Option<&Path>) -> Result<String, Failure> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let config = load_config(config_path)?;
    let gateway = config.build_gateway().map_err(|e| Failure::Usage(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Operation(e.to_string()))?;
    runtime.block_on(async {
        let running = start(gateway, config.serve_options()).await.map_err(|e| match e {
            StartError::Bind { .. } => Failure::Bind(e.to_string()),
            StartError::Mqtt(_) => Failure::Usage(e.to_string()),
        })?;
        println!("knotgate listening on http://{}", running.http_addr);
        if let Some(coap) = running.coap_addr {
            println!("CoAP ingest on coap://{coap}/ingest");
        }
        tokio::select! {
            _ = shutdown_signal() => {}
            _ = running.wait() => {}
        }
        Ok(String::new())
    })
}

fn run(cli: Cli) -> Result<String, Failure> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Serve => serve(config),
        Command::Replay { log, speed } => {
            let mut gateway = gateway_from(config)?;
            let speed = match speed {
                Speed::Realtime => ReplaySpeed::Realtime,
                Speed::Max => ReplaySpeed::Max,
            };
            Ok(format_summary(&run_replay(&mut gateway, &log, speed)?))
        }
        Command::Query { text, replay } => {
            let mut gateway = gateway_from(config)?;
            if let Some(log) = replay {
                run_replay(&mut gateway, &log, ReplaySpeed::Max)?;
            }
            let table = gateway.query(&text).map_err(|e| Failure::Operation(e.to_string()))?;
            Ok(format_table(&table))
        }
        Command::Validate { path } => validate(&path).map(|report| report + "\n"),
        Command::Export { path, replay } => {
            let mut gateway = gateway_from(config)?;
            if let Some(log) = replay {
                run_replay(&mut gateway, &log, ReplaySpeed::Max)?;
            }
            let export = gateway.export();
            match path {
                Some(path) => {
                    std::fs::write(&path, &export)
                        .map_err(|e| Failure::Operation(format!("{}: {e}", path.display())))?;
                    Ok(String::new())
                }
                None => Ok(export),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
