use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neonfilm_cli::commands::{self, FitKindArg, EXIT_INVALID, EXIT_RUNTIME};
use neonfilm_cli::server::{self, ServeConfig};
use neonfilm_core::engine::RunOptions;
use neonfilm_core::Scenario;

#[derive(Parser)]
#[command(
    name = "neonfilm",
    version,
    about = "Neon film-growth monitor digital twin"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write telemetry, events and a summary.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        stride: Option<f64>,
        /// Simulated seconds per wall second (unpaced when omitted).
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Run a solidification campaign and write its table and statistics.
    Campaign {
        campaign: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit two-column CSV data.
    Fit {
        #[arg(value_enum)]
        kind: FitKindArg,
        data: PathBuf,
    },
    /// Serve a live session over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 60.0)]
        speed: f64,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let code = match cli.command {
        Cmd::Run {
            scenario,
            out,
            seed,
            dt,
            stride,
            speed,
        } => {
            let opts = RunOptions {
                seed,
                dt_s: dt,
                stride_s: stride,
                speed,
            };
            commands::run(&scenario, &out, &opts, &mut stdout, &mut stderr)
        }
        Cmd::Campaign {
            campaign,
            jobs,
            out,
        } => commands::campaign(&campaign, jobs, &out, &mut stdout, &mut stderr),
        Cmd::Fit { kind, data } => commands::fit(kind, &data, &mut stdout, &mut stderr),
        Cmd::Serve {
            port,
            bind,
            speed,
            scenario,
        } => serve(&bind, port, speed, scenario),
    };
    ExitCode::from(code as u8)
}

fn serve(bind: &str, port: u16, speed: f64, scenario: Option<PathBuf>) -> i32 {
    let scenario = match scenario {
        Some(p) => match Scenario::load(&p) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        },
        None => server::default_session_scenario(),
    };
    let addr: SocketAddr = match format!("{bind}:{port}").parse() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: bad bind address {bind}:{port}: {e}");
            return EXIT_INVALID;
        }
    };
    let cfg = match ServeConfig::new(scenario, speed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    rt.block_on(async move {
        let gateway = match server::start(cfg, addr).await {
            Ok(g) => g,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_RUNTIME;
            }
        };
        println!("listening on http://{}", gateway.addr());
        let _ = tokio::signal::ctrl_c().await;
        gateway.shutdown().await;
        0
    })
}
