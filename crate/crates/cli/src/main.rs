mod assess;
mod dataset;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status: 0 success, 1 bad flags or fatal setup error, 2 some inputs failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Fatal,
    Partial,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(match s {
            Status::Ok => 0,
            Status::Fatal => 1,
            Status::Partial => 2,
        })
    }
}

#[derive(Parser)]
#[command(name = "inspekt", version, about = "Concrete defect inspection: headless assessment, dataset tools, server")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assess every PNG in a directory, confirming all proposals (non-interactive mode).
    Assess(assess::AssessArgs),
    /// Dataset tooling.
    #[command(subcommand)]
    Dataset(dataset::DatasetCmd),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "INSPEKT_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, env = "INSPEKT_DATA")]
    data: PathBuf,
    /// Directory of static files served at `/` (the inspector UI build).
    #[arg(long = "static", env = "INSPEKT_STATIC")]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Status::Fatal.into() } else { Status::Ok.into() };
        }
    };
    match cli.command {
        Cmd::Assess(args) => assess::run(&args),
        Cmd::Dataset(cmd) => dataset::run(&cmd),
        Cmd::Serve(args) => serve(&args),
    }
    .into()
}

fn serve(args: &ServeArgs) -> Status {
    let state = match inspekt_service::AppState::open(&args.data, inspekt_core::session::Engine::reference()) {
        Ok(s) => s,
        Err(e) => {
            log::error!("cannot open data dir {}: {e}", args.data.display());
            return Status::Fatal;
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            log::error!("runtime: {e}");
            return Status::Fatal;
        }
    };
    rt.block_on(async {
        let listener = match tokio::net::TcpListener::bind(args.addr).await {
            Ok(l) => l,
            Err(e) => {
                log::error!("cannot bind {}: {e}", args.addr);
                return Status::Fatal;
            }
        };
        log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
        let app = inspekt_service::router(state, args.static_dir.clone());
        match inspekt_service::serve(listener, app).await {
            Ok(()) => Status::Ok,
            Err(e) => {
                log::error!("server: {e}");
                Status::Fatal
            }
        }
    })
}
