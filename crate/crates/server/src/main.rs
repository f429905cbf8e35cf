use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use aeos::{AppError, FileConfig, Overrides, Settings};
use aeos_core::journal::ExportFormat;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aeos", version, about = "Closed-loop experiment orchestration service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the core, the module listener and the HTTP API.
    Serve(ServeArgs),
    /// Write one campaign's experiments from the journal to a file.
    Export(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// Directory holding the journal.
    #[arg(long, env = "AEOS_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// JSON config file whose keys mirror the long flags.
    #[arg(long, env = "AEOS_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "AEOS_HTTP_PORT")]
    http_port: Option<u16>,
    #[arg(long, env = "AEOS_MODULE_PORT")]
    module_port: Option<u16>,
    /// Address both listeners bind to.
    #[arg(long, env = "AEOS_BIND")]
    bind: Option<IpAddr>,
    /// Seconds between keepalive lines on an idle event stream.
    #[arg(long, env = "AEOS_KEEPALIVE_SECS")]
    keepalive_secs: Option<u64>,
    /// Directory of static web UI assets served at /.
    #[arg(long, env = "AEOS_UI_DIR")]
    ui_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    campaign: String,
    #[arg(long, value_parser = |s: &str| s.parse::<ExportFormat>())]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn file_config(common: &Common) -> Result<FileConfig, AppError> {
    Ok(match &common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    })
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Serve(a) => {
            let file = file_config(&a.common)?;
            let over = Overrides {
                bind: a.bind,
                http_port: a.http_port,
                module_port: a.module_port,
                data_dir: a.common.data_dir,
                keepalive_secs: a.keepalive_secs,
                ui_dir: a.ui_dir,
            };
            let settings = Settings::resolve(over, file)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::Other(e.to_string()))?;
            rt.block_on(aeos::serve(settings))
        }
        Command::Export(a) => {
            let file = file_config(&a.common)?;
            let settings = Settings::resolve(Overrides { data_dir: a.common.data_dir, ..Default::default() }, file)?;
            let bytes = aeos::export_offline(&settings.data_dir, &a.campaign, a.format)?;
            std::fs::write(&a.out, bytes)
                .map_err(|source| AppError::Write { path: a.out.display().to_string(), source })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AEOS_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aeos: {e}");
            ExitCode::FAILURE
        }
    }
}
