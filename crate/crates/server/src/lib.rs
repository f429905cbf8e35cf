//! HTTP gateway and command-line front end for `aeos-core`.

pub mod api;
pub mod config;
pub mod events;

use std::path::Path;
use std::sync::Arc;

use aeos_core::clock::SystemClock;
use aeos_core::journal::{replay, ExportFormat, Journal, MemoryStorage, JOURNAL_FILE};
use aeos_core::service::{Core, CoreConfig};
use aeos_core::transport::ModuleListener;
use thiserror::Error;

pub use api::{router, ApiError, AppState};
pub use config::{FileConfig, Overrides, Settings};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Core(#[from] aeos_core::service::CoreError),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("unknown campaign {0}")]
    UnknownCampaign(String),
    #[error("{0}")]
    Other(String),
}

/// Renders a campaign export from the journal in `data_dir` without
/// modifying it.
pub fn export_offline(data_dir: &Path, campaign: &str, format: ExportFormat) -> Result<Vec<u8>, AppError> {
    let path = data_dir.join(JOURNAL_FILE);
    let bytes = std::fs::read(&path).map_err(|source| AppError::Read { path: path.display().to_string(), source })?;
    let (journal, warnings) = Journal::with_storage(Box::new(MemoryStorage::from_bytes(bytes)), Arc::new(SystemClock))
        .map_err(aeos_core::service::CoreError::from)?;
    for w in warnings {
        log::warn!("{w}");
    }
    let state = replay(&journal).map_err(aeos_core::service::CoreError::from)?;
    let campaign = state.campaigns.get(campaign).ok_or_else(|| AppError::UnknownCampaign(campaign.to_owned()))?;
    format.export(campaign).map_err(|e| AppError::Other(e.to_string()))
}

/// Opens the core, starts the module listener and serves HTTP until
/// ctrl-c.
pub async fn serve(settings: Settings) -> Result<(), AppError> {
    let data_dir = settings.data_dir.clone();
    let core = tokio::task::spawn_blocking(move || {
        Core::open(CoreConfig { data_dir: Some(data_dir), ..CoreConfig::default() })
    })
    .await
    .map_err(|e| AppError::Other(e.to_string()))??;
    for w in core.recovery_warnings() {
        log::warn!("{w}");
    }
    let core = Arc::new(core);
    let modules = ModuleListener::bind(settings.module_addr(), Arc::clone(core.registry()))
        .map_err(|source| AppError::Bind { addr: settings.module_addr().to_string(), source })?;
    let http = tokio::net::TcpListener::bind(settings.http_addr())
        .await
        .map_err(|source| AppError::Bind { addr: settings.http_addr().to_string(), source })?;
    log::info!("modules on {}, http on {}", modules.local_addr(), settings.http_addr());
    let app = router(AppState::new(core, settings.keepalive), settings.ui_dir.clone());
    axum::serve(http, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::Other(e.to_string()))?;
    drop(modules);
    Ok(())
}
