use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use gridtalk_core::grid::DEFAULT_TURN_LIMIT;
use gridtalk_service::{AppState, ServiceConfig};

use crate::{usage, CmdResult, SplitArg};

#[derive(Args)]
pub struct ServeArgs {
    /// 0 picks a free port; the bound address is printed on stderr.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Scene file sessions draw from.
    #[arg(long)]
    data: PathBuf,
    /// Directory holding the finished-session log.
    #[arg(long, default_value = "store")]
    store_dir: PathBuf,
    /// Seconds of inactivity before a session is closed as a failure.
    #[arg(long, default_value_t = 3600)]
    session_ttl: u64,
    /// Split used when a request names none.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    default_split: SplitArg,
    #[arg(long, default_value_t = DEFAULT_TURN_LIMIT)]
    turn_limit: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Built web console to serve under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

pub fn serve(a: ServeArgs) -> CmdResult {
    let default_split = a
        .default_split
        .split()
        .ok_or_else(|| usage("--default-split must name a single split"))?;
    if a.session_ttl == 0 {
        return Err(usage("--session-ttl must be positive"));
    }
    let config = ServiceConfig {
        session_ttl: Duration::from_secs(a.session_ttl),
        turn_limit: a.turn_limit,
        noise: a.noise,
        default_split,
        static_dir: a.static_dir,
        ..ServiceConfig::new(&a.data, &a.store_dir)
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let state = Arc::new(AppState::load(config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("cannot bind {}:{}", a.host, a.port))?;
        eprintln!(
            "serving {} scenes on http://{}",
            state.scene_count(),
            listener.local_addr()?
        );
        gridtalk_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(())
    })?;
    Ok(())
}
