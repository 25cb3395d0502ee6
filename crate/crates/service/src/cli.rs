//! `clarify` subcommands.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use clarify_core::selection::ModelKind;
use serde_json::json;
use tracing::info;

use crate::config::EngineConfig;
use crate::engine::{Engine, SuggestRequest};
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::http::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "clarify", version, about = "Example sentences that tell near-synonyms apart")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, default_value = "clarify.json")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one GMM usage model per word.
    TrainGmm,
    /// Train one BiLSTM usage model per word.
    TrainBilstm,
    /// Train the dictionary-style sentence filter.
    TrainFilter,
    /// Train the word alignment table on the parallel corpus.
    TrainAlign,
    /// Print ranked examples for a confusion set as JSON.
    Suggest {
        #[arg(long)]
        set: String,
        #[arg(long, default_value = "bilstm")]
        model: ModelKind,
        #[arg(long)]
        k: Option<usize>,
        /// Restrict candidates to sentences sharing a translation.
        #[arg(long)]
        l1_grouped: bool,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn print(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(Error::io("<stdout>"))
}

pub fn run(cli: Cli) -> Result<()> {
    let config = EngineConfig::load(&cli.config)?;
    let engine = Engine::load(config)?;
    let trained = |what: &str| {
        print(&json!({
            "trained": what,
            "config_digest": engine.digest(),
            "store": engine.store().root(),
        }))
    };
    match cli.command {
        Command::TrainGmm => {
            engine.train_gmm()?;
            trained("gmm")
        }
        Command::TrainBilstm => {
            engine.train_bilstm()?;
            trained("bilstm")
        }
        Command::TrainFilter => {
            engine.train_filter()?;
            trained("filter")
        }
        Command::TrainAlign => {
            engine.train_align()?;
            trained("align")
        }
        Command::Suggest {
            set,
            model,
            k,
            l1_grouped,
        } => {
            let result = engine.suggest(&SuggestRequest {
                set,
                model,
                k,
                l1_grouped: l1_grouped.then_some(true),
            })?;
            print(&result)
        }
        Command::Serve { addr } => serve(engine, addr),
    }
}

fn serve(engine: Engine, addr: SocketAddr) -> Result<()> {
    let log = EventLog::open(&engine.config().paths.event_log)?;
    let state = AppState {
        engine: Arc::new(engine),
        log: Arc::new(log),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(Error::io("<runtime>"))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(Error::io(addr.to_string()))?;
        info!(%addr, "listening");
        axum::serve(listener, router(state))
            .await
            .map_err(Error::io(addr.to_string()))
    })
}
