//! Command-line and HTTP front end for confusion-set example suggestions.
//!
//! [`engine::Engine`] loads the configured data, trains and stores models,
//! and answers suggestion requests. [`http::router`] exposes it as a JSON
//! API and [`cli::run`] drives it from the `clarify` binary.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod events;
pub mod http;
pub mod store;

pub use config::EngineConfig;
pub use engine::{Engine, SuggestRequest};
pub use error::{Error, Result};
