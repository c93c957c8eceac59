//! Network service and command-line front-end for the memdb engine.
//!
//! Requests and responses are newline-delimited JSON objects; see
//! [`protocol`]. The same [`Dispatcher`] serves TCP connections and the CLI.

use std::net::SocketAddr;

use thiserror::Error;

pub mod cli;
pub mod client;
pub mod config;
pub mod dispatch;
pub mod protocol;
pub mod scheduler;
pub mod server;

pub use client::Client;
pub use config::ServiceConfig;
pub use dispatch::Dispatcher;
pub use protocol::{WireRequest, WireResponse};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error(transparent)]
    Engine(#[from] memdb_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{message}")]
    Remote { code: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &str {
        match self {
            ServiceError::AddressInUse(_) => "AddressInUse",
            ServiceError::Engine(e) => e.code(),
            ServiceError::Config(_) => "InvalidConfig",
            ServiceError::Protocol(_) => "Protocol",
            ServiceError::Remote { code, .. } => code,
            ServiceError::Io(_) => "Io",
        }
    }
}
