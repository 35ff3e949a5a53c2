//! File formats, the provider protocol, run configuration and the
//! command-line tools around `kid-core`.

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod protocol;
pub mod remote;

pub use config::RunConfig;
pub use error::{KidError, Result};
pub use remote::{Endpoint, RemoteProvider};
