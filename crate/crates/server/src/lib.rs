//! Live chat service: session actors that featurize keystrokes per message,
//! run inference and fan emotion updates out to responders and supervisors.

pub mod analyzer;
pub mod config;
pub mod inference;
pub mod persist;
pub mod protocol;
pub mod server;
pub mod session;

pub use config::Config;
pub use server::{RunningServer, Server, ServerError};
