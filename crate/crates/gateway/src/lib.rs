//! Operator gateway for the evertip simulator: wire protocol, TCP server and
//! session recording.

use std::path::PathBuf;

pub mod protocol;
pub mod server;
pub mod session;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Core(#[from] evertip_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Log {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(
        "config hash mismatch: the log records {recorded} but the scene, config, seed and \
         goal give {computed}; refusing to replay"
    )]
    HashMismatch { recorded: String, computed: String },
    #[error("network: {0}")]
    Net(std::io::Error),
    #[error("gateway already stopped")]
    Stopped,
}
