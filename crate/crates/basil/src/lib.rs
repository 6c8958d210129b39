//! Basil: a leaderless Byzantine fault tolerant transactional key-value store,
//! as deterministic state machines driven by a seeded discrete-event simulator,
//! plus a verifier for the safety and liveness properties of recorded runs.

pub mod adversary;
pub mod cert;
pub mod client;
pub mod codec;
pub mod crypto;
pub mod history;
pub mod merkle;
pub mod messages;
pub mod metrics;
pub mod node;
pub mod replica;
pub mod sim;
pub mod types;
pub mod verifier;
pub mod workload;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log: {0}")]
    Log(String),
}
