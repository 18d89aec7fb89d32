//! Negotiation fabric: message envelopes, framed transports and the
//! synchronous round engine.
//!
//! Each round has three phases separated by barriers. Travellers emit
//! requests, Routers allocate, travellers process the proposals. Routers
//! live with the engine; travellers live in [`TravellerHost`]s, either
//! in-process or in worker processes reached over a [`Transport`].

mod engine;
mod host;
mod message;
mod transport;

pub use engine::{
    default_max_rounds, EngineConfig, EngineMetrics, EngineState, FailureReason, FailureReport,
    RoundReport, Termination, TravellerReport, MAX_ROUNDS_CAP,
};
pub use host::{partition, serve_worker, LocalHost, RemoteHost, TravellerHost};
pub use message::{
    AgentId, Control, MessageKind, OutOfOrder, Payload, RoundEvent, RoundMessage, SequenceGuard,
    TravellerSummary, WIRE_VERSION,
};
pub use transport::{
    decode_body, encode_body, read_frame, write_frame, ChannelTransport, TcpTransport, Transport,
    TransportError, MAX_FRAME,
};

use thiserror::Error;

use crate::netmodel::NetError;
use crate::plan::ProtocolViolation;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("protocol violation: {reason}; offending message: {message}")]
    Protocol { reason: String, message: String },
    #[error("protocol violation: {0}")]
    Violation(#[from] ProtocolViolation),
    #[error("worker: {0}")]
    Worker(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("hosting: {0}")]
    Hosting(String),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("engine has already converged")]
    Converged,
    #[error("internal invariant breached: {0}")]
    InvariantBreach(String),
}

impl EngineError {
    pub fn protocol(reason: impl Into<String>, msg: &RoundMessage) -> EngineError {
        EngineError::Protocol {
            reason: reason.into(),
            message: serde_json::to_string(msg).unwrap_or_else(|_| format!("{msg:?}")),
        }
    }
}
