//! Message layer between the source and target nodes. Only model parameters,
//! class indices, round counters and convergence flags ever cross the wire;
//! there is no message type that could carry sample data.
//!
//! The frame layout is normative and bit-exact; see `docs/protocol.md`.

mod channel;
mod tcp;
mod wire;

pub use channel::{channel_pair, ChannelEndpoint};
pub use tcp::{tcp_dial, tcp_listen, TcpConfig, TcpEndpoint, TcpHost};
pub use wire::{decode, encode, FRAME_OVERHEAD, MAGIC, PROTOCOL_VERSION};

use thiserror::Error;

/// Message exchanged between the two nodes. Parameter payloads are the raw
/// flat float arrays; both sides derive the layout from the shared spec.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundMessage {
    /// Initial global model, source -> target.
    InitModel { params: Vec<f32> },
    /// Predicted class of the target sample, target -> source (class-conditional mode).
    PredictedClass { class: u32 },
    /// Locally updated parameters after a round's steps, target -> source.
    LocalParams { round: u32, params: Vec<f32> },
    /// Aggregated global parameters plus the source-side convergence flag,
    /// source -> target.
    GlobalParams { round: u32, params: Vec<f32>, source_converged: bool },
    /// Final round count, target -> source; ends the session.
    Terminate { final_round: u32 },
}

impl RoundMessage {
    pub fn kind_name(&self) -> &'static str {
        match self {
            RoundMessage::InitModel { .. } => "InitModel",
            RoundMessage::PredictedClass { .. } => "PredictedClass",
            RoundMessage::LocalParams { .. } => "LocalParams",
            RoundMessage::GlobalParams { .. } => "GlobalParams",
            RoundMessage::Terminate { .. } => "Terminate",
        }
    }

    /// True for the two messages that carry model parameters each round.
    pub fn carries_params(&self) -> bool {
        matches!(
            self,
            RoundMessage::InitModel { .. }
                | RoundMessage::LocalParams { .. }
                | RoundMessage::GlobalParams { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("bad frame magic")]
    BadMagic,

    #[error("protocol version mismatch: expected {expected}, got {actual}")]
    VersionMismatch { expected: u16, actual: u16 },

    #[error("unknown message type byte {0}")]
    UnknownMessageType(u8),

    #[error("payload checksum mismatch")]
    ChecksumMismatch,

    #[error("truncated frame")]
    Truncated,

    #[error("malformed payload for {0}")]
    MalformedPayload(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("connect to {addr} failed after {attempts} attempts: {last}")]
    ConnectFailed { addr: String, attempts: u32, last: String },

    #[error("send failed after {attempts} attempts: {last}")]
    SendRetriesExhausted { attempts: u32, last: String },

    #[error("peer closed the channel")]
    Disconnected,

    #[error("expected {expected}, got {got}")]
    UnexpectedMessage { expected: &'static str, got: &'static str },
}

pub type TransportResult<T> = std::result::Result<T, TransportError>;

/// Blocking, ordered, lossless message endpoint. One endpoint is owned by one
/// protocol instance at a time.
pub trait Endpoint: Send {
    fn send(&mut self, msg: &RoundMessage) -> TransportResult<()>;
    fn recv(&mut self) -> TransportResult<RoundMessage>;
}
