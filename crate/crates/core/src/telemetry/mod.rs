//! UDP link between the acquisition board and the pose-solving host.
//!
//! A daemon streams per-channel counts as fixed-size [`CountPacket`]s at a
//! configurable rate; a client homes the channels, solves each packet and
//! republishes [`PosePacket`]s. Loss is accounted for with sequence gaps,
//! never retransmission.

pub mod client;
pub mod daemon;
pub mod packet;

use thiserror::Error;

pub use client::{run_client, ClientConfig, ClientPipeline, ClientRunOptions, ClientStats, PoseRecord, LOG_HEADER};
pub use daemon::{bind_and_serve, packet_at, serve, ServeOptions, ServeStats, MAX_RATE_HZ, MIN_RATE_HZ};
pub use packet::{CountPacket, PacketError, PosePacket, SolveStatus, COUNT_PACKET_LEN, POSE_PACKET_LEN};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("cannot bind {address}: {source}")]
    Bind {
        address: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rate {0} Hz is outside 1..=2000 Hz")]
    InvalidRate(f64),
    #[error("count stream is empty")]
    EmptyStream,
    #[error("receiver thread panicked")]
    ReceiverPanicked,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
