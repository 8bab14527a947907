//! Worker-oriented message passing.
//!
//! A [`WorkerManager`] owns a worker's state and a table of message handlers
//! keyed by message tag. Messages travel over a [`Transport`]: either the
//! in-process queues used for deterministic simulation, or TCP frames for
//! one-process-per-worker runs. Tag 0 ([`FINISH`]) is reserved and stops the
//! receive loop.

mod error;
mod message;
mod tcp;
mod transport;
mod worker;

pub use error::CommError;
pub use message::{decode_message, encode_message, read_frame, write_frame, Message, Value, MAX_FRAME_LEN};
pub use tcp::{PeerTable, TcpTransport};
pub use transport::{InProcessTransport, TraceEntry, Transport};
pub use worker::{
    run_simulation, run_threaded, HandlerError, HandlerResult, Outbox, UnknownTagPolicy, Worker,
    WorkerManager,
};

pub type WorkerId = u32;

/// Reserved shutdown tag.
pub const FINISH: u32 = 0;
