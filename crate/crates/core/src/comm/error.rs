use super::WorkerId;

#[derive(Debug, thiserror::Error)]
pub enum CommError {
    #[error("a handler is already registered for message type {0}")]
    DuplicateHandler(u32),
    #[error("message type 0 is reserved for FINISH")]
    ReservedTag,
    #[error("worker {worker} received message type {tag} from {sender} with no registered handler")]
    UnknownMessageType { worker: WorkerId, tag: u32, sender: WorkerId },
    #[error("unknown receiver {0}")]
    UnknownReceiver(WorkerId),
    #[error("worker {worker} cannot send a message stamped with sender {sender}")]
    SenderMismatch { worker: WorkerId, sender: WorkerId },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("frame too large: {0}")]
    FrameTooLarge(String),
    #[error("message is missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {key:?} has type {found}, expected {expected}")]
    WrongParamType { key: String, expected: &'static str, found: &'static str },
    #[error("timed out waiting for a message at worker {0}")]
    Timeout(WorkerId),
    #[error("transport for worker {0} is closed")]
    Closed(WorkerId),
    #[error("simulation stalled: no messages pending but workers {0:?} have not finished")]
    Deadlock(Vec<WorkerId>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("handler failed at worker {worker}: {source}")]
    Handler {
        worker: WorkerId,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}
