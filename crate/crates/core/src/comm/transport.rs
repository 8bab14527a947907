use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{CommError, Message, WorkerId};

/// Moves messages between workers.
///
/// Implementations deliver messages from one sender to one receiver in send
/// order, without loss or duplication. No ordering is promised across
/// distinct sender pairs.
pub trait Transport: Send + Sync {
    fn send(&self, msg: Message) -> Result<(), CommError>;

    /// Blocks until a message for `worker` is available.
    fn recv(&self, worker: WorkerId) -> Result<Message, CommError>;

    fn try_recv(&self, worker: WorkerId) -> Result<Option<Message>, CommError>;
}

/// One delivered message, as recorded by [`InProcessTransport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub sender: WorkerId,
    pub receiver: WorkerId,
    pub msg_type: u32,
    pub keys: Vec<String>,
}

/// Shared-memory queues, one inbox per worker.
pub struct InProcessTransport {
    inboxes: Mutex<Vec<VecDeque<Message>>>,
    arrived: Condvar,
    recv_timeout: Option<Duration>,
    trace: Option<Mutex<Vec<TraceEntry>>>,
}

impl InProcessTransport {
    pub fn new(n_workers: usize) -> Self {
        Self {
            inboxes: Mutex::new(vec![VecDeque::new(); n_workers]),
            arrived: Condvar::new(),
            recv_timeout: None,
            trace: None,
        }
    }

    /// Makes blocking receives fail with [`CommError::Timeout`] after `timeout`.
    pub fn with_recv_timeout(mut self, timeout: Duration) -> Self {
        self.recv_timeout = Some(timeout);
        self
    }

    /// Records every delivery so that runs can be compared message by message.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn n_workers(&self) -> usize {
        self.inboxes.lock().unwrap().len()
    }

    /// Delivered messages in delivery order; empty unless tracing is enabled.
    pub fn trace(&self) -> Vec<TraceEntry> {
        self.trace
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn pending(&self, worker: WorkerId) -> usize {
        self.inboxes
            .lock()
            .unwrap()
            .get(worker as usize)
            .map_or(0, VecDeque::len)
    }

    fn record(&self, msg: &Message) {
        if let Some(trace) = &self.trace {
            trace.lock().unwrap().push(TraceEntry {
                sender: msg.sender_id,
                receiver: msg.receiver_id,
                msg_type: msg.msg_type,
                keys: msg.keys().map(str::to_string).collect(),
            });
        }
    }
}

impl Transport for InProcessTransport {
    fn send(&self, msg: Message) -> Result<(), CommError> {
        let mut inboxes = self.inboxes.lock().unwrap();
        let inbox = inboxes
            .get_mut(msg.receiver_id as usize)
            .ok_or(CommError::UnknownReceiver(msg.receiver_id))?;
        inbox.push_back(msg);
        drop(inboxes);
        self.arrived.notify_all();
        Ok(())
    }

    fn recv(&self, worker: WorkerId) -> Result<Message, CommError> {
        let deadline = self.recv_timeout.map(|t| Instant::now() + t);
        let mut inboxes = self.inboxes.lock().unwrap();
        loop {
            let inbox = inboxes
                .get_mut(worker as usize)
                .ok_or(CommError::UnknownReceiver(worker))?;
            if let Some(msg) = inbox.pop_front() {
                drop(inboxes);
                self.record(&msg);
                return Ok(msg);
            }
            inboxes = match deadline {
                None => self.arrived.wait(inboxes).unwrap(),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(CommError::Timeout(worker));
                    }
                    self.arrived.wait_timeout(inboxes, deadline - now).unwrap().0
                }
            };
        }
    }

    fn try_recv(&self, worker: WorkerId) -> Result<Option<Message>, CommError> {
        let msg = self
            .inboxes
            .lock()
            .unwrap()
            .get_mut(worker as usize)
            .ok_or(CommError::UnknownReceiver(worker))?
            .pop_front();
        if let Some(msg) = &msg {
            self.record(msg);
        }
        Ok(msg)
    }
}
