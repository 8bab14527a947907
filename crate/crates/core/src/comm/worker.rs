use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use super::{CommError, Message, Transport, WorkerId, FINISH};

pub type HandlerError = Box<dyn std::error::Error + Send + Sync>;
pub type HandlerResult = Result<(), HandlerError>;

type Handler<S> = Box<dyn FnMut(&mut S, &Message, &mut Outbox<'_>) -> HandlerResult + Send>;
type StartHook<S> = Box<dyn FnOnce(&mut S, &mut Outbox<'_>) -> HandlerResult + Send>;

/// What the receive loop does with a message whose tag has no handler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum UnknownTagPolicy {
    #[default]
    FailFast,
    WarnAndDrop,
}

/// Sending side handed to handlers.
pub struct Outbox<'a> {
    worker_id: WorkerId,
    transport: &'a dyn Transport,
    finished: bool,
}

impl Outbox<'_> {
    pub fn worker_id(&self) -> WorkerId {
        self.worker_id
    }

    pub fn send(&mut self, msg: Message) -> Result<(), CommError> {
        if msg.sender_id != self.worker_id {
            return Err(CommError::SenderMismatch {
                worker: self.worker_id,
                sender: msg.sender_id,
            });
        }
        self.transport.send(msg)
    }

    /// Sends FINISH to each worker in `workers`.
    pub fn broadcast_finish(&mut self, workers: impl IntoIterator<Item = WorkerId>) -> Result<(), CommError> {
        for w in workers {
            self.send(Message::new(FINISH, self.worker_id, w))?;
        }
        Ok(())
    }

    /// Ends this worker's loop after the current handler returns.
    pub fn finish(&mut self) {
        self.finished = true;
    }
}

/// A worker: its state, its handler table, and a transport handle.
pub struct WorkerManager<S> {
    worker_id: WorkerId,
    transport: Arc<dyn Transport>,
    handlers: BTreeMap<u32, Handler<S>>,
    on_start: Option<StartHook<S>>,
    policy: UnknownTagPolicy,
    state: S,
    finished: bool,
}

impl<S> WorkerManager<S> {
    pub fn new(worker_id: WorkerId, transport: Arc<dyn Transport>, state: S) -> Self {
        Self {
            worker_id,
            transport,
            handlers: BTreeMap::new(),
            on_start: None,
            policy: UnknownTagPolicy::default(),
            state,
            finished: false,
        }
    }

    pub fn worker_id(&self) -> WorkerId {
        self.worker_id
    }

    pub fn with_unknown_tag_policy(mut self, policy: UnknownTagPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn register_message_receive_handler<F>(&mut self, msg_type: u32, handler: F) -> Result<(), CommError>
    where
        F: FnMut(&mut S, &Message, &mut Outbox<'_>) -> HandlerResult + Send + 'static,
    {
        if msg_type == FINISH {
            return Err(CommError::ReservedTag);
        }
        if self.handlers.contains_key(&msg_type) {
            return Err(CommError::DuplicateHandler(msg_type));
        }
        self.handlers.insert(msg_type, Box::new(handler));
        Ok(())
    }

    /// Code run once before the first message is received.
    pub fn on_start<F>(&mut self, hook: F)
    where
        F: FnOnce(&mut S, &mut Outbox<'_>) -> HandlerResult + Send + 'static,
    {
        self.on_start = Some(Box::new(hook));
    }

    pub fn send_message(&self, msg: Message) -> Result<(), CommError> {
        Outbox {
            worker_id: self.worker_id,
            transport: self.transport.as_ref(),
            finished: false,
        }
        .send(msg)
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn into_state(self) -> S {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn handler_error(&self, source: HandlerError) -> CommError {
        match source.downcast::<CommError>() {
            Ok(comm) => *comm,
            Err(source) => CommError::Handler {
                worker: self.worker_id,
                source,
            },
        }
    }

    fn start(&mut self) -> Result<(), CommError> {
        let Some(hook) = self.on_start.take() else {
            return Ok(());
        };
        let mut outbox = Outbox {
            worker_id: self.worker_id,
            transport: self.transport.as_ref(),
            finished: false,
        };
        let result = hook(&mut self.state, &mut outbox);
        self.finished |= outbox.finished;
        result.map_err(|e| self.handler_error(e))
    }

    fn dispatch(&mut self, msg: Message) -> Result<(), CommError> {
        if msg.msg_type == FINISH {
            self.finished = true;
            return Ok(());
        }
        let Some(handler) = self.handlers.get_mut(&msg.msg_type) else {
            return match self.policy {
                UnknownTagPolicy::FailFast => Err(CommError::UnknownMessageType {
                    worker: self.worker_id,
                    tag: msg.msg_type,
                    sender: msg.sender_id,
                }),
                UnknownTagPolicy::WarnAndDrop => {
                    log::warn!(
                        "worker {} dropped message type {} from {}",
                        self.worker_id,
                        msg.msg_type,
                        msg.sender_id
                    );
                    Ok(())
                }
            };
        };
        let mut outbox = Outbox {
            worker_id: self.worker_id,
            transport: self.transport.as_ref(),
            finished: false,
        };
        let result = handler(&mut self.state, &msg, &mut outbox);
        self.finished |= outbox.finished;
        result.map_err(|e| self.handler_error(e))
    }

    /// Receives and dispatches messages until FINISH arrives.
    pub fn run(&mut self) -> Result<(), CommError> {
        self.start()?;
        while !self.finished {
            let msg = self.transport.recv(self.worker_id)?;
            self.dispatch(msg)?;
        }
        Ok(())
    }

    /// Processes every message currently queued for this worker, including
    /// ones it sends to itself while doing so. Returns how many were handled.
    pub fn step(&mut self) -> Result<usize, CommError> {
        self.start()?;
        let mut handled = 0;
        while !self.finished {
            match self.transport.try_recv(self.worker_id)? {
                Some(msg) => {
                    self.dispatch(msg)?;
                    handled += 1;
                }
                None => break,
            }
        }
        Ok(handled)
    }
}

/// Object-safe view of a [`WorkerManager`] for drivers that mix state types.
pub trait Worker: Send {
    fn worker_id(&self) -> WorkerId;
    fn start(&mut self) -> Result<(), CommError>;
    fn step(&mut self) -> Result<usize, CommError>;
    fn run(&mut self) -> Result<(), CommError>;
    fn is_finished(&self) -> bool;
}

impl<S: Send> Worker for WorkerManager<S> {
    fn worker_id(&self) -> WorkerId {
        self.worker_id
    }

    fn start(&mut self) -> Result<(), CommError> {
        WorkerManager::start(self)
    }

    fn step(&mut self) -> Result<usize, CommError> {
        WorkerManager::step(self)
    }

    fn run(&mut self) -> Result<(), CommError> {
        WorkerManager::run(self)
    }

    fn is_finished(&self) -> bool {
        self.finished
    }
}

/// Deterministic single-threaded driver.
///
/// Workers start in ascending ID order, then are stepped round-robin by
/// ascending ID; each step drains that worker's whole inbox. Stops when every
/// worker has finished, or reports a deadlock when a full pass handles nothing.
pub fn run_simulation(workers: &mut [Box<dyn Worker>]) -> Result<(), CommError> {
    workers.sort_by_key(|w| w.worker_id());
    for w in workers.iter_mut() {
        w.start()?;
    }
    loop {
        if workers.iter().all(|w| w.is_finished()) {
            return Ok(());
        }
        let mut handled = 0;
        for w in workers.iter_mut().filter(|w| !w.is_finished()) {
            handled += w.step()?;
        }
        if handled == 0 {
            let stuck = workers
                .iter()
                .filter(|w| !w.is_finished())
                .map(|w| w.worker_id())
                .collect();
            return Err(CommError::Deadlock(stuck));
        }
    }
}

/// Runs each worker's blocking loop on its own thread and waits for all.
/// Returns the first error in worker-ID order.
pub fn run_threaded(workers: Vec<Box<dyn Worker>>) -> Result<(), CommError> {
    let handles: Vec<_> = workers
        .into_iter()
        .map(|mut w| {
            let id = w.worker_id();
            (id, thread::spawn(move || w.run()))
        })
        .collect();
    let mut results: Vec<(WorkerId, Result<(), CommError>)> = handles
        .into_iter()
        .map(|(id, h)| {
            let result = h.join().unwrap_or_else(|_| {
                Err(CommError::Handler {
                    worker: id,
                    source: "worker thread panicked".into(),
                })
            });
            (id, result)
        })
        .collect();
    results.sort_by_key(|(id, _)| *id);
    results.into_iter().try_for_each(|(_, r)| r)
}
