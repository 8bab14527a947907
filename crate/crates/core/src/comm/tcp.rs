use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{read_frame, write_frame, CommError, Message, Transport, WorkerId};

/// Worker ID to listen address for every worker in a run.
pub type PeerTable = BTreeMap<WorkerId, SocketAddr>;

type Inbound = Result<Message, CommError>;

/// TCP transport for a single worker.
///
/// Each worker listens on its own address. Outgoing traffic to a peer uses one
/// lazily opened connection, so frames to that peer arrive in send order.
/// Every accepted connection gets a reader thread that feeds the inbox.
pub struct TcpTransport {
    worker_id: WorkerId,
    local_addr: SocketAddr,
    peers: PeerTable,
    outgoing: Mutex<HashMap<WorkerId, BufWriter<TcpStream>>>,
    inbox_tx: Sender<Inbound>,
    inbox: Mutex<Receiver<Inbound>>,
    connect_timeout: Duration,
    recv_timeout: Option<Duration>,
}

impl TcpTransport {
    pub fn bind(worker_id: WorkerId, listen: impl ToSocketAddrs, peers: PeerTable) -> Result<Self, CommError> {
        Self::from_listener(worker_id, TcpListener::bind(listen)?, peers)
    }

    /// Wraps an already bound listener; useful when ports are chosen by the OS.
    pub fn from_listener(worker_id: WorkerId, listener: TcpListener, peers: PeerTable) -> Result<Self, CommError> {
        let local_addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let accept_tx = tx.clone();
        thread::Builder::new()
            .name(format!("fedsim-accept-{worker_id}"))
            .spawn(move || accept_loop(listener, accept_tx))?;
        Ok(Self {
            worker_id,
            local_addr,
            peers,
            outgoing: Mutex::new(HashMap::new()),
            inbox_tx: tx,
            inbox: Mutex::new(rx),
            connect_timeout: Duration::from_secs(30),
            recv_timeout: None,
        })
    }

    /// How long to keep retrying a connection to a peer that is not up yet.
    pub fn with_connect_timeout(mut self, timeout: Duration) -> Self {
        self.connect_timeout = timeout;
        self
    }

    pub fn with_recv_timeout(mut self, timeout: Duration) -> Self {
        self.recv_timeout = Some(timeout);
        self
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn worker_id(&self) -> WorkerId {
        self.worker_id
    }

    fn connect(&self, addr: SocketAddr) -> Result<TcpStream, CommError> {
        let deadline = Instant::now() + self.connect_timeout;
        let mut backoff = Duration::from_millis(5);
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(stream);
                }
                Err(e) if Instant::now() >= deadline => return Err(e.into()),
                Err(_) => {
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_millis(200));
                }
            }
        }
    }

    fn check_owner(&self, worker: WorkerId) -> Result<(), CommError> {
        if worker == self.worker_id {
            Ok(())
        } else {
            Err(CommError::UnknownReceiver(worker))
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let tx = tx.clone();
        let spawned = thread::Builder::new()
            .name("fedsim-reader".into())
            .spawn(move || read_loop(stream, tx));
        if spawned.is_err() {
            log::error!("could not spawn a reader thread");
        }
    }
}

fn read_loop(stream: TcpStream, tx: Sender<Inbound>) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(msg)) => {
                if tx.send(Ok(msg)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

impl Transport for TcpTransport {
    fn send(&self, msg: Message) -> Result<(), CommError> {
        if msg.receiver_id == self.worker_id {
            self.inbox_tx
                .send(Ok(msg))
                .map_err(|_| CommError::Closed(self.worker_id))?;
            return Ok(());
        }
        let addr = *self
            .peers
            .get(&msg.receiver_id)
            .ok_or(CommError::UnknownReceiver(msg.receiver_id))?;
        let mut outgoing = self.outgoing.lock().unwrap();
        let writer = match outgoing.entry(msg.receiver_id) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(BufWriter::new(self.connect(addr)?)),
        };
        write_frame(writer, &msg)?;
        writer.flush()?;
        Ok(())
    }

    fn recv(&self, worker: WorkerId) -> Result<Message, CommError> {
        self.check_owner(worker)?;
        let inbox = self.inbox.lock().unwrap();
        match self.recv_timeout {
            None => inbox.recv().map_err(|_| CommError::Closed(worker))?,
            Some(t) => match inbox.recv_timeout(t) {
                Ok(inbound) => inbound,
                Err(RecvTimeoutError::Timeout) => Err(CommError::Timeout(worker)),
                Err(RecvTimeoutError::Disconnected) => Err(CommError::Closed(worker)),
            },
        }
    }

    fn try_recv(&self, worker: WorkerId) -> Result<Option<Message>, CommError> {
        self.check_owner(worker)?;
        match self.inbox.lock().unwrap().try_recv() {
            Ok(inbound) => inbound.map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(CommError::Closed(worker)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::Value;

    fn pair() -> (TcpTransport, TcpTransport) {
        let l0 = TcpListener::bind("127.0.0.1:0").unwrap();
        let l1 = TcpListener::bind("127.0.0.1:0").unwrap();
        let peers: PeerTable = [(0, l0.local_addr().unwrap()), (1, l1.local_addr().unwrap())].into();
        let t0 = TcpTransport::from_listener(0, l0, peers.clone()).unwrap();
        let t1 = TcpTransport::from_listener(1, l1, peers)
            .unwrap()
            .with_recv_timeout(Duration::from_secs(10));
        (t0, t1)
    }

    #[test]
    fn fifo_over_tcp() {
        let (t0, t1) = pair();
        for i in 0..1000 {
            t0.send(Message::new(3, 0, 1).with("i", Value::Int64(i))).unwrap();
        }
        for i in 0..1000 {
            assert_eq!(t1.recv(1).unwrap().i64("i").unwrap(), i);
        }
    }

    #[test]
    fn self_send_and_unknown_peer() {
        let (t0, _t1) = pair();
        t0.send(Message::new(4, 0, 0)).unwrap();
        assert_eq!(t0.try_recv(0).unwrap().unwrap().msg_type, 4);
        assert!(matches!(t0.send(Message::new(4, 0, 99)), Err(CommError::UnknownReceiver(99))));
        assert!(matches!(t0.recv(1), Err(CommError::UnknownReceiver(1))));
    }
}
