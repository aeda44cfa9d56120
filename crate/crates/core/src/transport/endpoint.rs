//! Client-side connections to a server session.
//!
//! [`SimEndpoint`] drives the server inline on simulated time,
//! [`ThreadEndpoint`] runs it on its own thread against the wall clock with
//! the network model enforced by sleeping, and [`TcpEndpoint`] talks to a
//! remote `rrto serve` process. All of them move encoded frames.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;

use super::clock::Nanos;
use super::net::{Link, NetConfig};
use super::wire::{decode, encode, read_frame, write_frame, Message, WireError};
use crate::server::ServerSession;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("connection closed")]
    Disconnected,
    #[error("no message can arrive: the server has nothing left to send")]
    NothingPending,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_received: u64,
    pub bytes_received: u64,
}

impl LinkCounters {
    fn sent(&mut self, frame: &[u8]) {
        self.frames_sent += 1;
        self.bytes_sent += frame.len() as u64;
    }

    fn received(&mut self, frame: &[u8]) {
        self.frames_received += 1;
        self.bytes_received += frame.len() as u64;
    }
}

pub trait Endpoint {
    /// Sends `msg` at client time `now`.
    fn send(&mut self, msg: &Message, now: Nanos) -> Result<(), TransportError>;

    /// Blocks for the next server message; returns it with its delivery time.
    fn recv(&mut self, now: Nanos) -> Result<(Message, Nanos), TransportError>;

    /// Cumulative executor busy time of the server, when observable.
    fn server_busy_ns(&self) -> Option<Nanos> {
        None
    }

    fn counters(&self) -> LinkCounters;
}

/// Server session driven inline under simulated time.
#[derive(Debug)]
pub struct SimEndpoint {
    session: ServerSession,
    up: Link,
    down: Link,
    inbox: VecDeque<(Vec<u8>, Nanos)>,
    counters: LinkCounters,
}

impl SimEndpoint {
    pub fn new(session: ServerSession, net: NetConfig) -> Self {
        SimEndpoint {
            session,
            up: Link::new(net.clone()),
            down: Link::new(net),
            inbox: VecDeque::new(),
            counters: LinkCounters::default(),
        }
    }

    pub fn session(&self) -> &ServerSession {
        &self.session
    }
}

impl Endpoint for SimEndpoint {
    fn send(&mut self, msg: &Message, now: Nanos) -> Result<(), TransportError> {
        let frame = encode(msg);
        self.counters.sent(&frame);
        let arrival = self.up.transmit(frame.len(), now);
        for (reply, at) in self.session.handle(decode(&frame)?, arrival) {
            let frame = encode(&reply);
            let delivery = self.down.transmit(frame.len(), at);
            self.inbox.push_back((frame, delivery));
        }
        Ok(())
    }

    fn recv(&mut self, _now: Nanos) -> Result<(Message, Nanos), TransportError> {
        let (frame, delivery) = self.inbox.pop_front().ok_or(TransportError::NothingPending)?;
        self.counters.received(&frame);
        Ok((decode(&frame)?, delivery))
    }

    fn server_busy_ns(&self) -> Option<Nanos> {
        Some(self.session.stats().busy_ns)
    }

    fn counters(&self) -> LinkCounters {
        self.counters
    }
}

type Timed = (Vec<u8>, Instant);

fn sleep_until(t: Instant) {
    let now = Instant::now();
    if t > now {
        thread::sleep(t - now);
    }
}

fn since(epoch: Instant, t: Instant) -> Nanos {
    t.saturating_duration_since(epoch).as_nanos() as Nanos
}

/// Server session on its own thread; the network model is applied to wall
/// time by delaying delivery.
#[derive(Debug)]
pub struct ThreadEndpoint {
    tx: Option<Sender<Timed>>,
    rx: Receiver<Timed>,
    up: Link,
    epoch: Instant,
    busy: Arc<AtomicU64>,
    worker: Option<JoinHandle<()>>,
    counters: LinkCounters,
}

impl ThreadEndpoint {
    /// `epoch` is the instant the client's wall clock counts from.
    pub fn spawn(mut session: ServerSession, net: NetConfig, epoch: Instant) -> Self {
        let (tx, server_rx) = channel::<Timed>();
        let (server_tx, rx) = channel::<Timed>();
        let busy = Arc::new(AtomicU64::new(0));
        let busy_out = busy.clone();
        let mut down = Link::new(net.clone());
        let worker = thread::spawn(move || {
            while let Ok((frame, deliver_at)) = server_rx.recv() {
                sleep_until(deliver_at);
                let msg = match decode(&frame) {
                    Ok(m) => m,
                    Err(e) => {
                        warn!("server thread dropped a frame: {e}");
                        continue;
                    }
                };
                let replies = session.handle(msg, since(epoch, Instant::now()));
                busy_out.store(session.stats().busy_ns, Ordering::Relaxed);
                for (reply, at) in replies {
                    let frame = encode(&reply);
                    let delivery = down.transmit(frame.len(), at);
                    let deliver_at = epoch + Duration::from_nanos(delivery);
                    if server_tx.send((frame, deliver_at)).is_err() {
                        return;
                    }
                }
            }
        });
        ThreadEndpoint {
            tx: Some(tx),
            rx,
            up: Link::new(net),
            epoch,
            busy,
            worker: Some(worker),
            counters: LinkCounters::default(),
        }
    }
}

impl Endpoint for ThreadEndpoint {
    fn send(&mut self, msg: &Message, now: Nanos) -> Result<(), TransportError> {
        let frame = encode(msg);
        self.counters.sent(&frame);
        let arrival = self.up.transmit(frame.len(), now);
        let tx = self.tx.as_ref().ok_or(TransportError::Disconnected)?;
        tx.send((frame, self.epoch + Duration::from_nanos(arrival)))
            .map_err(|_| TransportError::Disconnected)
    }

    fn recv(&mut self, _now: Nanos) -> Result<(Message, Nanos), TransportError> {
        let (frame, deliver_at) = self.rx.recv().map_err(|_| TransportError::Disconnected)?;
        sleep_until(deliver_at);
        self.counters.received(&frame);
        Ok((decode(&frame)?, since(self.epoch, Instant::now())))
    }

    fn server_busy_ns(&self) -> Option<Nanos> {
        Some(self.busy.load(Ordering::Relaxed))
    }

    fn counters(&self) -> LinkCounters {
        self.counters
    }
}

impl Drop for ThreadEndpoint {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

/// Connection to a server over TCP.
#[derive(Debug)]
pub struct TcpEndpoint {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    epoch: Instant,
    counters: LinkCounters,
}

impl TcpEndpoint {
    pub fn connect(addr: impl ToSocketAddrs, epoch: Instant) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpEndpoint {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            epoch,
            counters: LinkCounters::default(),
        })
    }
}

impl Endpoint for TcpEndpoint {
    fn send(&mut self, msg: &Message, _now: Nanos) -> Result<(), TransportError> {
        let frame = encode(msg);
        self.counters.sent(&frame);
        write_frame(&mut self.writer, &frame)?;
        Ok(())
    }

    fn recv(&mut self, _now: Nanos) -> Result<(Message, Nanos), TransportError> {
        let frame = match read_frame(&mut self.reader) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                return Err(TransportError::Disconnected)
            }
            Err(e) => return Err(e.into()),
        };
        self.counters.received(&frame);
        Ok((decode(&frame)?, since(self.epoch, Instant::now())))
    }

    fn counters(&self) -> LinkCounters {
        self.counters
    }
}

/// Serves one connection until the client hangs up.
pub fn serve_connection(stream: TcpStream, mut session: ServerSession) -> Result<(), TransportError> {
    stream.set_nodelay(true)?;
    let epoch = Instant::now();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let msg = decode(&frame)?;
        for (reply, _) in session.handle(msg, since(epoch, Instant::now())) {
            write_frame(&mut writer, &encode(&reply))?;
        }
    }
    let stats = session.stats();
    info!(
        "session closed: {} rpc calls, {} replays, busy {} ns",
        stats.rpc_calls, stats.replays_completed, stats.busy_ns
    );
    Ok(())
}

/// Accepts connections, one thread and one fresh session each. Stops after
/// `max_connections` connections when given.
pub fn serve_tcp<F>(
    listener: TcpListener,
    new_session: F,
    max_connections: Option<usize>,
) -> Result<(), TransportError>
where
    F: Fn() -> ServerSession + Send + Sync + 'static,
{
    let new_session = Arc::new(new_session);
    let mut workers = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        debug!("connection from {:?}", stream.peer_addr().ok());
        let new_session = new_session.clone();
        workers.push(thread::spawn(move || {
            if let Err(e) = serve_connection(stream, new_session()) {
                warn!("session ended with error: {e}");
            }
        }));
        if max_connections.is_some_and(|max| n + 1 >= max) {
            break;
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ApiCall, ApiKind, CostTable, DeviceState, KernelRegistry, ReturnValue};

    fn session() -> ServerSession {
        ServerSession::simulated(
            DeviceState::new(KernelRegistry::with_mixers(["k"])),
            CostTable::from_pairs(&[(ApiKind::GetDevice, 1_000)]),
        )
    }

    fn round_trip<E: Endpoint>(ep: &mut E, now: Nanos) -> (Message, Nanos) {
        ep.send(&Message::RpcCall(ApiCall::get_device()), now).unwrap();
        ep.recv(now).unwrap()
    }

    #[test]
    fn simulated_round_trip_costs_two_latencies_plus_work() {
        let mut ep = SimEndpoint::new(session(), NetConfig::indoor());
        let (msg, t) = round_trip(&mut ep, 0);
        assert_eq!(msg, Message::RpcRet(ReturnValue::success()));
        let call_frame = encode(&Message::RpcCall(ApiCall::get_device())).len();
        let ret_frame = encode(&msg).len();
        let cfg = NetConfig::indoor();
        let expected = cfg.delivery_time(call_frame, 0) + 1_000;
        assert_eq!(t, cfg.delivery_time(ret_frame, expected));
        assert_eq!(ep.server_busy_ns(), Some(1_000));
        let c = ep.counters();
        assert_eq!((c.frames_sent, c.frames_received), (1, 1));
        assert_eq!(c.bytes_sent, call_frame as u64);
    }

    #[test]
    fn simulated_recv_without_pending_reply_fails() {
        let mut ep = SimEndpoint::new(session(), NetConfig::ideal());
        assert!(matches!(ep.recv(0), Err(TransportError::NothingPending)));
    }

    #[test]
    fn thread_endpoint_matches_simulation_on_ideal_network() {
        let mut sim = SimEndpoint::new(session(), NetConfig::ideal());
        let mut wall = ThreadEndpoint::spawn(session(), NetConfig::ideal(), Instant::now());
        for _ in 0..3 {
            assert_eq!(round_trip(&mut sim, 0).0, round_trip(&mut wall, 0).0);
        }
        assert_eq!(sim.counters(), wall.counters());
    }

    #[test]
    fn tcp_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || serve_tcp(listener, session, Some(1)).unwrap());
        let mut ep = TcpEndpoint::connect(addr, Instant::now()).unwrap();
        let (msg, _) = round_trip(&mut ep, 0);
        assert_eq!(msg, Message::RpcRet(ReturnValue::success()));
        drop(ep);
        server.join().unwrap();
    }
}
