//! Live session server: one sim thread paced at the tick rate, one acceptor
//! thread, and one thread per WebSocket connection. The sim thread never
//! waits on a client; it only pops operator messages from a bounded inbound
//! queue and force-pushes snapshots into a bounded outbound queue, dropping
//! the oldest when the client falls behind.

use crossbeam_queue::ArrayQueue;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use shertwin::sim::{Mode, SimError, World};

use crate::protocol::{decode_client, ClientMessage, ErrorCode, InputMessage, ServerMessage, StateSnapshot, WireError, PROTOCOL_VERSION};
use crate::session::{Inbound, Session, SessionLog, SessionOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServeOptions {
    /// Wall-clock tick rate; zero or non-finite runs unpaced.
    pub tick_hz: f64,
    pub session: SessionOptions,
    pub inbound_capacity: usize,
    pub outbound_capacity: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { tick_hz: 1000.0, session: SessionOptions::default(), inbound_capacity: 1024, outbound_capacity: 64 }
    }
}

/// How a served session ended.
#[derive(Debug)]
pub struct ServeOutcome {
    pub log: SessionLog,
    /// Set when the simulation aborted on a non-finite value.
    pub error: Option<SimError>,
}

struct Shared {
    inbound: ArrayQueue<Inbound>,
    outbound: ArrayQueue<ServerMessage>,
    busy: AtomicBool,
    shutdown: Arc<AtomicBool>,
    bye_reason: OnceLock<&'static str>,
    tick: AtomicU64,
    mode: Mode,
    dt: f64,
    decimation: u64,
}

impl Shared {
    fn stop(&self, reason: &'static str) {
        let _ = self.bye_reason.set(reason);
        self.shutdown.store(true, Ordering::SeqCst);
    }

    fn stopping(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }
}

pub struct Server {
    addr: SocketAddr,
    shared: Arc<Shared>,
    sim: JoinHandle<ServeOutcome>,
    acceptor: JoinHandle<()>,
}

impl Server {
    /// Start serving `world` on an already bound listener.
    pub fn start(listener: TcpListener, world: World, options: ServeOptions) -> std::io::Result<Server> {
        Self::start_with_flag(listener, world, options, Arc::new(AtomicBool::new(false)))
    }

    /// As [`Server::start`], stopping when `shutdown` becomes true (for
    /// example from a signal handler).
    pub fn start_with_flag(
        listener: TcpListener,
        world: World,
        options: ServeOptions,
        shutdown: Arc<AtomicBool>,
    ) -> std::io::Result<Server> {
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shared = Arc::new(Shared {
            inbound: ArrayQueue::new(options.inbound_capacity.max(1)),
            outbound: ArrayQueue::new(options.outbound_capacity.max(1)),
            busy: AtomicBool::new(false),
            shutdown,
            bye_reason: OnceLock::new(),
            tick: AtomicU64::new(world.tick),
            mode: world.config.mode,
            dt: world.dt(),
            decimation: options.session.decimation.max(1),
        });
        let session = Session::new(world, options.session);
        let sim = {
            let shared = shared.clone();
            thread::Builder::new().name("sim".into()).spawn(move || sim_loop(session, &shared, options.tick_hz))?
        };
        let acceptor = {
            let shared = shared.clone();
            thread::Builder::new().name("acceptor".into()).spawn(move || accept_loop(listener, &shared))?
        };
        Ok(Server { addr, shared, sim, acceptor })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stopping()
    }

    /// Ask the session to end and wait for it.
    pub fn stop(self) -> ServeOutcome {
        self.shared.stop("shutdown");
        self.wait()
    }

    /// Wait until the shutdown flag is raised (or the simulation aborts),
    /// then collect the log. Clients receive `bye` before their sockets close.
    pub fn wait(self) -> ServeOutcome {
        let outcome = self.sim.join().expect("sim thread panicked");
        self.shared.stop("shutdown");
        self.acceptor.join().expect("acceptor thread panicked");
        outcome
    }
}

fn sim_loop(mut session: Session, shared: &Shared, tick_hz: f64) -> ServeOutcome {
    let period = (tick_hz.is_finite() && tick_hz > 0.0).then(|| Duration::from_secs_f64(1.0 / tick_hz));
    let mut deadline = Instant::now();
    let mut batch = Vec::new();
    let error = loop {
        if shared.stopping() {
            break None;
        }
        batch.clear();
        while let Some(msg) = shared.inbound.pop() {
            batch.push(msg);
        }
        match session.tick(batch.drain(..)) {
            Ok(record) => {
                shared.tick.store(record.tick + 1, Ordering::SeqCst);
                if record.tick % shared.decimation == 0 && shared.busy.load(Ordering::SeqCst) {
                    shared.outbound.force_push(ServerMessage::State(StateSnapshot::from_record(record)));
                }
            }
            Err(e) => {
                shared.stop("simulation-error");
                break Some(e);
            }
        }
        if let Some(period) = period {
            deadline += period;
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            } else if now - deadline > Duration::from_millis(100) {
                // Far behind: resynchronize rather than burst.
                deadline = now;
            }
        }
    };
    ServeOutcome { log: session.finish(), error }
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>) {
    let mut connections = Vec::new();
    while !shared.stopping() {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                if let Ok(handle) = thread::Builder::new().name("connection".into()).spawn(move || connection(stream, &shared)) {
                    connections.push(handle);
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
        connections.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for h in connections {
        let _ = h.join();
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> bool {
    ws.send(Message::text(msg.to_json())).is_ok()
}

/// Close politely and wait briefly for the peer's close frame.
fn close(mut ws: WebSocket<TcpStream>, code: CloseCode, reason: &str) {
    let _ = ws.close(Some(CloseFrame { code, reason: reason.to_owned().into() }));
    let until = Instant::now() + Duration::from_millis(500);
    while Instant::now() < until {
        match ws.read() {
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
}

fn connection(stream: TcpStream, shared: &Shared) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let _ = stream.set_nodelay(true);
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    let _ = ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)));
    let _ = ws.get_mut().set_write_timeout(Some(Duration::from_secs(1)));
    if shared.busy.swap(true, Ordering::SeqCst) {
        let busy = WireError { code: ErrorCode::SessionBusy, detail: "another operator holds the session".into() };
        send(&mut ws, &ServerMessage::error(&busy));
        close(ws, CloseCode::Policy, ErrorCode::SessionBusy.label());
        return;
    }
    while shared.outbound.pop().is_some() {}
    let hello = ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        mode: shared.mode,
        dt: shared.dt,
        decimation: shared.decimation,
        tick: shared.tick.load(Ordering::SeqCst),
    };
    let mut farewell: Option<&str> = None;
    if send(&mut ws, &hello) {
        farewell = serve_client(&mut ws, shared);
    }
    shared.inbound.force_push(Inbound::Disconnected);
    shared.busy.store(false, Ordering::SeqCst);
    if let Some(reason) = farewell {
        send(&mut ws, &ServerMessage::Bye { reason: reason.into() });
        close(ws, CloseCode::Normal, reason);
    }
}

/// Pump messages until the client leaves or the server stops. Returns the
/// `bye` reason when the socket is still usable.
fn serve_client<'a>(ws: &mut WebSocket<TcpStream>, shared: &'a Shared) -> Option<&'a str> {
    loop {
        if shared.stopping() {
            return Some(shared.bye_reason.get().copied().unwrap_or("shutdown"));
        }
        match ws.read() {
            Ok(Message::Text(text)) => match decode_client(text.as_str()) {
                Ok(ClientMessage::Input { robot, t_client, v, pedal, clutch }) => {
                    shared.inbound.force_push(Inbound::Input(InputMessage { robot, t_client, v, pedal, clutch }));
                }
                Ok(ClientMessage::Hello { .. }) => {}
                Ok(ClientMessage::Bye {}) => return Some("client-bye"),
                Err(e) => {
                    if !send(ws, &ServerMessage::error(&e)) {
                        return None;
                    }
                }
            },
            Ok(Message::Binary(_)) => {
                let e = WireError { code: ErrorCode::Malformed, detail: "binary frames are not supported".into() };
                if !send(ws, &ServerMessage::error(&e)) {
                    return None;
                }
            }
            Ok(Message::Close(_)) => return None,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return None,
        }
        let mut wrote = false;
        while let Some(msg) = shared.outbound.pop() {
            if ws.write(Message::text(msg.to_json())).is_err() {
                return None;
            }
            wrote = true;
        }
        if wrote && ws.flush().is_err() {
            return None;
        }
    }
}
