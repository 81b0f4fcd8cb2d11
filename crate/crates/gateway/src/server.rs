//! TCP gateway.
//!
//! One simulation thread owns all state. Connection threads only parse bytes
//! and forward lines to it over a channel; outgoing messages are serialized
//! once and fanned out to per-connection writer threads.
//!
//! The earliest connection still open is the operator; the rest receive
//! telemetry but may not send commands. When the operator disconnects the
//! oldest observer is promoted.
//!
//! In lockstep mode the simulation only advances on `step` requests from the
//! operator. In realtime mode it ticks against the wall clock.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use evertip_core::config::SimConfig;
use evertip_core::scenario::AppliedCommand;
use evertip_core::scene::Scene;
use evertip_core::sim::{Goal, Simulation};

use crate::protocol::{
    decode, ClientMessage, DecodeError, Request, Role, ServerMessage, TelemetryFrame,
    PROTOCOL_VERSION,
};
use crate::session::{Record, SessionHeader, SessionWriter, Summary};
use crate::GatewayError;

/// Largest `step` request served in one go.
pub const MAX_STEP_TICKS: u64 = 1_000_000;

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub realtime: bool,
    pub seed: u64,
    pub goal: Option<Goal>,
    pub record: Option<PathBuf>,
}

enum Inbound {
    Connected {
        id: u64,
        stream: TcpStream,
        tx: Sender<Arc<str>>,
    },
    Line {
        id: u64,
        line: Result<String, String>,
    },
    Disconnected {
        id: u64,
    },
    Shutdown,
}

/// What the session did, returned when the gateway stops.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionStats {
    pub end_tick: u64,
    pub frames: u64,
    pub commands: usize,
}

pub struct Gateway {
    addr: SocketAddr,
    inbound: Sender<Inbound>,
    stopping: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    sim: Option<JoinHandle<Result<SessionStats, GatewayError>>>,
}

impl Gateway {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes every connection and finishes the log.
    pub fn shutdown(mut self) -> Result<SessionStats, GatewayError> {
        self.stop()
    }

    /// Blocks until the simulation thread exits.
    pub fn wait(mut self) -> Result<SessionStats, GatewayError> {
        let result = self
            .sim
            .take()
            .expect("running")
            .join()
            .expect("simulation thread panicked");
        self.stop_acceptor();
        result
    }

    fn stop_acceptor(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        if let Some(handle) = self.acceptor.take() {
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = handle.join();
        }
    }

    fn stop(&mut self) -> Result<SessionStats, GatewayError> {
        let _ = self.inbound.send(Inbound::Shutdown);
        self.stop_acceptor();
        match self.sim.take() {
            Some(h) => h.join().expect("simulation thread panicked"),
            None => Err(GatewayError::Stopped),
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        if self.sim.is_some() {
            let _ = self.stop();
        }
    }
}

/// Starts a gateway on an already bound listener.
pub fn serve(
    listener: TcpListener,
    scene_path: &Path,
    scene: Arc<Scene>,
    config: SimConfig,
    options: ServeOptions,
) -> Result<Gateway, GatewayError> {
    let addr = listener.local_addr().map_err(GatewayError::Net)?;
    let sim =
        Simulation::new(scene, config.clone(), options.seed)?.with_goal(options.goal.clone())?;
    let recorder = match &options.record {
        Some(path) => {
            let header = SessionHeader::new(
                scene_path,
                &sim.scene().name,
                &config,
                options.seed,
                options.goal.as_ref(),
            )?;
            Some(SessionWriter::create(path, &header)?)
        }
        None => None,
    };

    let (tx, rx) = mpsc::channel();
    let stopping = Arc::new(AtomicBool::new(false));

    let acceptor = {
        let tx = tx.clone();
        let stopping = stopping.clone();
        thread::Builder::new()
            .name("gateway-accept".into())
            .spawn(move || accept_loop(listener, tx, stopping))
            .map_err(GatewayError::Net)?
    };

    let mut state = Loop {
        sim,
        conns: Vec::new(),
        recorder,
        lockstep: !options.realtime,
        frame_seq: 0,
        events_sent: 0,
        commands: 0,
        scene_name: String::new(),
    };
    state.scene_name = state.sim.scene().name.clone();
    let sim = thread::Builder::new()
        .name("gateway-sim".into())
        .spawn(move || state.run(rx))
        .map_err(GatewayError::Net)?;

    Ok(Gateway {
        addr,
        inbound: tx,
        stopping,
        acceptor: Some(acceptor),
        sim: Some(sim),
    })
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stopping: Arc<AtomicBool>) {
    let mut next_id = 0;
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        next_id += 1;
        let id = next_id;
        let (Ok(reader), Ok(writer), Ok(control)) =
            (stream.try_clone(), stream.try_clone(), stream.try_clone())
        else {
            continue;
        };
        let (out_tx, out_rx) = mpsc::channel::<Arc<str>>();
        thread::spawn(move || write_loop(writer, out_rx));
        if tx
            .send(Inbound::Connected {
                id,
                stream: control,
                tx: out_tx,
            })
            .is_err()
        {
            break;
        }
        let tx = tx.clone();
        thread::spawn(move || read_loop(id, reader, tx));
    }
}

fn write_loop(mut stream: TcpStream, rx: Receiver<Arc<str>>) {
    for line in rx {
        if stream
            .write_all(line.as_bytes())
            .and_then(|_| stream.write_all(b"\n"))
            .is_err()
        {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Write);
}

fn read_loop(id: u64, stream: TcpStream, tx: Sender<Inbound>) {
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => break,
            Ok(_) => {
                if buf.last() == Some(&b'\n') {
                    buf.pop();
                }
                let line = String::from_utf8(buf.clone()).map_err(|e| e.to_string());
                if tx.send(Inbound::Line { id, line }).is_err() {
                    return;
                }
            }
        }
    }
    let _ = tx.send(Inbound::Disconnected { id });
}

struct Conn {
    id: u64,
    stream: TcpStream,
    tx: Sender<Arc<str>>,
    role: Role,
    last_seq: Option<u64>,
}

struct Loop {
    sim: Simulation,
    conns: Vec<Conn>,
    recorder: Option<SessionWriter>,
    lockstep: bool,
    frame_seq: u64,
    events_sent: usize,
    commands: usize,
    scene_name: String,
}

impl Loop {
    fn run(mut self, rx: Receiver<Inbound>) -> Result<SessionStats, GatewayError> {
        let dt = Duration::from_secs_f64(self.sim.config().dt);
        let mut deadline = Instant::now() + dt;
        loop {
            let msg = if self.lockstep {
                match rx.recv() {
                    Ok(m) => Some(m),
                    Err(_) => break,
                }
            } else {
                match rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            };
            match msg {
                Some(Inbound::Shutdown) => break,
                Some(m) => self.handle(m)?,
                None => {}
            }
            if !self.lockstep {
                while Instant::now() >= deadline {
                    self.tick()?;
                    deadline += dt;
                }
            }
            if let Some(w) = &mut self.recorder {
                w.flush()?;
            }
        }
        self.close()
    }

    fn close(mut self) -> Result<SessionStats, GatewayError> {
        for c in &self.conns {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
        self.conns.clear();
        if let Some(mut w) = self.recorder.take() {
            w.write(&Record::Summary(Summary {
                end_tick: self.sim.tick_count(),
                success: self.sim.goal_reached(),
                grid: None,
                coverage: None,
            }))?;
            w.finish()?;
        }
        Ok(SessionStats {
            end_tick: self.sim.tick_count(),
            frames: self.frame_seq,
            commands: self.commands,
        })
    }

    fn send_to(&self, id: u64, msg: &ServerMessage) {
        if let Some(c) = self.conns.iter().find(|c| c.id == id) {
            let _ = c.tx.send(Arc::from(msg.to_line()));
        }
    }

    fn broadcast(&self, msg: &ServerMessage) {
        let line: Arc<str> = Arc::from(msg.to_line());
        for c in &self.conns {
            let _ = c.tx.send(line.clone());
        }
    }

    fn record(&mut self, record: &Record) -> Result<(), GatewayError> {
        match &mut self.recorder {
            Some(w) => w.write(record),
            None => Ok(()),
        }
    }

    fn flush_events(&mut self) -> Result<(), GatewayError> {
        let fresh: Vec<_> = self.sim.events()[self.events_sent..].to_vec();
        self.events_sent += fresh.len();
        for e in fresh {
            self.record(&Record::Event(e.clone()))?;
            self.broadcast(&ServerMessage::Event(e));
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<(), GatewayError> {
        let snapshot = self.sim.tick();
        self.flush_events()?;
        if let Some(snapshot) = snapshot {
            self.frame_seq += 1;
            let frame = TelemetryFrame {
                seq: self.frame_seq,
                snapshot,
            };
            self.record(&Record::Telemetry(frame.clone()))?;
            self.broadcast(&ServerMessage::Telemetry(frame));
        }
        Ok(())
    }

    fn hello(&self, role: Role) -> ServerMessage {
        ServerMessage::Hello {
            protocol_version: PROTOCOL_VERSION,
            role,
            scene: self.scene_name.clone(),
            dt: self.sim.config().dt,
            telemetry_hz: self.sim.config().telemetry_hz,
            lockstep: self.lockstep,
        }
    }

    fn handle(&mut self, msg: Inbound) -> Result<(), GatewayError> {
        match msg {
            Inbound::Connected { id, stream, tx } => {
                let role = if self.conns.iter().any(|c| c.role == Role::Operator) {
                    Role::Observer
                } else {
                    Role::Operator
                };
                self.conns.push(Conn {
                    id,
                    stream,
                    tx,
                    role,
                    last_seq: None,
                });
                self.send_to(id, &self.hello(role));
            }
            Inbound::Disconnected { id } => {
                let Some(pos) = self.conns.iter().position(|c| c.id == id) else {
                    return Ok(());
                };
                let gone = self.conns.remove(pos);
                if gone.role == Role::Operator {
                    if let Some(next) = self.conns.first_mut() {
                        next.role = Role::Operator;
                        let id = next.id;
                        self.send_to(
                            id,
                            &ServerMessage::Role {
                                role: Role::Operator,
                            },
                        );
                    }
                }
            }
            Inbound::Line { id, line } => self.handle_line(id, line)?,
            Inbound::Shutdown => {}
        }
        Ok(())
    }

    fn handle_line(&mut self, id: u64, line: Result<String, String>) -> Result<(), GatewayError> {
        let decoded = match line {
            Ok(text) => decode(&text),
            Err(e) => Err(DecodeError::Malformed(format!("invalid UTF-8: {e}"))),
        };
        let msg = match decoded {
            Ok(m) => m,
            Err(DecodeError::Empty) => {
                self.send_to(
                    id,
                    &ServerMessage::Warning {
                        seq: None,
                        message: "empty line skipped".into(),
                    },
                );
                return Ok(());
            }
            Err(e) => {
                self.send_to(
                    id,
                    &ServerMessage::Error {
                        seq: None,
                        field: e.field_name().map(str::to_string),
                        message: e.to_string(),
                    },
                );
                return Ok(());
            }
        };

        let Some(conn) = self.conns.iter_mut().find(|c| c.id == id) else {
            return Ok(());
        };
        if let Some(last) = conn.last_seq {
            if msg.seq <= last {
                let warning = ServerMessage::Warning {
                    seq: Some(msg.seq),
                    message: format!("stale seq {} (last {last}); dropped", msg.seq),
                };
                self.send_to(id, &warning);
                return Ok(());
            }
        }
        conn.last_seq = Some(msg.seq);
        let role = conn.role;
        self.handle_request(id, role, msg)
    }

    fn handle_request(
        &mut self,
        id: u64,
        role: Role,
        msg: ClientMessage,
    ) -> Result<(), GatewayError> {
        let seq = msg.seq;
        let error = |field: Option<&str>, message: String| ServerMessage::Error {
            seq: Some(seq),
            field: field.map(str::to_string),
            message,
        };
        match msg.request {
            Request::Hello { protocol_version } => {
                if protocol_version != PROTOCOL_VERSION {
                    self.send_to(
                        id,
                        &error(
                            Some("protocol_version"),
                            format!("server speaks version {PROTOCOL_VERSION}"),
                        ),
                    );
                } else {
                    self.send_to(id, &self.hello(role));
                }
            }
            _ if role == Role::Observer => {
                self.send_to(id, &error(None, "observers cannot send commands".into()));
            }
            Request::Step { ticks } => {
                if !self.lockstep {
                    self.send_to(
                        id,
                        &error(
                            Some("kind"),
                            "step is only valid in lockstep sessions".into(),
                        ),
                    );
                } else if ticks > MAX_STEP_TICKS {
                    self.send_to(
                        id,
                        &error(Some("ticks"), format!("at most {MAX_STEP_TICKS}")),
                    );
                } else {
                    for _ in 0..ticks {
                        self.tick()?;
                    }
                    self.send_to(
                        id,
                        &ServerMessage::Ack {
                            seq,
                            tick: self.sim.tick_count(),
                        },
                    );
                }
            }
            Request::Command(cmd) => {
                let result = self.sim.apply(&cmd);
                self.commands += 1;
                let applied = AppliedCommand {
                    tick: self.sim.tick_count(),
                    command: cmd,
                    error: result.clone().err(),
                };
                self.record(&Record::Command(applied))?;
                self.flush_events()?;
                match result {
                    Ok(()) => self.send_to(
                        id,
                        &ServerMessage::Ack {
                            seq,
                            tick: self.sim.tick_count(),
                        },
                    ),
                    Err(e) => self.send_to(id, &error(e.field.as_deref(), e.message)),
                }
            }
        }
        Ok(())
    }
}
