//! Free-running mode: one thread per participant, each holding its own
//! replica of the data space and exchanging datagrams over UDP.

use std::io;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, Socket, Type};

use super::env::{EnvEvent, Environment};
use super::scenario::{plan, summarize, BuildError, Plan, RunOptions, RunOutcome};
use super::scheduler::{MemberSpec, RunConfig, Runtime, RuntimeError};
use super::trace::{EventKind, Mode, Record, Trace, TraceHeader};
use crate::action::ExecStep;
use crate::bt::{Blackboard, NodeId, Status, TickError};
use crate::dds::wire::{Datagram, MessageKind, DEFAULT_GROUP};
use crate::dds::{ParticipantId, ReplicaStore, Sample, Value, ANNOUNCE_PERIOD};
use crate::dsl::Scenario;
use crate::sim::World;

const POLL: Duration = Duration::from_millis(20);
const PROBE_WAIT: Duration = Duration::from_millis(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpOptions {
    pub group: SocketAddrV4,
    /// Wall time per virtual tick.
    pub tick: Duration,
}

impl Default for UdpOptions {
    fn default() -> Self {
        Self { group: DEFAULT_GROUP, tick: Duration::from_millis(1) }
    }
}

/// How a datagram reaches every other participant.
#[derive(Debug, Clone)]
pub enum Fanout {
    Multicast(SocketAddrV4),
    /// Loopback unicast to each peer, for hosts without a multicast route.
    Unicast(Vec<SocketAddr>),
}

struct Link {
    socket: UdpSocket,
    fanout: Arc<Fanout>,
}

impl Link {
    fn send(&self, d: &Datagram) {
        let Ok(bytes) = d.encode() else { return };
        // Delivery is best-effort; a lost sample is repaired by the next
        // periodic republish.
        match &*self.fanout {
            Fanout::Multicast(group) => {
                let _ = self.socket.send_to(&bytes, group);
            }
            Fanout::Unicast(peers) => {
                let me = self.socket.local_addr().ok();
                for p in peers.iter().filter(|p| Some(**p) != me) {
                    let _ = self.socket.send_to(&bytes, p);
                }
            }
        }
    }
}

fn multicast_socket(group: SocketAddrV4) -> io::Result<UdpSocket> {
    let s = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
    s.set_reuse_address(true)?;
    #[cfg(unix)]
    s.set_reuse_port(true)?;
    s.bind(&SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, group.port()).into())?;
    s.join_multicast_v4(group.ip(), &Ipv4Addr::UNSPECIFIED)?;
    s.set_multicast_loop_v4(true)?;
    s.set_multicast_ttl_v4(1)?;
    s.set_read_timeout(Some(POLL))?;
    Ok(s.into())
}

fn probe(sockets: &[UdpSocket], group: SocketAddrV4) -> bool {
    let tag = format!("~probe{}", std::process::id());
    let Ok(bytes) = Datagram::announce(&tag).encode() else { return false };
    if sockets[0].send_to(&bytes, group).is_err() {
        return false;
    }
    let last = &sockets[sockets.len() - 1];
    let deadline = Instant::now() + PROBE_WAIT;
    let mut buf = [0u8; 2048];
    while Instant::now() < deadline {
        if let Ok((n, _)) = last.recv_from(&mut buf) {
            if buf[..n] == bytes[..] {
                return true;
            }
        }
    }
    false
}

/// One socket per participant, multicast when the host routes it.
pub fn open_links(n: usize, group: SocketAddrV4) -> io::Result<(Vec<UdpSocket>, Fanout)> {
    if let Ok(sockets) = (0..n).map(|_| multicast_socket(group)).collect::<io::Result<Vec<_>>>() {
        if n > 0 && probe(&sockets, group) {
            return Ok((sockets, Fanout::Multicast(group)));
        }
    }
    let sockets = (0..n)
        .map(|_| {
            let s = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0))?;
            s.set_read_timeout(Some(POLL))?;
            Ok(s)
        })
        .collect::<io::Result<Vec<_>>>()?;
    let peers = sockets.iter().map(|s| s.local_addr()).collect::<io::Result<Vec<_>>>()?;
    Ok((sockets, Fanout::Unicast(peers)))
}

/// The world shared by every participant thread.
#[derive(Clone)]
pub struct SharedWorld(pub Arc<Mutex<World>>);

impl SharedWorld {
    fn lock(&self) -> MutexGuard<'_, World> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Environment for SharedWorld {
    fn advance_to(&mut self, now: u64) {
        Environment::advance_to(&mut *self.lock(), now);
    }

    fn before_tick(&mut self, ns: &str) {
        Environment::before_tick(&mut *self.lock(), ns);
    }

    fn condition(&mut self, ns: &str, name: &str, bb: &Blackboard) -> Result<bool, TickError> {
        Environment::condition(&mut *self.lock(), ns, name, bb)
    }

    fn action(&mut self, ns: &str, node: NodeId, name: &str, input: Option<&str>, bb: &mut Blackboard) -> Result<Status, TickError> {
        Environment::action(&mut *self.lock(), ns, node, name, input, bb)
    }

    fn reset_action(&mut self, ns: &str, node: NodeId) {
        Environment::reset_action(&mut *self.lock(), ns, node);
    }

    fn begin(&mut self, ns: &str, action: &str, command: &Value) {
        Environment::begin(&mut *self.lock(), ns, action, command);
    }

    fn step(&mut self, ns: &str, action: &str, command: &Value) -> ExecStep {
        Environment::step(&mut *self.lock(), ns, action, command)
    }

    fn halt(&mut self, ns: &str, action: &str) {
        Environment::halt(&mut *self.lock(), ns, action);
    }

    fn take_events(&mut self) -> Vec<EnvEvent> {
        Environment::take_events(&mut *self.lock())
    }

    fn check_invariants(&self) -> Result<(), String> {
        Environment::check_invariants(&*self.lock())
    }
}

enum Heard {
    Alive(String),
    Bye(String),
}

/// Decodes datagrams for one participant: samples into its replica,
/// liveliness onto a channel.
fn receive(socket: UdpSocket, me: String, names: Arc<Vec<String>>, replica: Arc<ReplicaStore>, tx: Sender<Heard>, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; 65536];
    while !stop.load(Ordering::Relaxed) {
        let Ok((n, _)) = socket.recv_from(&mut buf) else { continue };
        let Ok(d) = Datagram::decode(&buf[..n]) else { continue };
        let Some(idx) = names.iter().position(|ns| *ns == d.namespace) else { continue };
        if d.namespace == me {
            continue;
        }
        let heard = match d.kind {
            MessageKind::Bye => Heard::Bye(d.namespace),
            MessageKind::Announce => Heard::Alive(d.namespace),
            MessageKind::Publish => {
                let Ok(value) = d.value() else { continue };
                replica.merge(&d.topic, Sample { value, version: d.version, writer: ParticipantId(idx as u32) });
                Heard::Alive(d.namespace)
            }
        };
        if tx.send(heard).is_err() {
            return;
        }
    }
}

struct Shared {
    names: Arc<Vec<String>>,
    stop: Arc<AtomicBool>,
    arrivals: Arc<Mutex<Vec<Record>>>,
    tick: Duration,
    start: Instant,
}

struct Finished {
    records: Vec<Record>,
    publishes: u64,
    now: u64,
}

fn participant(
    spec: MemberSpec,
    world: SharedWorld,
    config: RunConfig,
    link: Link,
    replica: Arc<ReplicaStore>,
    rx: Receiver<Heard>,
    shared: &Shared,
) -> Result<Finished, RuntimeError> {
    let me = spec.namespace.clone();
    let mut rt = Runtime::new(world, vec![spec], config)?;
    let mut sent = 0;
    let mut next_announce = 0;
    let result = loop {
        if shared.stop.load(Ordering::Relaxed) {
            break Ok(());
        }
        let Some(t) = rt.next_instant() else { break Ok(()) };
        let due = shared.start + shared.tick * t as u32;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        while let Ok(h) = rx.try_recv() {
            match h {
                Heard::Alive(ns) => {
                    let _ = rt.bus_mut().remote_heartbeat(&ns);
                }
                Heard::Bye(ns) => rt.bus_mut().remote_bye(&ns),
            }
        }
        for (topic, s) in replica.snapshot().iter() {
            if rt.bus().peek(topic).is_none_or(|local| local.version < s.version) {
                let writer = &shared.names[s.writer.0 as usize];
                let _ = rt.bus_mut().merge_remote(writer, topic, s.version, s.value.clone());
            }
        }
        match rt.step() {
            Ok(true) => {}
            Ok(false) => break Ok(()),
            Err(e) => break Err(e),
        }
        let fresh = &rt.records()[sent..];
        for r in fresh {
            match r.kind {
                EventKind::Publish if r.ns == me => {
                    let (Some(topic), Some(version)) = (r.payload["topic"].as_str(), r.payload["version"].as_u64()) else {
                        continue;
                    };
                    if let Ok(value) = serde_json::from_value::<Value>(r.payload["value"].clone()) {
                        link.send(&Datagram::publish(&me, topic, version, &value));
                    }
                }
                EventKind::Arrival => shared.arrivals.lock().unwrap_or_else(|e| e.into_inner()).push(r.clone()),
                _ => {}
            }
        }
        sent = rt.records().len();
        if let Some(pid) = rt.participant(&me) {
            if t >= next_announce {
                link.send(&Datagram::announce(&me));
                for (topic, s) in rt.bus().topics().filter(|(_, s)| s.writer == pid) {
                    link.send(&Datagram::publish(&me, topic, s.version, &s.value));
                }
                next_announce = t + ANNOUNCE_PERIOD;
            }
        }
    };
    if rt.participant(&me).is_some() {
        link.send(&Datagram::bye(&me));
    }
    if result.is_err() {
        shared.stop.store(true, Ordering::Relaxed);
    }
    result.map(|()| Finished { records: rt.records().to_vec(), publishes: rt.bus().publish_count(), now: rt.now() })
}

/// Runs a scenario with every participant free-running on its own thread.
/// Traces from this mode are not reproducible.
pub fn run_udp(scn: &Scenario, opts: &RunOptions) -> Result<RunOutcome, BuildError> {
    let Plan { world, members, config, mut progress } = plan(scn, opts)?;
    let cycles = opts.cycles.unwrap_or(scn.doc.run.cycles);
    let seed = config.seed;
    let world = SharedWorld(Arc::new(Mutex::new(world)));
    let names: Arc<Vec<String>> = Arc::new(members.iter().map(|m| m.namespace.clone()).collect());
    let (sockets, fanout) = open_links(members.len(), opts.udp.group)?;
    let fanout = Arc::new(fanout);
    let shared = Shared {
        names: names.clone(),
        stop: Arc::new(AtomicBool::new(false)),
        arrivals: Arc::new(Mutex::new(Vec::new())),
        tick: opts.udp.tick,
        start: Instant::now(),
    };
    let finished: Vec<Result<Finished, RuntimeError>> = thread::scope(|s| {
        let mut handles = Vec::new();
        let mut receivers = Vec::new();
        for (spec, socket) in members.into_iter().zip(sockets) {
            let replica = Arc::new(ReplicaStore::new());
            let (tx, rx) = mpsc::channel();
            let inbound = socket.try_clone().expect("udp socket clones");
            let (me, names, rep, stop) = (spec.namespace.clone(), names.clone(), replica.clone(), shared.stop.clone());
            receivers.push(s.spawn(move || receive(inbound, me, names, rep, tx, stop)));
            let link = Link { socket, fanout: fanout.clone() };
            let (world, config, shared) = (world.clone(), config.clone(), &shared);
            handles.push(s.spawn(move || participant(spec, world, config, link, replica, rx, shared)));
        }
        while !handles.iter().all(|h| h.is_finished()) {
            progress.feed(&shared.arrivals.lock().unwrap_or_else(|e| e.into_inner()));
            if cycles > 0 && progress.all_reached(cycles) {
                shared.stop.store(true, Ordering::Relaxed);
            }
            thread::sleep(POLL);
        }
        shared.stop.store(true, Ordering::Relaxed);
        let out = handles.into_iter().map(|h| h.join().expect("participant thread panicked")).collect();
        for r in receivers {
            let _ = r.join();
        }
        out
    });

    let mut records = Vec::new();
    let (mut publishes, mut now, mut error) = (0, 0, None);
    for f in finished {
        match f {
            Ok(f) => {
                records.extend(f.records);
                publishes += f.publishes;
                now = now.max(f.now);
            }
            Err(e) => error = error.or(Some(e)),
        }
    }
    records.sort_by_key(|r| r.tick);
    let mut progress = plan(scn, opts)?.progress;
    progress.feed(&records);
    let world = Arc::try_unwrap(world.0).map_or_else(|a| a.lock().unwrap().clone(), |m| m.into_inner().unwrap_or_else(|e| e.into_inner()));
    let summary = summarize(&world, &records, now, publishes, &progress, error.as_ref());
    let trace = Trace { header: TraceHeader::new(Mode::Udp, seed), records };
    Ok(RunOutcome { trace, summary, world, error })
}
