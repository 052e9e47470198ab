use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use super::env::Environment;
use super::trace::{EventKind, Mode, Record, Trace, TraceHeader};
use crate::action::{ActionClient, ActionServer, ActionTopics, CommandExecutor, ExecStep, ProtocolEvent};
use crate::bt::{BTNode, Blackboard, Leaves, NodeId, NodeKind, Status, StructureError, TickClock, TickError, Tree, DEFAULT_PERIOD};
use crate::dds::{BusError, GlobalDataSpace, ParticipantId, Value};
use crate::transform;

/// One tree to run, under its own namespace and clock.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberSpec {
    pub namespace: String,
    pub tree: BTNode,
    /// Overrides the period declared on the root.
    pub period: Option<u64>,
    pub join_at: u64,
    pub leave_at: Option<u64>,
}

impl MemberSpec {
    pub fn new(namespace: impl Into<String>, tree: BTNode) -> Self {
        Self { namespace: namespace.into(), tree, period: None, join_at: 0, leave_at: None }
    }

    pub fn with_period(mut self, period: u64) -> Self {
        self.period = Some(period);
        self
    }

    pub fn joining_at(mut self, t: u64) -> Self {
        self.join_at = t;
        self
    }

    pub fn leaving_at(mut self, t: u64) -> Self {
        self.leave_at = Some(t);
        self
    }
}

impl From<transform::Member> for MemberSpec {
    fn from(m: transform::Member) -> Self {
        Self::new(m.namespace, m.tree)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Last virtual instant at which anything may happen.
    pub max_ticks: u64,
    /// Stop each member after its root first reports a final status.
    pub one_shot: bool,
    pub seed: u64,
    /// Offset each member's clock by a seeded phase within one period.
    pub jitter: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { max_ticks: 10_000, one_shot: false, seed: 0, jitter: false }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("member `{0}`: {1}")]
    Structure(String, StructureError),
    #[error("namespace `{0}` is used by two members")]
    DuplicateMember(String),
    #[error("bad period for `{0}`: periods must be positive")]
    Period(String),
    #[error("tick {tick}: `{ns}` could not join: {error}")]
    Join { tick: u64, ns: String, error: BusError },
    #[error("tick {tick}: `{ns}`: {error}")]
    Tick { tick: u64, ns: String, error: TickError },
    #[error("tick {tick}: invariant violated: {message}")]
    Invariant { tick: u64, message: String },
}

#[derive(Debug)]
struct Member {
    ns: String,
    tree: Tree,
    join_at: u64,
    leave_at: Option<u64>,
    participant: Option<ParticipantId>,
    clients: BTreeMap<NodeId, ActionClient>,
    servers: BTreeMap<NodeId, ActionServer>,
    server_last: BTreeMap<NodeId, Status>,
    recovery: Vec<(NodeId, Range<NodeId>)>,
    recovery_prev: Vec<bool>,
    last_root: Option<Status>,
    stopped: bool,
}

/// Subtrees standing behind a served action in a fallback.
fn recovery_roots(tree: &Tree) -> Vec<(NodeId, Range<NodeId>)> {
    let mut out = Vec::new();
    for f in tree.find(|k| matches!(k, NodeKind::Fallback)) {
        let ch = tree.children(f);
        if matches!(tree.kind(ch[0]), NodeKind::ActionServer { .. }) {
            out.extend(ch[1..].iter().map(|&c| (c, tree.subtree(c))));
        }
    }
    out
}

/// Deterministic scheduler: members tick in order of (next due instant,
/// namespace), all sharing one data space.
pub struct Runtime<E> {
    bus: GlobalDataSpace,
    env: E,
    members: Vec<Member>,
    records: Vec<Record>,
    cfg: RunConfig,
    next_announce: u64,
    now: u64,
    violations_seen: usize,
    finished: bool,
}

impl<E: Environment> Runtime<E> {
    pub fn new(env: E, specs: Vec<MemberSpec>, cfg: RunConfig) -> Result<Self, RuntimeError> {
        let mut order: Vec<&MemberSpec> = specs.iter().collect();
        order.sort_by(|a, b| a.namespace.cmp(&b.namespace));
        for w in order.windows(2) {
            if w[0].namespace == w[1].namespace {
                return Err(RuntimeError::DuplicateMember(w[0].namespace.clone()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut offsets = BTreeMap::new();
        for s in &order {
            let period = s.period.or(s.tree.period()).unwrap_or(DEFAULT_PERIOD);
            if period == 0 {
                return Err(RuntimeError::Period(s.namespace.clone()));
            }
            let offset = if cfg.jitter { rng.gen_range(0..period) } else { 0 };
            offsets.insert(s.namespace.clone(), (period, offset));
        }
        let mut members = Vec::new();
        for s in specs {
            let (period, offset) = offsets[&s.namespace];
            let clock = TickClock::starting_at(period, s.join_at + offset);
            let tree = Tree::with_clock(s.tree, clock).map_err(|e| RuntimeError::Structure(s.namespace.clone(), e))?;
            let recovery = recovery_roots(&tree);
            members.push(Member {
                recovery_prev: vec![false; recovery.len()],
                recovery,
                ns: s.namespace,
                tree,
                join_at: s.join_at,
                leave_at: s.leave_at,
                participant: None,
                clients: BTreeMap::new(),
                servers: BTreeMap::new(),
                server_last: BTreeMap::new(),
                last_root: None,
                stopped: false,
            });
        }
        let bus = GlobalDataSpace::new();
        let next_announce = bus.announce_period();
        Ok(Self { bus, env, members, records: Vec::new(), cfg, next_announce, now: 0, violations_seen: 0, finished: false })
    }

    pub fn bus(&self) -> &GlobalDataSpace {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut GlobalDataSpace {
        &mut self.bus
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn trace(&self) -> Trace {
        Trace { header: TraceHeader::new(Mode::Det, self.cfg.seed), records: self.records.clone() }
    }

    pub fn root_status(&self, ns: &str) -> Option<Status> {
        self.members.iter().find(|m| m.ns == ns).and_then(|m| m.last_root)
    }

    pub fn participant(&self, ns: &str) -> Option<ParticipantId> {
        self.members.iter().find(|m| m.ns == ns).and_then(|m| m.participant)
    }

    pub fn client(&self, ns: &str, node: NodeId) -> Option<&ActionClient> {
        self.members.iter().find(|m| m.ns == ns).and_then(|m| m.clients.get(&node))
    }

    pub fn server(&self, ns: &str, node: NodeId) -> Option<&ActionServer> {
        self.members.iter().find(|m| m.ns == ns).and_then(|m| m.servers.get(&node))
    }

    pub fn run(&mut self) -> Result<(), RuntimeError> {
        self.run_until(|_| false)
    }

    /// Steps until the run ends or `stop` holds after a step.
    pub fn run_until(&mut self, mut stop: impl FnMut(&Self) -> bool) -> Result<(), RuntimeError> {
        while self.step()? {
            if stop(self) {
                break;
            }
        }
        Ok(())
    }

    fn push(&mut self, ns: &str, kind: EventKind, payload: Json) {
        self.records.push(Record { tick: self.now, ns: ns.into(), kind, payload });
    }

    /// The instant the next [`step`](Self::step) will run at, if any.
    pub fn next_instant(&self) -> Option<u64> {
        let (due, lifecycle) = self.pending();
        let t = match (due.map(|d| d.0), lifecycle) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return None,
        };
        (!self.finished && t <= self.cfg.max_ticks).then_some(t)
    }

    fn pending(&self) -> (Option<(u64, usize)>, Option<u64>) {
        let due = self
            .members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.participant.is_some() && !m.stopped)
            .min_by(|(_, a), (_, b)| (a.tree.clock().next_due(), &a.ns).cmp(&(b.tree.clock().next_due(), &b.ns)))
            .map(|(i, m)| (m.tree.clock().next_due(), i));
        let lifecycle = self
            .members
            .iter()
            .filter(|m| !m.stopped)
            .filter_map(|m| if m.participant.is_none() { Some(m.join_at) } else { m.leave_at })
            .min();
        (due, lifecycle)
    }

    /// Runs one scheduler instant: lifecycle changes, then at most one member
    /// tick. Returns false once nothing is left to do.
    pub fn step(&mut self) -> Result<bool, RuntimeError> {
        let Some(t) = self.next_instant() else {
            self.finished = true;
            return Ok(false);
        };
        let due = self.pending().0;
        self.advance_time(t);
        self.lifecycle(t)?;
        if let Some((d, i)) = due {
            if d == t && !self.members[i].stopped {
                self.tick_member(i)?;
            }
        }
        Ok(true)
    }

    fn advance_time(&mut self, t: u64) {
        while self.next_announce <= t {
            self.bus.set_time(self.next_announce);
            for m in &self.members {
                if let Some(p) = m.participant {
                    let _ = self.bus.announce(p);
                }
            }
            self.next_announce += self.bus.announce_period();
        }
        self.now = t;
        self.bus.set_time(t);
        self.env.advance_to(t);
        self.drain_env();
    }

    fn drain_env(&mut self) {
        for e in self.env.take_events() {
            self.push(&e.ns, e.kind, e.payload);
        }
    }

    fn lifecycle(&mut self, t: u64) -> Result<(), RuntimeError> {
        for i in 0..self.members.len() {
            let m = &mut self.members[i];
            if m.stopped {
                continue;
            }
            if m.participant.is_none() && m.join_at <= t {
                let p = self
                    .bus
                    .join(&m.ns)
                    .map_err(|error| RuntimeError::Join { tick: t, ns: m.ns.clone(), error })?;
                m.participant = Some(p);
                for id in m.tree.find(|k| matches!(k, NodeKind::ActionClient { .. } | NodeKind::ActionServer { .. })) {
                    let bind = |ns: &str, action: &str| {
                        ActionTopics::new(ns, action).map_err(|e| RuntimeError::Tick {
                            tick: t,
                            ns: m.ns.clone(),
                            error: TickError::Protocol(e.to_string()),
                        })
                    };
                    match m.tree.kind(id).clone() {
                        NodeKind::ActionClient { action, namespace, .. } => {
                            let c = ActionClient::new(bind(&namespace, &action)?, p, id as u32);
                            let _ = c.bind(&mut self.bus);
                            m.clients.insert(id, c);
                        }
                        NodeKind::ActionServer { action, .. } => {
                            let s = ActionServer::new(bind(&m.ns, &action)?, p);
                            let _ = s.bind(&mut self.bus);
                            m.servers.insert(id, s);
                        }
                        _ => {}
                    }
                }
            } else if let (Some(p), Some(leave)) = (m.participant, m.leave_at) {
                if leave <= t {
                    self.bus.leave(p);
                    m.stopped = true;
                }
            }
        }
        Ok(())
    }

    fn tick_member(&mut self, i: usize) -> Result<(), RuntimeError> {
        let ns = self.members[i].ns.clone();
        self.env.before_tick(&ns);
        let now = self.now;
        let m = &mut self.members[i];
        let mut entered = vec![false; m.recovery.len()];
        let mut records = Vec::new();
        let result = {
            let mut ctx = Ctx {
                ns: &ns,
                now,
                bus: &mut self.bus,
                env: &mut self.env,
                clients: &mut m.clients,
                servers: &mut m.servers,
                server_last: &mut m.server_last,
                records: &mut records,
                recovery: &m.recovery,
                prev: &m.recovery_prev,
                entered: &mut entered,
                cause: None,
            };
            m.tree.tick(&mut ctx)
        };
        // A terminal root resets the tree, so the next visit is a fresh entry.
        let reset = matches!(result, Ok(s) if s.is_terminal());
        for (k, (rid, _)) in m.recovery.iter().enumerate() {
            let ticked = m.tree.was_ticked(*rid);
            if ticked && !m.recovery_prev[k] && !entered[k] {
                records.push(Record { tick: now, ns: ns.clone(), kind: EventKind::RecoveryEnter, payload: json!({ "node": rid }) });
            }
            m.recovery_prev[k] = ticked && !reset;
        }
        let status = result.map_err(|error| RuntimeError::Tick { tick: now, ns: ns.clone(), error })?;
        if m.last_root != Some(status) {
            records.push(Record {
                tick: now,
                ns: ns.clone(),
                kind: EventKind::TickStatus,
                payload: json!({ "node": "root", "status": status.as_str() }),
            });
            m.last_root = Some(status);
        }
        if self.cfg.one_shot && status.is_terminal() {
            m.stopped = true;
        }
        self.records.extend(records);
        for p in self.bus.take_log() {
            let payload = json!({
                "topic": p.topic,
                "version": p.version,
                "value": serde_json::to_value(&p.value).expect("values serialize"),
            });
            self.push(&p.namespace, EventKind::Publish, payload);
        }
        self.drain_env();
        if let Err(message) = self.env.check_invariants() {
            return Err(RuntimeError::Invariant { tick: now, message });
        }
        let violations = self.bus.violations();
        if violations.len() > self.violations_seen {
            let v = &violations[self.violations_seen];
            let message = format!("{} wrote {} held by {}", v.attempted_by, v.topic, v.holder);
            self.violations_seen = violations.len();
            return Err(RuntimeError::Invariant { tick: now, message });
        }
        Ok(())
    }
}

struct Exec<'a, E> {
    env: &'a mut E,
    ns: &'a str,
    action: &'a str,
}

impl<E: Environment> CommandExecutor for Exec<'_, E> {
    fn begin(&mut self, command: &Value) {
        self.env.begin(self.ns, self.action, command);
    }

    fn step(&mut self, command: &Value) -> ExecStep {
        self.env.step(self.ns, self.action, command)
    }

    fn halt(&mut self) {
        self.env.halt(self.ns, self.action);
    }
}

struct Ctx<'a, E> {
    ns: &'a str,
    now: u64,
    bus: &'a mut GlobalDataSpace,
    env: &'a mut E,
    clients: &'a mut BTreeMap<NodeId, ActionClient>,
    servers: &'a mut BTreeMap<NodeId, ActionServer>,
    server_last: &'a mut BTreeMap<NodeId, Status>,
    records: &'a mut Vec<Record>,
    recovery: &'a [(NodeId, Range<NodeId>)],
    prev: &'a [bool],
    entered: &'a mut Vec<bool>,
    cause: Option<Json>,
}

impl<E> Ctx<'_, E> {
    fn push(&mut self, kind: EventKind, payload: Json) {
        self.records.push(Record { tick: self.now, ns: self.ns.into(), kind, payload });
    }
}

fn unbound(what: &str) -> TickError {
    TickError::Protocol(format!("{what} is not bound to the data space"))
}

impl<E: Environment> Leaves for Ctx<'_, E> {
    fn condition(&mut self, _: NodeId, name: &str, bb: &Blackboard) -> Result<bool, TickError> {
        self.env.condition(self.ns, name, bb)
    }

    fn action(&mut self, node: NodeId, name: &str, input: Option<&str>, bb: &mut Blackboard) -> Result<Status, TickError> {
        self.env.action(self.ns, node, name, input, bb)
    }

    fn action_client(
        &mut self,
        node: NodeId,
        action: &str,
        namespace: &str,
        input: Option<&str>,
        bb: &mut Blackboard,
    ) -> Result<Status, TickError> {
        let command = match input {
            Some(key) => Value::from(bb.get(key)?),
            None => Value::Text(action.into()),
        };
        let client = self.clients.get_mut(&node).ok_or_else(|| unbound("action client"))?;
        let t = client.tick(self.bus, command);
        for e in t.events {
            if let ProtocolEvent::Request { id, command } = e {
                let payload = json!({
                    "server": namespace,
                    "action": action,
                    "id": id.to_string(),
                    "command": serde_json::to_value(&command).expect("values serialize"),
                });
                self.push(EventKind::Request, payload);
            }
        }
        self.cause = t.cause.map(|c| serde_json::to_value(c).expect("causes serialize"));
        Ok(t.status)
    }

    fn action_server(&mut self, node: NodeId, action: &str, _: &mut Blackboard) -> Result<Status, TickError> {
        let server = self.servers.get_mut(&node).ok_or_else(|| unbound("action server"))?;
        let mut exec = Exec { env: &mut *self.env, ns: self.ns, action };
        let t = server.tick(self.bus, &mut exec).map_err(|e| TickError::Protocol(e.to_string()))?;
        for e in t.events {
            if let ProtocolEvent::Response { id, verdict } = e {
                let payload = json!({
                    "action": action,
                    "id": id.to_string(),
                    "verdict": serde_json::to_value(verdict).expect("verdicts serialize"),
                });
                self.push(EventKind::Response, payload);
            }
        }
        self.cause = t.fault.map(Json::String);
        Ok(t.status)
    }

    fn reset(&mut self, node: NodeId, kind: &NodeKind) {
        match kind {
            NodeKind::ActionClient { .. } => {
                if let Some(c) = self.clients.get_mut(&node) {
                    c.withdraw(self.bus);
                }
            }
            NodeKind::ActionServer { action, .. } => {
                if let Some(s) = self.servers.get_mut(&node) {
                    s.reset(&mut Exec { env: &mut *self.env, ns: self.ns, action });
                }
                self.server_last.remove(&node);
            }
            NodeKind::Action { .. } => self.env.reset_action(self.ns, node),
            _ => {}
        }
    }

    fn observe(&mut self, node: NodeId, kind: &NodeKind, status: Status) {
        for (k, (rid, range)) in self.recovery.iter().enumerate() {
            if range.contains(&node) && !self.prev[k] && !self.entered[k] {
                self.entered[k] = true;
                self.push(EventKind::RecoveryEnter, json!({ "node": rid }));
            }
        }
        let cause = self.cause.take();
        let (label, name, extra) = match kind {
            NodeKind::Condition(name) => ("condition", name, None),
            NodeKind::Action { name, .. } if status.is_terminal() => ("action", name, None),
            NodeKind::ActionClient { action, namespace, .. } if status.is_terminal() => {
                ("action-client", action, Some(namespace.clone()))
            }
            NodeKind::ActionServer { action, .. } => {
                let before = self.server_last.insert(node, status);
                if !status.is_terminal() || before == Some(status) {
                    return;
                }
                ("action-server", action, None)
            }
            _ => return,
        };
        let mut payload = json!({ "node": label, "name": name, "status": status.as_str() });
        if let Some(server) = extra {
            payload["server"] = json!(server);
        }
        if let Some(c) = cause {
            payload["cause"] = c;
        }
        self.push(EventKind::TickStatus, payload);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::ScriptedEnv;
    use crate::transform::split_sequence;

    fn run(env: ScriptedEnv, specs: Vec<MemberSpec>) -> Runtime<ScriptedEnv> {
        let mut rt = Runtime::new(env, specs, RunConfig { one_shot: true, ..RunConfig::default() }).unwrap();
        rt.run().unwrap();
        rt
    }

    #[test]
    fn split_sequence_preserves_completions() {
        let env = || ScriptedEnv::new().script("A", 3, Status::Success).script("B", 2, Status::Success);
        let (a, b) = (BTNode::action("A"), BTNode::action("B"));
        let original = run(env(), vec![MemberSpec::new("r", BTNode::root(BTNode::sequence(vec![a.clone(), b.clone()])))]);
        let sys = split_sequence(&a, &b, "r").unwrap();
        let split = run(env(), sys.into_members().into_iter().map(MemberSpec::from).collect());
        let want = original.trace().completions(Some("r"));
        assert_eq!(want.len(), 2);
        assert_eq!(split.trace().completions(Some("r")), want);
        assert_eq!(split.root_status("r"), Some(Status::Success));
        assert_eq!(split.root_status("r-client"), Some(Status::Success));
    }

    #[test]
    fn ties_break_by_namespace_and_clocks_start_after_one_period() {
        let env = ScriptedEnv::new().script("A", 1, Status::Success);
        let tree = || BTNode::root(BTNode::action("A"));
        let rt = run(env, vec![MemberSpec::new("b", tree()), MemberSpec::new("a", tree())]);
        let roots: Vec<_> = rt.records().iter().filter(|r| r.payload["node"] == "root").map(|r| (r.tick, r.ns.clone())).collect();
        assert_eq!(roots, vec![(100, "a".to_string()), (100, "b".to_string())]);
    }

    #[test]
    fn late_joiner_is_unresolved_until_it_joins() {
        let env = ScriptedEnv::new().script("A", 2, Status::Success);
        let client = BTNode::root(BTNode::repeat(
            crate::bt::RepeatCount::Times(1),
            BTNode::fallback(vec![BTNode::action_client("A", "late", None), BTNode::action_client("A", "late", None)]),
        ));
        let server = BTNode::root(BTNode::action_server("A"));
        let specs = vec![
            MemberSpec::new("tpu", client).with_period(10),
            MemberSpec::new("late", server).with_period(10).joining_at(55),
        ];
        let mut rt = Runtime::new(env, specs, RunConfig { max_ticks: 200, ..RunConfig::default() }).unwrap();
        rt.run().unwrap();
        let causes: Vec<_> = rt.records().iter().filter_map(|r| r.payload.get("cause").cloned()).collect();
        assert!(causes.iter().any(|c| c == "unresolved"));
        assert!(rt.records().iter().any(|r| r.ns == "late" && r.payload["node"] == "action-server" && r.payload["status"] == "success"));
    }
}
