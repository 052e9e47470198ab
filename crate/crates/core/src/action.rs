//! Split actions: the client and server halves of one action, exchanging
//! command, state and result through topics on the data space.
//!
//! Every action bound under a namespace owns five topics:
//! `/<namespace>/<action>/cmd|state|result|req|resp`. The client side is the
//! single writer of `cmd` and `req`; the server side writes `state`,
//! `result` and `resp`.
//!
//! `req` holds the list of requests currently open at the client participant,
//! and `resp` the server's verdict for each of them, so several clients under
//! one participant can address the same server without losing requests to the
//! depth-1 store. `state` and `result` are tagged with the request they
//! belong to.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bt::Status;
use crate::dds::{resolve_topic, BusError, GlobalDataSpace, ParticipantId, TopicError, Value};

/// Client ticks without a matching response before a request counts as rejected.
pub const RESPONSE_TIMEOUT_TICKS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId {
    pub participant: u32,
    pub client: u32,
    pub seq: u32,
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}.c{}#{}", self.participant, self.client, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub command: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    CommandRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: RequestId,
    pub verdict: Verdict,
}

/// The five topic names of one action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTopics {
    pub namespace: String,
    pub action: String,
    pub cmd: String,
    pub state: String,
    pub result: String,
    pub req: String,
    pub resp: String,
}

impl ActionTopics {
    pub fn new(namespace: &str, action: &str) -> Result<Self, TopicError> {
        let t = |leaf: &str| resolve_topic(namespace, &format!("{action}/{leaf}"));
        Ok(Self {
            namespace: namespace.to_string(),
            action: action.to_string(),
            cmd: t("cmd")?,
            state: t("state")?,
            result: t("result")?,
            req: t("req")?,
            resp: t("resp")?,
        })
    }

    pub fn client_side(&self) -> [&str; 2] {
        [&self.cmd, &self.req]
    }

    pub fn server_side(&self) -> [&str; 3] {
        [&self.state, &self.result, &self.resp]
    }

    pub fn all(&self) -> [&str; 5] {
        [&self.cmd, &self.state, &self.result, &self.req, &self.resp]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCause {
    /// The server namespace is not among the live participants.
    Unresolved,
    Rejected,
    Timeout,
    /// The server published Failure for the accepted request.
    ServerFailure,
    Bus(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolEvent {
    Request { id: RequestId, command: Value },
    Response { id: RequestId, verdict: Verdict },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientTick {
    pub status: Status,
    pub cause: Option<FailureCause>,
    pub events: Vec<ProtocolEvent>,
}

#[derive(Debug, Clone)]
struct OpenRequest {
    id: RequestId,
    command: Value,
    waited: u32,
    accepted: bool,
}

fn read_requests(bus: &mut GlobalDataSpace, topic: &str) -> Vec<Request> {
    match bus.read(topic) {
        Some((Value::Requests(list), _)) => list.clone(),
        _ => Vec::new(),
    }
}

/// Client half of a split action.
#[derive(Debug, Clone)]
pub struct ActionClient {
    topics: ActionTopics,
    participant: ParticipantId,
    client: u32,
    seq: u32,
    timeout: u32,
    open: Option<OpenRequest>,
    state: Option<Value>,
    result: Option<Status>,
}

impl ActionClient {
    /// `client` distinguishes clients that share one participant.
    pub fn new(topics: ActionTopics, participant: ParticipantId, client: u32) -> Self {
        Self {
            topics,
            participant,
            client,
            seq: 0,
            timeout: RESPONSE_TIMEOUT_TICKS,
            open: None,
            state: None,
            result: None,
        }
    }

    /// Claims the client-side topics for this participant.
    pub fn bind(&self, bus: &mut GlobalDataSpace) -> Result<(), BusError> {
        for t in self.topics.client_side() {
            bus.claim_writer(self.participant, t)?;
        }
        Ok(())
    }

    pub fn topics(&self) -> &ActionTopics {
        &self.topics
    }

    /// Last state fed back for an accepted request (`x_i`).
    pub fn state(&self) -> Option<&Value> {
        self.state.as_ref()
    }

    /// Last result fed back for an accepted request (`r_i`).
    pub fn last_result(&self) -> Option<Status> {
        self.result
    }

    pub fn open_request(&self) -> Option<RequestId> {
        self.open.as_ref().map(|o| o.id)
    }

    fn fail(&mut self, bus: &mut GlobalDataSpace, cause: FailureCause, events: Vec<ProtocolEvent>) -> ClientTick {
        self.withdraw(bus);
        ClientTick { status: Status::Failure, cause: Some(cause), events }
    }

    /// One tick of the client procedure: publish the command and request,
    /// then map the server's response and result onto a status.
    pub fn tick(&mut self, bus: &mut GlobalDataSpace, command: Value) -> ClientTick {
        let mut events = Vec::new();
        if bus.lookup(&self.topics.namespace).is_none() {
            return self.fail(bus, FailureCause::Unresolved, events);
        }
        let command = command.canonical();
        if self.open.as_ref().is_some_and(|o| o.command != command) {
            self.withdraw(bus);
        }
        let fresh = self.open.is_none();
        if fresh {
            self.seq += 1;
            let id = RequestId { participant: self.participant.0, client: self.client, seq: self.seq };
            if let Err(e) = self.issue(bus, id, &command) {
                return self.fail(bus, FailureCause::Bus(e.to_string()), events);
            }
            events.push(ProtocolEvent::Request { id, command: command.clone() });
            self.open = Some(OpenRequest { id, command, waited: 0, accepted: false });
        }

        let open = self.open.as_mut().expect("request is open");
        let id = open.id;
        if !open.accepted {
            let verdict = match bus.read(&self.topics.resp) {
                Some((Value::Responses(list), _)) => {
                    list.iter().find(|r| r.id == id).map(|r| r.verdict)
                }
                _ => None,
            };
            match verdict {
                Some(Verdict::Accepted) => open.accepted = true,
                Some(Verdict::CommandRejected) => {
                    return self.fail(bus, FailureCause::Rejected, events)
                }
                None => {
                    if !fresh {
                        open.waited += 1;
                    }
                    if open.waited >= self.timeout {
                        return self.fail(bus, FailureCause::Timeout, events);
                    }
                    return ClientTick { status: Status::Running, cause: None, events };
                }
            }
        }

        if let Some((Value::Tagged { request, body }, _)) = bus.read(&self.topics.state) {
            if *request == id {
                self.state = Some((**body).clone());
            }
        }
        let mut result = None;
        if let Some((Value::Tagged { request, body }, _)) = bus.read(&self.topics.result) {
            if *request == id {
                if let Value::Status(s) = **body {
                    result = Some(s);
                }
            }
        }
        if let Some(r) = result {
            self.result = Some(r);
        }
        match result {
            Some(Status::Success) => {
                self.withdraw(bus);
                ClientTick { status: Status::Success, cause: None, events }
            }
            Some(Status::Failure) => self.fail(bus, FailureCause::ServerFailure, events),
            _ => ClientTick { status: Status::Running, cause: None, events },
        }
    }

    fn issue(&self, bus: &mut GlobalDataSpace, id: RequestId, command: &Value) -> Result<(), BusError> {
        bus.publish(self.participant, &self.topics.cmd, command.clone())?;
        let mut list = read_requests(bus, &self.topics.req);
        list.push(Request { id, command: command.clone() });
        bus.publish(self.participant, &self.topics.req, Value::Requests(list))?;
        Ok(())
    }

    /// Closes the open request, if any, and removes it from the request list.
    pub fn withdraw(&mut self, bus: &mut GlobalDataSpace) {
        if let Some(open) = self.open.take() {
            let mut list = read_requests(bus, &self.topics.req);
            let before = list.len();
            list.retain(|r| r.id != open.id);
            if list.len() != before {
                // A departed or foreign participant cannot have taken the role
                // while this client still holds it, so failure here is benign.
                let _ = bus.publish(self.participant, &self.topics.req, Value::Requests(list));
            }
        }
    }
}

/// What a command executor reports after one step.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecStep {
    /// Still working; carries the current state.
    Progress(Value),
    /// Command finished; carries the final state.
    Complete(Value),
    /// Internal fault; the server publishes Failure.
    Fault(String),
}

/// The work behind an action server.
pub trait CommandExecutor {
    fn begin(&mut self, command: &Value);
    fn step(&mut self, command: &Value) -> ExecStep;
    fn halt(&mut self) {}
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerPhase {
    Idle,
    Executing(Value),
    Done(Value),
    Failed(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerTick {
    pub status: Status,
    pub events: Vec<ProtocolEvent>,
    pub fault: Option<String>,
}

/// Server half of a split action.
///
/// A request is acceptable when the server is idle, or when it carries the
/// command already being executed (or just completed). Done and Failed are
/// sticky until [`reset`](Self::reset).
#[derive(Debug, Clone)]
pub struct ActionServer {
    topics: ActionTopics,
    participant: ParticipantId,
    phase: ServerPhase,
    accepted: Option<RequestId>,
    answered: BTreeMap<RequestId, Verdict>,
    last_state: Option<Value>,
    last_result: Option<Value>,
    state_d: Option<Value>,
    result_d: Option<Status>,
}

impl ActionServer {
    pub fn new(topics: ActionTopics, participant: ParticipantId) -> Self {
        Self {
            topics,
            participant,
            phase: ServerPhase::Idle,
            accepted: None,
            answered: BTreeMap::new(),
            last_state: None,
            last_result: None,
            state_d: None,
            result_d: None,
        }
    }

    pub fn bind(&self, bus: &mut GlobalDataSpace) -> Result<(), BusError> {
        for t in self.topics.server_side() {
            bus.claim_writer(self.participant, t)?;
        }
        Ok(())
    }

    pub fn topics(&self) -> &ActionTopics {
        &self.topics
    }

    pub fn phase(&self) -> &ServerPhase {
        &self.phase
    }

    pub fn accepted(&self) -> Option<RequestId> {
        self.accepted
    }

    /// Command currently held by the server (`c_i^d`).
    pub fn command_d(&self) -> Option<&Value> {
        match &self.phase {
            ServerPhase::Idle => None,
            ServerPhase::Executing(c) | ServerPhase::Done(c) | ServerPhase::Failed(c) => Some(c),
        }
    }

    /// Last state produced by the executor (`x_i^d`).
    pub fn state_d(&self) -> Option<&Value> {
        self.state_d.as_ref()
    }

    /// Last result decided by the server (`r_i^d`).
    pub fn result_d(&self) -> Option<Status> {
        self.result_d
    }

    fn put_if_changed(
        bus: &mut GlobalDataSpace,
        who: ParticipantId,
        topic: &str,
        cache: &mut Option<Value>,
        value: Value,
    ) -> Result<(), BusError> {
        if cache.as_ref() != Some(&value) {
            bus.publish(who, topic, value.clone())?;
            *cache = Some(value);
        }
        Ok(())
    }

    fn put_result(&mut self, bus: &mut GlobalDataSpace, id: RequestId, s: Status) -> Result<(), BusError> {
        let v = Value::tagged(id, Value::Status(s));
        Self::put_if_changed(bus, self.participant, &self.topics.result, &mut self.last_result, v)
    }

    fn put_state(&mut self, bus: &mut GlobalDataSpace, id: RequestId, x: Value) -> Result<(), BusError> {
        self.state_d = Some(x.clone());
        let v = Value::tagged(id, x);
        Self::put_if_changed(bus, self.participant, &self.topics.state, &mut self.last_state, v)
    }

    /// One tick of the server procedure.
    pub fn tick(
        &mut self,
        bus: &mut GlobalDataSpace,
        exec: &mut dyn CommandExecutor,
    ) -> Result<ServerTick, BusError> {
        let mut events = Vec::new();
        let requests = read_requests(bus, &self.topics.req);
        self.answered.retain(|id, _| requests.iter().any(|r| r.id == *id));

        let mut new_verdicts = false;
        let mut joined_done = None;
        for r in &requests {
            if self.answered.contains_key(&r.id) {
                continue;
            }
            let cmd = r.command.canonical();
            let acceptable = match &self.phase {
                ServerPhase::Idle => true,
                ServerPhase::Executing(c) | ServerPhase::Done(c) => *c == cmd,
                ServerPhase::Failed(_) => false,
            };
            let verdict = if acceptable {
                if self.phase == ServerPhase::Idle {
                    exec.begin(&cmd);
                    self.phase = ServerPhase::Executing(cmd);
                } else if matches!(self.phase, ServerPhase::Done(_)) {
                    joined_done = Some(r.id);
                }
                self.accepted = Some(r.id);
                Verdict::Accepted
            } else {
                self.put_result(bus, r.id, Status::Failure)?;
                Verdict::CommandRejected
            };
            self.answered.insert(r.id, verdict);
            events.push(ProtocolEvent::Response { id: r.id, verdict });
            new_verdicts = true;
        }
        if new_verdicts {
            let list = self
                .answered
                .iter()
                .map(|(&id, &verdict)| Response { id, verdict })
                .collect();
            bus.publish(self.participant, &self.topics.resp, Value::Responses(list))?;
        }

        let mut fault = None;
        let status = match self.phase.clone() {
            ServerPhase::Idle => Status::Running,
            ServerPhase::Executing(cmd) => {
                let id = self.accepted.expect("executing implies an accepted request");
                match exec.step(&cmd) {
                    ExecStep::Progress(x) => {
                        self.put_state(bus, id, x)?;
                        self.result_d = Some(Status::Running);
                        self.put_result(bus, id, Status::Running)?;
                        Status::Running
                    }
                    ExecStep::Complete(x) => {
                        self.put_state(bus, id, x)?;
                        self.result_d = Some(Status::Success);
                        self.put_result(bus, id, Status::Success)?;
                        self.phase = ServerPhase::Done(cmd);
                        Status::Success
                    }
                    ExecStep::Fault(reason) => {
                        self.result_d = Some(Status::Failure);
                        self.put_result(bus, id, Status::Failure)?;
                        self.phase = ServerPhase::Failed(cmd);
                        fault = Some(reason);
                        Status::Failure
                    }
                }
            }
            ServerPhase::Done(_) => {
                if let Some(id) = joined_done {
                    self.put_result(bus, id, Status::Success)?;
                }
                Status::Success
            }
            ServerPhase::Failed(_) => Status::Failure,
        };
        Ok(ServerTick { status, events, fault })
    }

    /// Returns to Idle. Requests already answered stay answered.
    pub fn reset(&mut self, exec: &mut dyn CommandExecutor) {
        if matches!(self.phase, ServerPhase::Executing(_)) {
            exec.halt();
        }
        self.phase = ServerPhase::Idle;
        self.accepted = None;
    }
}
