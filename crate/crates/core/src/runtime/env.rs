use std::collections::BTreeMap;

use serde_json::Value as Json;

use super::trace::EventKind;
use crate::action::ExecStep;
use crate::bt::{Blackboard, NodeId, Status, TickError};
use crate::dds::Value;
use crate::sim::{World, WorldEventKind};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvEvent {
    pub ns: String,
    pub kind: EventKind,
    pub payload: Json,
}

/// What the leaves of every member mean, and the work behind every server.
pub trait Environment {
    /// Called once per scheduler instant before any member ticks at `now`.
    fn advance_to(&mut self, _now: u64) {}
    /// Called before each tick of the member at `ns`.
    fn before_tick(&mut self, _ns: &str) {}
    fn condition(&mut self, ns: &str, name: &str, bb: &Blackboard) -> Result<bool, TickError>;
    fn action(
        &mut self,
        ns: &str,
        node: NodeId,
        name: &str,
        input: Option<&str>,
        bb: &mut Blackboard,
    ) -> Result<Status, TickError>;
    fn reset_action(&mut self, _ns: &str, _node: NodeId) {}
    fn begin(&mut self, ns: &str, action: &str, command: &Value);
    fn step(&mut self, ns: &str, action: &str, command: &Value) -> ExecStep;
    fn halt(&mut self, _ns: &str, _action: &str) {}
    fn take_events(&mut self) -> Vec<EnvEvent> {
        Vec::new()
    }
    fn check_invariants(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Duration and final status of a scripted action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Script {
    pub duration: u32,
    pub outcome: Status,
}

impl Script {
    pub fn new(duration: u32, outcome: Status) -> Self {
        Self { duration: duration.max(1), outcome }
    }
}

/// Actions that run for a fixed number of ticks and then succeed or fail,
/// whether ticked as plain leaves or executed behind a server.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEnv {
    scripts: BTreeMap<String, Script>,
    conditions: BTreeMap<String, bool>,
    leaves: BTreeMap<(String, NodeId), u32>,
    servers: BTreeMap<(String, String), u32>,
}

impl ScriptedEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(mut self, action: &str, duration: u32, outcome: Status) -> Self {
        self.scripts.insert(action.into(), Script::new(duration, outcome));
        self
    }

    pub fn condition_value(mut self, name: &str, value: bool) -> Self {
        self.conditions.insert(name.into(), value);
        self
    }

    fn lookup(&self, action: &str) -> Result<Script, TickError> {
        self.scripts.get(action).copied().ok_or_else(|| TickError::UnknownAction(action.into()))
    }
}

impl Environment for ScriptedEnv {
    fn condition(&mut self, _: &str, name: &str, _: &Blackboard) -> Result<bool, TickError> {
        self.conditions.get(name).copied().ok_or_else(|| TickError::UnknownCondition(name.into()))
    }

    fn action(&mut self, ns: &str, node: NodeId, name: &str, _: Option<&str>, _: &mut Blackboard) -> Result<Status, TickError> {
        let script = self.lookup(name)?;
        let n = self.leaves.entry((ns.into(), node)).or_default();
        *n += 1;
        if *n >= script.duration {
            self.leaves.remove(&(ns.into(), node));
            Ok(script.outcome)
        } else {
            Ok(Status::Running)
        }
    }

    fn reset_action(&mut self, ns: &str, node: NodeId) {
        self.leaves.remove(&(ns.into(), node));
    }

    fn begin(&mut self, ns: &str, action: &str, _: &Value) {
        self.servers.insert((ns.into(), action.into()), 0);
    }

    fn step(&mut self, ns: &str, action: &str, _: &Value) -> ExecStep {
        let script = match self.lookup(action) {
            Ok(s) => s,
            Err(e) => return ExecStep::Fault(e.to_string()),
        };
        let n = self.servers.entry((ns.into(), action.into())).or_default();
        *n += 1;
        let progress = Value::Int(*n as i64);
        if *n < script.duration {
            ExecStep::Progress(progress)
        } else if script.outcome == Status::Success {
            ExecStep::Complete(progress)
        } else {
            ExecStep::Fault("scripted failure".into())
        }
    }

    fn halt(&mut self, ns: &str, action: &str) {
        self.servers.remove(&(ns.to_string(), action.to_string()));
    }
}

impl Environment for World {
    fn advance_to(&mut self, now: u64) {
        self.apply_faults(now);
    }

    fn before_tick(&mut self, ns: &str) {
        self.before_robot_tick(ns);
    }

    fn condition(&mut self, ns: &str, name: &str, _: &Blackboard) -> Result<bool, TickError> {
        World::condition(self, ns, name)
    }

    fn action(&mut self, ns: &str, node: NodeId, name: &str, _: Option<&str>, _: &mut Blackboard) -> Result<Status, TickError> {
        World::action(self, ns, node, name)
    }

    fn reset_action(&mut self, ns: &str, node: NodeId) {
        World::reset_action(self, ns, node);
    }

    fn begin(&mut self, ns: &str, action: &str, command: &Value) {
        if action == crate::agents::NAVIGATE {
            self.nav_begin(ns, command);
        }
    }

    fn step(&mut self, ns: &str, action: &str, command: &Value) -> ExecStep {
        if action == crate::agents::NAVIGATE {
            self.nav_step(ns, command)
        } else {
            ExecStep::Fault(format!("no executor for `{action}`"))
        }
    }

    fn halt(&mut self, ns: &str, action: &str) {
        if action == crate::agents::NAVIGATE {
            self.nav_halt(ns);
        }
    }

    fn take_events(&mut self) -> Vec<EnvEvent> {
        World::take_events(self)
            .into_iter()
            .map(|e| EnvEvent {
                ns: e.ns,
                kind: match e.kind {
                    WorldEventKind::Arrival => EventKind::Arrival,
                    WorldEventKind::Fault => EventKind::Fault,
                },
                payload: e.payload,
            })
            .collect()
    }

    fn check_invariants(&self) -> Result<(), String> {
        World::check_invariants(self)
    }
}
