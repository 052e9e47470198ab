use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use serde_json::json;

use super::grid::{Layer, OccupancyGrid, StaticMap};
use super::planner::plan_global;
use super::robot::{FollowStep, RobotConfig, RobotState, Spin, Wait};
use crate::action::ExecStep;
use crate::bt::{BTNode, Blackboard, Leaves, NodeId, NodeKind, Status, TickError, Tree};
use crate::dds::Value;
use crate::geom::{Cell, Goal, Pose};

#[derive(Debug, Clone, PartialEq)]
pub enum FaultKind {
    BlockCell(Cell),
    UnblockCell(Cell),
    /// Drops the battery to the given percentage.
    DrainBattery(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub at: u64,
    pub kind: FaultKind,
    /// Robot whose world alone is affected; `None` affects every robot.
    pub target: Option<String>,
}

impl Fault {
    pub fn label(&self) -> &'static str {
        match self.kind {
            FaultKind::BlockCell(_) => "block-cell",
            FaultKind::UnblockCell(_) => "unblock-cell",
            FaultKind::DrainBattery(_) => "drain-battery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("robot `{0}` already exists")]
    DuplicateRobot(String),
    #[error("no robot named `{0}`")]
    UnknownRobot(String),
    #[error("{what} {cell} of `{robot}` is not a free map cell")]
    NotFree { robot: String, what: &'static str, cell: Cell },
    #[error(transparent)]
    Structure(#[from] crate::bt::StructureError),
}

/// Something the world wants recorded in the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldEvent {
    pub ns: String,
    pub kind: WorldEventKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldEventKind {
    Arrival,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Member,
    Nav,
}

#[derive(Debug, Clone)]
enum Prim {
    Spin(Spin),
    Wait(Wait),
    Backup { planned: bool },
}

/// Everything about one robot except its navigation tree.
#[derive(Debug, Clone)]
pub struct Body {
    ns: String,
    state: RobotState,
    grid: OccupancyGrid,
    private: BTreeSet<Cell>,
    command: Option<Goal>,
    goal: Option<Goal>,
    attempted_for: Option<Goal>,
    prims: BTreeMap<(Level, NodeId), Prim>,
    trail: Vec<Cell>,
}

fn pose_json(p: &Pose) -> serde_json::Value {
    json!({ "x": p.cell.x, "y": p.cell.y, "theta": p.theta })
}

impl Body {
    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    /// Cells visited, in order, without repeats of consecutive cells.
    pub fn trail(&self) -> &[Cell] {
        &self.trail
    }

    fn arrival(&self, kind: &str, events: &mut Vec<WorldEvent>) {
        events.push(WorldEvent {
            ns: self.ns.clone(),
            kind: WorldEventKind::Arrival,
            payload: json!({
                "kind": kind,
                "cell": [self.state.pose.cell.x, self.state.pose.cell.y],
                "pose": pose_json(&self.state.pose),
                "battery": self.state.battery,
            }),
        });
    }

    fn note_position(&mut self) {
        if self.trail.last() != Some(&self.state.pose.cell) {
            self.trail.push(self.state.pose.cell);
        }
    }

    fn check(&self, name: &str, cfg: &RobotConfig) -> Result<bool, TickError> {
        match name {
            "battery-low" => Ok(!self.state.battery_fair(cfg.battery_threshold)),
            "battery-fair" => Ok(self.state.battery_fair(cfg.battery_threshold)),
            "goal-updated" => Ok(self.command != self.attempted_for),
            other => Err(TickError::UnknownCondition(other.into())),
        }
    }

    fn plan_to_goal(&mut self) -> Status {
        self.attempted_for = self.goal;
        let Some(goal) = self.goal else { return Status::Failure };
        match plan_global(&self.grid, self.state.pose.cell, goal.cell) {
            Ok(path) => {
                self.state.set_path(path, goal.cell);
                Status::Success
            }
            Err(_) => {
                self.state.path = None;
                Status::Failure
            }
        }
    }

    fn follow(&mut self, cfg: &RobotConfig, obstacles: &BTreeSet<Cell>) -> Status {
        // Contact check: cells about to be entered are sensed directly.
        if let Some((path, _)) = &self.state.path {
            for &c in path.iter().take(cfg.speed.max(1) as usize) {
                if obstacles.contains(&c) || self.private.contains(&c) {
                    self.grid.mark(c);
                }
            }
        }
        let s = match self.state.follow_step(&self.grid, cfg) {
            Ok(FollowStep::Arrived) => Status::Success,
            Ok(FollowStep::Progressed) => Status::Running,
            Ok(FollowStep::Blocked) | Err(_) => Status::Failure,
        };
        self.note_position();
        s
    }

    fn act(
        &mut self,
        level: Level,
        node: NodeId,
        name: &str,
        cfg: &RobotConfig,
        obstacles: &BTreeSet<Cell>,
        events: &mut Vec<WorldEvent>,
    ) -> Result<Status, TickError> {
        let status = match name {
            "read-goal" => {
                self.goal = self.command;
                if self.goal.is_some() { Status::Success } else { Status::Failure }
            }
            "plan-global" | "replan" => self.plan_to_goal(),
            "follow-path" => self.follow(cfg, obstacles),
            "clear-global-costmap" => {
                self.grid.clear(Layer::Global);
                Status::Success
            }
            "clear-local-costmap" => {
                self.grid.clear(Layer::Local);
                Status::Success
            }
            "clear-all" => {
                self.grid.clear(Layer::All);
                Status::Success
            }
            "spin" => {
                let prim = self.prims.entry((level, node)).or_insert_with(|| Prim::Spin(Spin::new(cfg.spin_duration)));
                let Prim::Spin(spin) = prim else { unreachable!() };
                spin.step(&mut self.state.pose)
            }
            "wait" => {
                let prim = self.prims.entry((level, node)).or_insert_with(|| Prim::Wait(Wait::new(cfg.wait_duration)));
                let Prim::Wait(wait) = prim else { unreachable!() };
                wait.step()
            }
            "return-to-backup" => {
                let planned = matches!(self.prims.get(&(level, node)), Some(Prim::Backup { planned: true }));
                if !planned {
                    let backup = self.state.backup;
                    match plan_global(&self.grid, self.state.pose.cell, backup) {
                        Ok(path) => self.state.set_path(path, backup),
                        Err(_) => return Ok(Status::Failure),
                    }
                    self.prims.insert((level, node), Prim::Backup { planned: true });
                }
                let s = self.follow(cfg, obstacles);
                if s == Status::Success {
                    self.state.battery = 100.0;
                    self.arrival("backup", events);
                }
                s
            }
            other => return Err(TickError::UnknownAction(other.into())),
        };
        if status.is_terminal() {
            self.prims.remove(&(level, node));
        }
        Ok(status)
    }
}

struct NavLeaves<'a> {
    body: &'a mut Body,
    cfg: &'a RobotConfig,
    obstacles: &'a BTreeSet<Cell>,
    events: &'a mut Vec<WorldEvent>,
}

impl Leaves for NavLeaves<'_> {
    fn condition(&mut self, _: NodeId, name: &str, _: &Blackboard) -> Result<bool, TickError> {
        self.body.check(name, self.cfg)
    }

    fn action(&mut self, node: NodeId, name: &str, _: Option<&str>, _: &mut Blackboard) -> Result<Status, TickError> {
        self.body.act(Level::Nav, node, name, self.cfg, self.obstacles, self.events)
    }

    fn reset(&mut self, node: NodeId, _: &NodeKind) {
        self.body.prims.remove(&(Level::Nav, node));
    }
}

#[derive(Debug, Clone)]
struct Robot {
    body: Body,
    nav: Tree,
}

/// The simulated world: one static map, shared obstacles, and per-robot
/// state, costmaps and private obstacles.
#[derive(Debug, Clone)]
pub struct World {
    map: Arc<StaticMap>,
    cfg: RobotConfig,
    robots: BTreeMap<String, Robot>,
    obstacles: BTreeSet<Cell>,
    faults: Vec<Fault>,
    applied: usize,
    strict_collisions: bool,
    events: Vec<WorldEvent>,
}

impl World {
    pub fn new(map: Arc<StaticMap>, cfg: RobotConfig) -> Self {
        Self {
            map,
            cfg,
            robots: BTreeMap::new(),
            obstacles: BTreeSet::new(),
            faults: Vec::new(),
            applied: 0,
            strict_collisions: false,
            events: Vec::new(),
        }
    }

    pub fn map(&self) -> &StaticMap {
        &self.map
    }

    pub fn config(&self) -> &RobotConfig {
        &self.cfg
    }

    pub fn set_strict_collisions(&mut self, on: bool) {
        self.strict_collisions = on;
    }

    /// `navigation` is the tree the robot's navigate executor runs.
    pub fn add_robot(&mut self, ns: &str, start: Cell, backup: Cell, navigation: &BTNode) -> Result<(), WorldError> {
        if self.robots.contains_key(ns) {
            return Err(WorldError::DuplicateRobot(ns.into()));
        }
        for (what, cell) in [("start", start), ("backup", backup)] {
            if self.map.is_occupied(cell) {
                return Err(WorldError::NotFree { robot: ns.into(), what, cell });
            }
        }
        let body = Body {
            ns: ns.into(),
            state: RobotState::new(start, backup),
            grid: OccupancyGrid::new(self.map.clone()),
            private: BTreeSet::new(),
            command: None,
            goal: None,
            attempted_for: None,
            prims: BTreeMap::new(),
            trail: vec![start],
        };
        self.robots.insert(ns.into(), Robot { body, nav: Tree::new(navigation.clone())? });
        Ok(())
    }

    pub fn robot(&self, ns: &str) -> Option<&Body> {
        self.robots.get(ns).map(|r| &r.body)
    }

    pub fn robot_names(&self) -> impl Iterator<Item = &String> {
        self.robots.keys()
    }

    pub fn obstacles(&self) -> &BTreeSet<Cell> {
        &self.obstacles
    }

    pub fn schedule(&mut self, fault: Fault) -> Result<(), WorldError> {
        if let Some(t) = &fault.target {
            if !self.robots.contains_key(t) {
                return Err(WorldError::UnknownRobot(t.clone()));
            }
        }
        let pos = self.faults[self.applied..].partition_point(|f| f.at <= fault.at) + self.applied;
        self.faults.insert(pos, fault);
        Ok(())
    }

    pub fn take_events(&mut self) -> Vec<WorldEvent> {
        std::mem::take(&mut self.events)
    }

    /// Applies every scheduled fault due at or before `now`.
    pub fn apply_faults(&mut self, now: u64) {
        while self.applied < self.faults.len() && self.faults[self.applied].at <= now {
            let fault = self.faults[self.applied].clone();
            self.applied += 1;
            let outcome = self.apply(&fault);
            let mut payload = json!({ "fault": fault.label(), "at": fault.at, "applied": outcome.is_ok() });
            match fault.kind {
                FaultKind::BlockCell(c) | FaultKind::UnblockCell(c) => payload["cell"] = json!([c.x, c.y]),
                FaultKind::DrainBattery(level) => payload["level"] = json!(level),
            }
            if let Err(reason) = outcome {
                payload["reason"] = json!(reason);
            }
            let ns = fault.target.clone().unwrap_or_else(|| "world".into());
            self.events.push(WorldEvent { ns, kind: WorldEventKind::Fault, payload });
        }
    }

    fn apply(&mut self, fault: &Fault) -> Result<(), String> {
        let targets: Vec<String> = match &fault.target {
            Some(t) => vec![t.clone()],
            None => self.robots.keys().cloned().collect(),
        };
        match fault.kind {
            FaultKind::BlockCell(c) => {
                if !self.map.in_bounds(c) {
                    return Err(format!("cell {c} is off the map"));
                }
                if let Some(ns) = targets.iter().find(|ns| self.robots[*ns].body.state.pose.cell == c) {
                    return Err(format!("cell {c} is under `{ns}`"));
                }
                match &fault.target {
                    Some(t) => {
                        self.robots.get_mut(t).unwrap().body.private.insert(c);
                    }
                    None => {
                        self.obstacles.insert(c);
                    }
                }
            }
            FaultKind::UnblockCell(c) => match &fault.target {
                Some(t) => {
                    self.robots.get_mut(t).unwrap().body.private.remove(&c);
                }
                None => {
                    self.obstacles.remove(&c);
                }
            },
            FaultKind::DrainBattery(level) => {
                for ns in targets {
                    let s = &mut self.robots.get_mut(&ns).unwrap().body.state;
                    s.battery = s.battery.min(level.clamp(0.0, 100.0));
                }
            }
        }
        Ok(())
    }

    /// Per-tick upkeep before a robot's tree is ticked: collisions check,
    /// battery drain and obstacle sensing.
    pub fn before_robot_tick(&mut self, ns: &str) {
        let Some(cell) = self.robots.get(ns).map(|r| r.body.state.pose.cell) else { return };
        if self.strict_collisions {
            for (other, r) in &self.robots {
                if other != ns && r.body.state.pose.cell == cell {
                    self.events.push(WorldEvent {
                        ns: ns.into(),
                        kind: WorldEventKind::Fault,
                        payload: json!({ "warning": "co-occupancy", "with": other, "cell": [cell.x, cell.y] }),
                    });
                }
            }
        }
        let range = self.cfg.sensor_range as i32;
        let drain = self.cfg.drain;
        let obstacles = &self.obstacles;
        let body = &mut self.robots.get_mut(ns).unwrap().body;
        body.state.battery_step(drain);
        for dy in -range..=range {
            for dx in -range..=range {
                let c = Cell::new(cell.x + dx, cell.y + dy);
                if dx.abs() + dy.abs() > range || !self.map.in_bounds(c) {
                    continue;
                }
                if obstacles.contains(&c) || body.private.contains(&c) {
                    body.grid.mark(c);
                } else {
                    body.grid.unmark(c);
                }
            }
        }
    }

    pub fn condition(&mut self, ns: &str, name: &str) -> Result<bool, TickError> {
        let r = self.robots.get(ns).ok_or_else(|| TickError::UnknownCondition(format!("{ns}:{name}")))?;
        r.body.check(name, &self.cfg)
    }

    pub fn action(&mut self, ns: &str, node: NodeId, name: &str) -> Result<Status, TickError> {
        let r = self.robots.get_mut(ns).ok_or_else(|| TickError::UnknownAction(format!("{ns}:{name}")))?;
        r.body.act(Level::Member, node, name, &self.cfg, &self.obstacles, &mut self.events)
    }

    pub fn reset_action(&mut self, ns: &str, node: NodeId) {
        if let Some(r) = self.robots.get_mut(ns) {
            r.body.prims.remove(&(Level::Member, node));
        }
    }

    pub fn nav_begin(&mut self, ns: &str, command: &Value) {
        let Some(r) = self.robots.get_mut(ns) else { return };
        r.body.command = command.as_goal();
        let mut leaves = NavLeaves { body: &mut r.body, cfg: &self.cfg, obstacles: &self.obstacles, events: &mut self.events };
        r.nav.reset(&mut leaves);
    }

    /// One step of the navigate executor.
    pub fn nav_step(&mut self, ns: &str, command: &Value) -> ExecStep {
        let Some(r) = self.robots.get_mut(ns) else {
            return ExecStep::Fault(format!("no robot `{ns}`"));
        };
        let Some(goal) = command.as_goal() else {
            return ExecStep::Fault("command is not a goal".into());
        };
        if !r.body.state.battery_fair(self.cfg.battery_threshold) {
            return ExecStep::Fault("battery low".into());
        }
        r.body.command = Some(goal);
        let mut leaves = NavLeaves { body: &mut r.body, cfg: &self.cfg, obstacles: &self.obstacles, events: &mut self.events };
        match r.nav.tick(&mut leaves) {
            Ok(Status::Running) => ExecStep::Progress(Value::Pose(r.body.state.pose)),
            Ok(Status::Success) => {
                let heading = goal.canonical().heading_deg as f64 * PI / 180.0;
                r.body.state.pose = Pose::new(r.body.state.pose.cell, heading);
                r.body.arrival("goal", &mut self.events);
                ExecStep::Complete(Value::Pose(r.body.state.pose))
            }
            Ok(Status::Failure) => ExecStep::Fault("navigation failed".into()),
            Err(e) => ExecStep::Fault(e.to_string()),
        }
    }

    pub fn nav_halt(&mut self, ns: &str) {
        if let Some(r) = self.robots.get_mut(ns) {
            r.body.state.path = None;
            let mut leaves = NavLeaves { body: &mut r.body, cfg: &self.cfg, obstacles: &self.obstacles, events: &mut self.events };
            r.nav.reset(&mut leaves);
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (ns, r) in &self.robots {
            let s = &r.body.state;
            if self.map.is_occupied(s.pose.cell) {
                return Err(format!("`{ns}` stands on occupied cell {}", s.pose.cell));
            }
            if self.obstacles.contains(&s.pose.cell) || r.body.private.contains(&s.pose.cell) {
                return Err(format!("`{ns}` stands on obstacle {}", s.pose.cell));
            }
            if !(0.0..=100.0).contains(&s.battery) {
                return Err(format!("`{ns}` battery {} out of range", s.battery));
            }
        }
        Ok(())
    }
}
