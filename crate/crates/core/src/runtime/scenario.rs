use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::scheduler::{MemberSpec, RunConfig, Runtime, RuntimeError};
use super::trace::{EventKind, Record, Trace};
use super::udp::UdpOptions;
use crate::agents::{self, NamedGoal};
use crate::dsl::Scenario;
use crate::geom::Cell;
use crate::sim::{RobotConfig, World, WorldError};
use crate::transform::TransformError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub max_ticks: Option<u64>,
    pub cycles: Option<u32>,
    pub seed: Option<u64>,
    pub strict_collisions: bool,
    pub jitter: bool,
    pub robot: RobotConfig,
    pub udp: UdpOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { max_ticks: None, cycles: None, seed: None, strict_collisions: false, jitter: true, robot: RobotConfig::default(), udp: UdpOptions::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
}

/// Tracks goal arrivals against each robot's goal list.
#[derive(Debug, Clone, Default)]
pub struct Progress {
    goals: BTreeMap<String, Vec<NamedGoal>>,
    visits: BTreeMap<String, Vec<String>>,
    in_order: BTreeMap<String, usize>,
    skips: BTreeMap<String, usize>,
    scanned: usize,
}

impl Progress {
    pub fn new(goals: BTreeMap<String, Vec<NamedGoal>>) -> Self {
        Self { goals, ..Self::default() }
    }

    fn name_of(&self, ns: &str, cell: Cell) -> String {
        self.goals[ns].iter().find(|g| g.cell == cell).map_or_else(|| format!("({}, {})", cell.x, cell.y), |g| g.name.clone())
    }

    pub fn feed(&mut self, records: &[Record]) {
        for r in &records[self.scanned..] {
            if r.kind != EventKind::Arrival || r.payload["kind"] != "goal" || !self.goals.contains_key(&r.ns) {
                continue;
            }
            let cell = Cell::new(
                r.payload["cell"][0].as_i64().unwrap_or(-1) as i32,
                r.payload["cell"][1].as_i64().unwrap_or(-1) as i32,
            );
            let name = self.name_of(&r.ns, cell);
            let list = &self.goals[&r.ns];
            let k = self.in_order.entry(r.ns.clone()).or_default();
            let skips = self.skips.entry(r.ns.clone()).or_default();
            if *skips == 0 && list[*k % list.len()].cell == cell {
                *k += 1;
            } else {
                *skips += 1;
            }
            self.visits.entry(r.ns.clone()).or_default().push(name);
        }
        self.scanned = records.len();
    }

    /// Full cycles completed before any out-of-order arrival.
    pub fn cycles(&self, ns: &str) -> u32 {
        let n = self.goals.get(ns).map_or(1, |g| g.len().max(1));
        (self.in_order.get(ns).copied().unwrap_or(0) / n) as u32
    }

    pub fn skips(&self, ns: &str) -> usize {
        self.skips.get(ns).copied().unwrap_or(0)
    }

    pub fn visits(&self, ns: &str) -> &[String] {
        self.visits.get(ns).map_or(&[], |v| v.as_slice())
    }

    pub fn all_reached(&self, k: u32) -> bool {
        self.goals.keys().all(|ns| self.cycles(ns) >= k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotSummary {
    pub namespace: String,
    pub goals: Vec<String>,
    pub visits: Vec<String>,
    pub cycles: u32,
    pub skips: usize,
    pub recoveries: usize,
    pub final_cell: [i32; 2],
    pub battery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub ticks: u64,
    pub robots: Vec<RobotSummary>,
    pub rejected_requests: usize,
    pub publishes: u64,
    /// Set when the run stopped on an invariant violation.
    pub violation: Option<String>,
}

pub struct RunOutcome {
    pub trace: Trace,
    pub summary: Summary,
    pub world: World,
    pub error: Option<RuntimeError>,
}

/// Everything a run needs, before a scheduler is chosen.
pub struct Plan {
    pub world: World,
    pub members: Vec<MemberSpec>,
    pub config: RunConfig,
    pub progress: Progress,
}

/// The composed system for a scenario: the world plus the runtime members.
pub fn plan(scn: &Scenario, opts: &RunOptions) -> Result<Plan, BuildError> {
    let doc = &scn.doc;
    let goal_sets: Vec<Vec<NamedGoal>> = doc.robots.iter().map(|r| doc.goal_list(r)).collect();
    let nss: Vec<String> = doc.robots.iter().map(|r| r.namespace.clone()).collect();
    let system = agents::build_system(&goal_sets, &nss, &doc.tpu.namespace)?;

    let mut world = World::new(Arc::new(scn.map.clone()), opts.robot.clone());
    world.set_strict_collisions(opts.strict_collisions);
    let nav = agents::build_navigation_bt();
    for r in &doc.robots {
        world.add_robot(&r.namespace, r.start, r.backup, &nav)?;
    }
    for (f, _) in &doc.faults {
        world.schedule(f.clone())?;
    }

    let mut specs = Vec::new();
    for m in system.clients {
        specs.push(MemberSpec::new(m.namespace, m.tree).with_period(doc.tpu.period));
    }
    for (m, r) in system.servers.into_iter().zip(&doc.robots) {
        specs.push(MemberSpec::new(m.namespace, m.tree).with_period(r.period).joining_at(r.join_at));
    }
    let cfg = RunConfig {
        max_ticks: opts.max_ticks.unwrap_or(doc.run.max_ticks),
        one_shot: false,
        seed: opts.seed.unwrap_or(doc.run.seed),
        jitter: opts.jitter,
    };
    let progress = Progress::new(nss.into_iter().zip(goal_sets).collect());
    Ok(Plan { world, members: specs, config: cfg, progress })
}

pub fn build(scn: &Scenario, opts: &RunOptions) -> Result<(Runtime<World>, Progress), BuildError> {
    let p = plan(scn, opts)?;
    Ok((Runtime::new(p.world, p.members, p.config)?, p.progress))
}

pub fn summarize(
    world: &World,
    records: &[Record],
    ticks: u64,
    publishes: u64,
    progress: &Progress,
    error: Option<&RuntimeError>,
) -> Summary {
    let robots = world
        .robot_names()
        .map(|ns| {
            let body = world.robot(ns).unwrap();
            RobotSummary {
                namespace: ns.clone(),
                goals: progress.goals[ns].iter().map(|g| g.name.clone()).collect(),
                visits: progress.visits(ns).to_vec(),
                cycles: progress.cycles(ns),
                skips: progress.skips(ns),
                recoveries: records.iter().filter(|r| r.ns == *ns && r.kind == EventKind::RecoveryEnter).count(),
                final_cell: [body.state().pose.cell.x, body.state().pose.cell.y],
                battery: body.state().battery,
            }
        })
        .collect();
    Summary {
        ticks,
        robots,
        rejected_requests: records
            .iter()
            .filter(|r| r.kind == EventKind::Response && r.payload["verdict"] == "command-rejected")
            .count(),
        publishes,
        violation: error.map(|e| e.to_string()),
    }
}

/// Runs a scenario in deterministic mode. Invariant failures end the run
/// early and are reported in the outcome rather than as an error.
pub fn run_scenario(scn: &Scenario, opts: &RunOptions) -> Result<RunOutcome, BuildError> {
    let (mut rt, mut progress) = build(scn, opts)?;
    let cycles = opts.cycles.unwrap_or(scn.doc.run.cycles);
    let result = rt.run_until(|rt| {
        progress.feed(rt.records());
        cycles > 0 && progress.all_reached(cycles)
    });
    progress.feed(rt.records());
    let error = result.err();
    let summary = summarize(rt.env(), rt.records(), rt.now(), rt.bus().publish_count(), &progress, error.as_ref());
    let trace = rt.trace();
    let world = rt.env().clone();
    Ok(RunOutcome { trace, summary, world, error })
}
