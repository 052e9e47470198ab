//! Scenario files: a map reference plus `[section]` blocks of `key = value`
//! lines and a fault schedule.
//!
//! ```text
//! map = empty20.map
//! [run]
//! max-ticks = 10000
//! [goals]
//! g1 = 2 2
//! [robot robot1]
//! start = 2 2
//! backup = 10 10
//! goals = g2 g3 g4 g1
//! [faults]
//! 100 block-cell 17 2 @robot1
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::agents::NamedGoal;
use crate::geom::Cell;
use crate::runtime::Mode;
use crate::sim::{Fault, FaultKind, MapError, StaticMap};

#[derive(Debug, Clone, PartialEq)]
pub struct RunDoc {
    pub max_ticks: u64,
    pub seed: u64,
    pub mode: Mode,
    /// Stop once every robot has completed this many cycles; 0 never stops early.
    pub cycles: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpuDoc {
    pub namespace: String,
    pub period: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotDoc {
    pub namespace: String,
    pub start: Cell,
    pub backup: Cell,
    pub goals: Vec<String>,
    pub period: u64,
    pub join_at: u64,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDoc {
    pub map_path: PathBuf,
    pub run: RunDoc,
    pub tpu: TpuDoc,
    pub goals: Vec<(NamedGoal, usize)>,
    pub robots: Vec<RobotDoc>,
    pub faults: Vec<(Fault, usize)>,
}

impl ScenarioDoc {
    pub fn goal(&self, name: &str) -> Option<&NamedGoal> {
        self.goals.iter().map(|(g, _)| g).find(|g| g.name == name)
    }

    /// The robot's goal list resolved to coordinates.
    pub fn goal_list(&self, robot: &RobotDoc) -> Vec<NamedGoal> {
        robot.goals.iter().filter_map(|n| self.goal(n).cloned()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Map { path: PathBuf, source: MapError },
}

fn invalid(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { line, message: message.into() }
}

pub const DEFAULT_ROBOT_PERIOD: u64 = 10;
pub const DEFAULT_TPU_PERIOD: u64 = 20;

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError> {
    v.parse().map_err(|_| invalid(line, format!("`{key}` expects a number, got `{v}`")))
}

fn cell(line: usize, key: &str, v: &str) -> Result<Cell, ScenarioError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        [x, y] => Ok(Cell::new(num(line, key, x)?, num(line, key, y)?)),
        _ => Err(invalid(line, format!("`{key}` expects `X Y`, got `{v}`"))),
    }
}

fn segment_ok(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Default)]
struct RobotDraft {
    namespace: String,
    line: usize,
    start: Option<Cell>,
    backup: Option<Cell>,
    goals: Option<Vec<String>>,
    period: Option<u64>,
    join_at: Option<u64>,
}

enum Section {
    Top,
    Run,
    Tpu,
    Goals,
    Robot(usize),
    Faults,
}

fn parse_fault(line: usize, text: &str) -> Result<Fault, ScenarioError> {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let target = match words.last() {
        Some(w) if w.starts_with('@') => {
            let t = w[1..].to_string();
            words.pop();
            Some(t)
        }
        _ => None,
    };
    let [at, kind, args @ ..] = words.as_slice() else {
        return Err(invalid(line, "fault lines read `TICK KIND ARGS [@ROBOT]`"));
    };
    let at = num(line, "tick", at)?;
    let kind = match (*kind, args) {
        ("block-cell", [x, y]) => FaultKind::BlockCell(Cell::new(num(line, "x", x)?, num(line, "y", y)?)),
        ("unblock-cell", [x, y]) => FaultKind::UnblockCell(Cell::new(num(line, "x", x)?, num(line, "y", y)?)),
        ("drain-battery", [level]) => {
            let level: f64 = num(line, "level", level)?;
            if !(0.0..=100.0).contains(&level) {
                return Err(invalid(line, "battery level must lie in 0..=100"));
            }
            FaultKind::DrainBattery(level)
        }
        (k @ ("block-cell" | "unblock-cell" | "drain-battery"), _) => {
            return Err(invalid(line, format!("wrong arguments for `{k}`")))
        }
        (other, _) => return Err(invalid(line, format!("unknown fault `{other}`"))),
    };
    Ok(Fault { at, kind, target })
}

/// Parses and checks everything that does not need the map.
pub fn parse_scenario(text: &str) -> Result<ScenarioDoc, ScenarioError> {
    let mut map_path = None;
    let mut run = RunDoc { max_ticks: 10_000, seed: 0, mode: Mode::Det, cycles: 3 };
    let mut tpu = TpuDoc { namespace: "tpu".into(), period: DEFAULT_TPU_PERIOD };
    let mut goals: Vec<(NamedGoal, usize)> = Vec::new();
    let mut robots: Vec<RobotDraft> = Vec::new();
    let mut faults = Vec::new();
    let mut section = Section::Top;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        if let Some(h) = content.strip_prefix('[') {
            let h = h.strip_suffix(']').ok_or_else(|| invalid(line, "unterminated section header"))?.trim();
            let words: Vec<&str> = h.split_whitespace().collect();
            section = match words.as_slice() {
                ["run"] => Section::Run,
                ["tpu"] => Section::Tpu,
                ["goals"] => Section::Goals,
                ["faults"] => Section::Faults,
                ["robot", ns] => {
                    if !segment_ok(ns) {
                        return Err(invalid(line, format!("bad robot namespace `{ns}`")));
                    }
                    if robots.iter().any(|r| r.namespace == *ns) {
                        return Err(invalid(line, format!("duplicate namespace `{ns}`")));
                    }
                    robots.push(RobotDraft { namespace: ns.to_string(), line, ..Default::default() });
                    Section::Robot(robots.len() - 1)
                }
                _ => return Err(invalid(line, format!("unknown section `[{h}]`"))),
            };
            continue;
        }
        if let Section::Faults = section {
            faults.push((parse_fault(line, content)?, line));
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| invalid(line, "expected `key = value`"))?;
        match (&section, key) {
            (Section::Top, "map") => map_path = Some(PathBuf::from(value)),
            (Section::Run, "max-ticks") => run.max_ticks = num(line, key, value)?,
            (Section::Run, "seed") => run.seed = num(line, key, value)?,
            (Section::Run, "cycles") => run.cycles = num(line, key, value)?,
            (Section::Run, "mode") => {
                run.mode = match value {
                    "det" => Mode::Det,
                    "udp" => Mode::Udp,
                    other => return Err(invalid(line, format!("mode must be `det` or `udp`, got `{other}`"))),
                }
            }
            (Section::Tpu, "namespace") => {
                if !segment_ok(value) {
                    return Err(invalid(line, format!("bad namespace `{value}`")));
                }
                tpu.namespace = value.into();
            }
            (Section::Tpu, "period") => tpu.period = num(line, key, value)?,
            (Section::Goals, name) => {
                if goals.iter().any(|(g, _)| g.name == name) {
                    return Err(invalid(line, format!("duplicate goal `{name}`")));
                }
                goals.push((NamedGoal::new(name, cell(line, name, value)?), line));
            }
            (Section::Robot(r), _) => {
                let d = &mut robots[*r];
                match key {
                    "start" => d.start = Some(cell(line, key, value)?),
                    "backup" => d.backup = Some(cell(line, key, value)?),
                    "goals" => d.goals = Some(value.split_whitespace().map(str::to_string).collect()),
                    "period" => d.period = Some(num(line, key, value)?),
                    "join-at" => d.join_at = Some(num(line, key, value)?),
                    _ => return Err(invalid(line, format!("unknown robot key `{key}`"))),
                }
            }
            _ => return Err(invalid(line, format!("unexpected key `{key}` here"))),
        }
    }

    let map_path = map_path.ok_or_else(|| invalid(1, "missing `map = PATH`"))?;
    if run.max_ticks == 0 {
        return Err(invalid(1, "max-ticks must be positive"));
    }
    if tpu.period == 0 {
        return Err(invalid(1, "tpu period must be positive"));
    }
    if robots.is_empty() {
        return Err(invalid(text.lines().count().max(1), "no `[robot NAME]` section"));
    }
    let mut out = Vec::new();
    for d in robots {
        if d.namespace == tpu.namespace {
            return Err(invalid(d.line, format!("duplicate namespace `{}`", d.namespace)));
        }
        let need = |what: &str| invalid(d.line, format!("robot `{}` has no `{what}`", d.namespace));
        let list = d.goals.ok_or_else(|| need("goals"))?;
        if list.is_empty() {
            return Err(need("goals"));
        }
        if let Some(g) = list.iter().find(|g| !goals.iter().any(|(n, _)| n.name == **g)) {
            return Err(invalid(d.line, format!("robot `{}` names unknown goal `{g}`", d.namespace)));
        }
        let period = d.period.unwrap_or(DEFAULT_ROBOT_PERIOD);
        if period == 0 {
            return Err(invalid(d.line, "period must be positive"));
        }
        let start = d.start.ok_or_else(|| need("start"))?;
        out.push(RobotDoc {
            backup: d.backup.unwrap_or(start),
            start,
            namespace: d.namespace,
            goals: list,
            period,
            join_at: d.join_at.unwrap_or(0),
            line: d.line,
        });
    }
    let names: BTreeSet<&str> = out.iter().map(|r| r.namespace.as_str()).collect();
    for (f, line) in &faults {
        if let Some(t) = &f.target {
            if !names.contains(t.as_str()) {
                return Err(invalid(*line, format!("fault targets unknown robot `{t}`")));
            }
        }
    }
    Ok(ScenarioDoc { map_path, run, tpu, goals, robots: out, faults })
}

/// A scenario with its map loaded and every coordinate checked against it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDoc,
    pub map: StaticMap,
}

impl Scenario {
    pub fn from_parts(doc: ScenarioDoc, map: StaticMap) -> Result<Self, ScenarioError> {
        let check = |line: usize, what: &str, c: Cell| {
            if !map.in_bounds(c) {
                Err(invalid(line, format!("{what} {c} is off the {}x{} map", map.width(), map.height())))
            } else if map.is_occupied(c) {
                Err(invalid(line, format!("{what} {c} is an occupied cell")))
            } else {
                Ok(())
            }
        };
        for (g, line) in &doc.goals {
            check(*line, &format!("goal `{}`", g.name), g.cell)?;
        }
        for r in &doc.robots {
            check(r.line, "start", r.start)?;
            check(r.line, "backup", r.backup)?;
        }
        for (f, line) in &doc.faults {
            if let FaultKind::BlockCell(c) | FaultKind::UnblockCell(c) = f.kind {
                if !map.in_bounds(c) {
                    return Err(invalid(*line, format!("fault cell {c} is off the map")));
                }
            }
        }
        Ok(Self { doc, map })
    }

    /// Reads a scenario and the map it names, relative to the scenario's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|source| ScenarioError::Io { path: p.into(), source });
        let doc = parse_scenario(&read(path)?)?;
        let map_path = path.parent().unwrap_or(Path::new(".")).join(&doc.map_path);
        let map = StaticMap::parse(&read(&map_path)?).map_err(|source| ScenarioError::Map { path: map_path, source })?;
        Self::from_parts(doc, map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "map = m.map\n[goals]\ng1 = 1 1\ng2 = 3 1\n[robot r1]\nstart = 1 1\ngoals = g2 g1\n";

    fn line_of(e: ScenarioError) -> usize {
        match e {
            ScenarioError::Invalid { line, .. } => line,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parses_sections() {
        let text = format!("{BASE}period = 5\n[faults]\n100 block-cell 3 1 @r1\n300 drain-battery 5\n[run]\nseed = 9\n");
        let d = parse_scenario(&text).unwrap();
        assert_eq!(d.robots[0].period, 5);
        assert_eq!(d.robots[0].backup, Cell::new(1, 1));
        assert_eq!(d.faults.len(), 2);
        assert_eq!(d.faults[0].0.target.as_deref(), Some("r1"));
        assert_eq!(d.run.seed, 9);
        assert_eq!(d.goal_list(&d.robots[0])[0].cell, Cell::new(3, 1));
    }

    #[test]
    fn validation_errors_have_lines() {
        let dup = format!("{BASE}[robot r1]\nstart = 0 0\ngoals = g1\n");
        assert_eq!(line_of(parse_scenario(&dup).unwrap_err()), 8);
        let unknown = BASE.replace("g2 g1", "g9");
        assert_eq!(line_of(parse_scenario(&unknown).unwrap_err()), 5);
        let bad_fault = format!("{BASE}[faults]\n10 explode 1 1\n");
        assert_eq!(line_of(parse_scenario(&bad_fault).unwrap_err()), 9);
        assert!(parse_scenario(&format!("{BASE}[run]\nmax-ticks = 0\n")).is_err());
        assert!(parse_scenario(&BASE.replace("map = m.map\n", "")).is_err());
    }

    #[test]
    fn off_map_goal_is_rejected_with_its_line() {
        let doc = parse_scenario(&BASE.replace("g2 = 3 1", "g2 = 30 1")).unwrap();
        let e = Scenario::from_parts(doc, StaticMap::empty(5, 5)).unwrap_err();
        assert_eq!(line_of(e), 4);
    }
}
