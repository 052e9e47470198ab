#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use mbbt::dsl::{parse_scenario, Scenario};
use mbbt::geom::Cell;
use mbbt::runtime::{run_scenario, RunOptions, RunOutcome};
use mbbt::sim::{neighbors, StaticMap};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn shipped_path() -> PathBuf {
    scenarios_dir().join("three_robots_four_goals.scn")
}

pub fn shipped_text() -> String {
    std::fs::read_to_string(shipped_path()).unwrap()
}

pub fn shipped() -> Scenario {
    Scenario::load(&shipped_path()).unwrap()
}

/// The shipped scenario with extra lines appended.
pub fn shipped_with(extra: &str) -> Scenario {
    let doc = parse_scenario(&format!("{}\n{extra}", shipped_text())).unwrap();
    let map = StaticMap::parse(&std::fs::read_to_string(scenarios_dir().join("empty20.map")).unwrap()).unwrap();
    Scenario::from_parts(doc, map).unwrap()
}

pub fn run(scn: &Scenario) -> RunOutcome {
    run_scenario(scn, &RunOptions::default()).unwrap()
}

/// Breadth-first shortest path length, 4-connected.
pub fn bfs_cost(map: &StaticMap, from: Cell, to: Cell) -> Option<usize> {
    if map.is_occupied(from) || map.is_occupied(to) {
        return None;
    }
    let (w, h) = (map.width() as usize, map.height() as usize);
    let idx = |c: Cell| c.y as usize * w + c.x as usize;
    let mut dist = vec![usize::MAX; w * h];
    dist[idx(from)] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            return Some(dist[idx(c)]);
        }
        for n in neighbors(c) {
            if !map.is_occupied(n) && dist[idx(n)] == usize::MAX {
                dist[idx(n)] = dist[idx(c)] + 1;
                queue.push_back(n);
            }
        }
    }
    None
}
