//! Builders for the concrete trees: navigation, recovery, per-robot task
//! and the coalesced planning unit.

use crate::bt::{BTNode, BbValue, RepeatCount};
use crate::geom::Cell;
use crate::transform::{self, AsyncParallel, TransformError};

pub const NAVIGATE: &str = "navigate";

/// A named goal point; the name doubles as its blackboard key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedGoal {
    pub name: String,
    pub cell: Cell,
}

impl NamedGoal {
    pub fn new(name: impl Into<String>, cell: Cell) -> Self {
        Self { name: name.into(), cell }
    }
}

/// The tree run by the navigate executor on every server step.
///
/// Planning failure and blocked following each get one retry, preceded by a
/// costmap clear unless the goal changed.
pub fn build_navigation_bt() -> BTNode {
    let a = |n: &str| BTNode::action(n);
    let retry = |clear: &str, tail: Vec<BTNode>| {
        let mut steps = vec![BTNode::fallback(vec![BTNode::condition("goal-updated"), a(clear)])];
        steps.extend(tail);
        BTNode::sequence(steps)
    };
    BTNode::root(BTNode::sequence(vec![
        a("read-goal"),
        BTNode::fallback(vec![a("plan-global"), retry("clear-global-costmap", vec![a("replan")])]),
        BTNode::fallback(vec![
            a("follow-path"),
            retry("clear-local-costmap", vec![a("replan"), a("follow-path")]),
        ]),
    ]))
}

/// Battery branch first, then clear, spin and wait.
pub fn build_recovery_bt() -> BTNode {
    BTNode::fallback(vec![
        BTNode::sequence(vec![BTNode::condition("battery-low"), BTNode::action("return-to-backup")]),
        BTNode::sequence(vec![BTNode::action("clear-all"), BTNode::action("spin"), BTNode::action("wait")]),
    ])
}

/// The unsplit task: visit the goals in order, forever.
pub fn build_task(goals: &[NamedGoal]) -> BTNode {
    let mut steps = Vec::with_capacity(goals.len() * 2);
    for g in goals {
        steps.push(BTNode::set_blackboard(g.name.clone(), BbValue::Coord(g.cell)));
        steps.push(BTNode::action_with_input(NAVIGATE, g.name.clone()));
    }
    BTNode::root(BTNode::repeat(RepeatCount::Infinite, BTNode::sequence(steps)))
}

/// The task's client tree, commanding the robot at `robot_ns`.
pub fn build_task_bt(goals: &[NamedGoal], robot_ns: &str) -> BTNode {
    transform::task_client(&build_task(goals), robot_ns).expect("task has exactly one action")
}

/// Robot k (1-based) starts toward goal (k mod n) + 1.
pub fn rotation(goals: &[NamedGoal], k: usize) -> Vec<NamedGoal> {
    let mut out = goals.to_vec();
    if !out.is_empty() {
        out.rotate_left(k % goals.len());
    }
    out
}

pub fn build_tpu(goal_sets: &[Vec<NamedGoal>], robot_nss: &[String], period: Option<u64>) -> Result<BTNode, TransformError> {
    let system = build_system(goal_sets, robot_nss, "tpu")?;
    let tpu = system.clients.into_iter().next().unwrap().tree;
    Ok(match period {
        Some(p) => BTNode::root_with_period(tpu.children[0].clone(), p),
        None => tpu,
    })
}

/// Planning unit plus one served robot tree per namespace.
pub fn build_system(goal_sets: &[Vec<NamedGoal>], robot_nss: &[String], tpu_ns: &str) -> Result<AsyncParallel, TransformError> {
    let tasks: Vec<BTNode> = goal_sets.iter().map(|g| build_task(g)).collect();
    let recoveries = vec![build_recovery_bt(); tasks.len()];
    transform::compose_system(&tasks, &recoveries, tpu_ns, robot_nss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::NodeKind;

    fn goals() -> Vec<NamedGoal> {
        [(2, 2), (17, 2), (17, 17), (2, 17)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| NamedGoal::new(format!("g{}", i + 1), Cell::new(x, y)))
            .collect()
    }

    #[test]
    fn trees_are_valid() {
        build_navigation_bt().validate().unwrap();
        BTNode::root(build_recovery_bt()).validate().unwrap();
        build_task_bt(&goals(), "robot1").validate().unwrap();
    }

    #[test]
    fn rotation_offsets() {
        let names = |k| rotation(&goals(), k).into_iter().map(|g| g.name).collect::<Vec<_>>();
        assert_eq!(names(1), ["g2", "g3", "g4", "g1"]);
        assert_eq!(names(3), ["g4", "g1", "g2", "g3"]);
        assert_eq!(names(4), ["g1", "g2", "g3", "g4"]);
    }

    #[test]
    fn tpu_coalesces_and_refuses_duplicates() {
        let nss: Vec<String> = (1..=3).map(|k| format!("robot{k}")).collect();
        let sets: Vec<_> = (1..=3).map(|k| rotation(&goals(), k)).collect();
        let tpu = build_tpu(&sets, &nss, Some(20)).unwrap();
        assert_eq!(tpu.period(), Some(20));
        assert!(matches!(tpu.children[0].kind, NodeKind::Parallel { failure_threshold: 2 }));
        let dup = vec!["robot1".to_string(); 2];
        assert!(build_tpu(&sets[..2], &dup, None).is_err());
        let one = build_tpu(&sets[..1], &nss[..1], None).unwrap();
        assert_eq!(one, build_task_bt(&sets[0], "robot1"));
    }
}
