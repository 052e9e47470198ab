use super::blackboard::{Blackboard, UnsetKey};
use super::clock::{TickClock, DEFAULT_PERIOD};
use super::node::{BTNode, NodeKind, RepeatCount, Status, StructureError};

/// Preorder index of a node inside a [`Tree`].
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TickError {
    #[error("condition `{0}` is not registered")]
    UnknownCondition(String),
    #[error("action `{0}` is not registered")]
    UnknownAction(String),
    #[error(transparent)]
    Unset(#[from] UnsetKey),
    #[error("{0} nodes are not supported by this execution context")]
    Unsupported(&'static str),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Execution context that gives leaf nodes their meaning.
///
/// The engine owns control flow and latching; implementors evaluate one leaf
/// at a time and never see a latched leaf again until it is reset.
pub trait Leaves {
    fn condition(&mut self, node: NodeId, name: &str, bb: &Blackboard) -> Result<bool, TickError>;

    fn action(
        &mut self,
        node: NodeId,
        name: &str,
        input: Option<&str>,
        bb: &mut Blackboard,
    ) -> Result<Status, TickError>;

    fn action_client(
        &mut self,
        _node: NodeId,
        _action: &str,
        _namespace: &str,
        _input: Option<&str>,
        _bb: &mut Blackboard,
    ) -> Result<Status, TickError> {
        Err(TickError::Unsupported("action-client"))
    }

    fn action_server(
        &mut self,
        _node: NodeId,
        _action: &str,
        _bb: &mut Blackboard,
    ) -> Result<Status, TickError> {
        Err(TickError::Unsupported("action-server"))
    }

    /// Called for every leaf in a subtree that an ancestor re-arms.
    fn reset(&mut self, _node: NodeId, _kind: &NodeKind) {}

    /// Called after every fresh (non-latched) leaf evaluation.
    fn observe(&mut self, _node: NodeId, _kind: &NodeKind, _status: Status) {}
}

#[derive(Debug, Clone)]
struct FlatNode {
    kind: NodeKind,
    children: Vec<NodeId>,
    /// One past the last node of this subtree.
    end: NodeId,
}

/// A validated tree plus its runtime state: clock, blackboard, leaf latches
/// and repeat counters.
///
/// Control-flow nodes keep no memory between ticks; a Sequence or Fallback
/// always restarts from its first child. Plain actions latch their terminal
/// status, and action clients latch Success, until an ancestor re-arms them
/// (a Repeat finishing an iteration, or the root returning a terminal status).
#[derive(Debug, Clone)]
pub struct Tree {
    source: BTNode,
    nodes: Vec<FlatNode>,
    latched: Vec<Option<Status>>,
    iterations: Vec<u32>,
    ticked: Vec<bool>,
    clock: TickClock,
    blackboard: Blackboard,
}

impl Tree {
    pub fn new(root: BTNode) -> Result<Self, StructureError> {
        let period = root.period().unwrap_or(DEFAULT_PERIOD);
        Self::with_clock(root, TickClock::new(period))
    }

    pub fn with_clock(root: BTNode, clock: TickClock) -> Result<Self, StructureError> {
        root.validate()?;
        let mut nodes = Vec::with_capacity(root.size());
        flatten(&root, &mut nodes);
        let n = nodes.len();
        Ok(Self {
            source: root,
            nodes,
            latched: vec![None; n],
            iterations: vec![0; n],
            ticked: vec![false; n],
            clock,
            blackboard: Blackboard::new(),
        })
    }

    pub fn source(&self) -> &BTNode {
        &self.source
    }

    pub fn clock(&self) -> &TickClock {
        &self.clock
    }

    pub fn blackboard(&self) -> &Blackboard {
        &self.blackboard
    }

    pub fn blackboard_mut(&mut self) -> &mut Blackboard {
        &mut self.blackboard
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id].kind
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    /// Ids of every node in the subtree rooted at `id`, including `id`.
    pub fn subtree(&self, id: NodeId) -> std::ops::Range<NodeId> {
        id..self.nodes[id].end
    }

    pub fn find(&self, pred: impl Fn(&NodeKind) -> bool) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| pred(&self.nodes[i].kind)).collect()
    }

    /// Whether the node received a tick during the most recent tree tick.
    pub fn was_ticked(&self, id: NodeId) -> bool {
        self.ticked[id]
    }

    /// Advances the clock by one period and ticks the root.
    pub fn tick(&mut self, leaves: &mut dyn Leaves) -> Result<Status, TickError> {
        self.clock.advance();
        self.ticked.fill(false);
        let status = self.tick_node(0, leaves)?;
        if status.is_terminal() {
            self.reset_subtree(0, leaves);
        }
        Ok(status)
    }

    /// Re-arms every node of the tree.
    pub fn reset(&mut self, leaves: &mut dyn Leaves) {
        self.reset_subtree(0, leaves);
    }

    fn reset_subtree(&mut self, id: NodeId, leaves: &mut dyn Leaves) {
        for j in self.subtree(id) {
            self.latched[j] = None;
            self.iterations[j] = 0;
            if self.nodes[j].kind.is_leaf() {
                leaves.reset(j, &self.nodes[j].kind);
            }
        }
    }

    fn tick_node(&mut self, id: NodeId, leaves: &mut dyn Leaves) -> Result<Status, TickError> {
        self.ticked[id] = true;
        let n_children = self.nodes[id].children.len();
        let status = match self.nodes[id].kind {
            NodeKind::Root { .. } => {
                let child = self.nodes[id].children[0];
                self.tick_node(child, leaves)?
            }
            NodeKind::Sequence => {
                let mut out = Status::Success;
                for i in 0..n_children {
                    let s = self.tick_node(self.nodes[id].children[i], leaves)?;
                    if s != Status::Success {
                        out = s;
                        break;
                    }
                }
                out
            }
            NodeKind::Fallback => {
                let mut out = Status::Failure;
                for i in 0..n_children {
                    let s = self.tick_node(self.nodes[id].children[i], leaves)?;
                    if s != Status::Failure {
                        out = s;
                        break;
                    }
                }
                out
            }
            NodeKind::Parallel { failure_threshold } => {
                let mut failed = 0;
                let mut running = false;
                for i in 0..n_children {
                    match self.tick_node(self.nodes[id].children[i], leaves)? {
                        Status::Failure => failed += 1,
                        Status::Running => running = true,
                        Status::Success => {}
                    }
                }
                if failed > failure_threshold {
                    Status::Failure
                } else if running {
                    Status::Running
                } else {
                    Status::Success
                }
            }
            NodeKind::Repeat(count) => self.tick_repeat(id, count, leaves)?,
            _ => self.tick_leaf(id, leaves)?,
        };
        Ok(status)
    }

    fn tick_repeat(
        &mut self,
        id: NodeId,
        count: RepeatCount,
        leaves: &mut dyn Leaves,
    ) -> Result<Status, TickError> {
        let finished = |done: u32| matches!(count, RepeatCount::Times(n) if done >= n);
        if finished(self.iterations[id]) {
            return Ok(Status::Success);
        }
        let child = self.nodes[id].children[0];
        match self.tick_node(child, leaves)? {
            Status::Success => {
                self.iterations[id] += 1;
                self.reset_subtree(child, leaves);
                if finished(self.iterations[id]) {
                    Ok(Status::Success)
                } else {
                    Ok(Status::Running)
                }
            }
            other => Ok(other),
        }
    }

    fn tick_leaf(&mut self, id: NodeId, leaves: &mut dyn Leaves) -> Result<Status, TickError> {
        if let Some(s) = self.latched[id] {
            return Ok(s);
        }
        let kind = &self.nodes[id].kind;
        let bb = &mut self.blackboard;
        let status = match kind {
            NodeKind::Condition(name) => {
                if leaves.condition(id, name, bb)? {
                    Status::Success
                } else {
                    Status::Failure
                }
            }
            NodeKind::Action { name, input } => leaves.action(id, name, input.as_deref(), bb)?,
            NodeKind::ActionClient { action, namespace, input } => {
                leaves.action_client(id, action, namespace, input.as_deref(), bb)?
            }
            NodeKind::ActionServer { action, .. } => leaves.action_server(id, action, bb)?,
            NodeKind::SetBlackboard { key, value } => {
                bb.set(key.clone(), value.clone());
                Status::Success
            }
            _ => unreachable!("control-flow node dispatched as leaf"),
        };
        leaves.observe(id, kind, status);
        let latch = match kind {
            NodeKind::Action { .. } => status.is_terminal(),
            NodeKind::ActionClient { .. } => status == Status::Success,
            _ => false,
        };
        if latch {
            self.latched[id] = Some(status);
        }
        Ok(status)
    }
}

fn flatten(node: &BTNode, out: &mut Vec<FlatNode>) -> NodeId {
    let id = out.len();
    out.push(FlatNode { kind: node.kind.clone(), children: Vec::new(), end: id + 1 });
    let mut children = Vec::with_capacity(node.children.len());
    for c in &node.children {
        children.push(flatten(c, out));
    }
    let end = out.len();
    out[id].children = children;
    out[id].end = end;
    id
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::bt::blackboard::BbValue;
    use crate::geom::Cell;

    /// Actions named `s`, `f`, `r` always return Success/Failure/Running.
    /// `count:N` succeeds on its N-th tick. Every fresh evaluation is counted.
    #[derive(Default)]
    struct Scripted {
        ticks: BTreeMap<NodeId, u32>,
        resets: u32,
        conditions: BTreeMap<String, bool>,
    }

    impl Leaves for Scripted {
        fn condition(&mut self, node: NodeId, name: &str, _: &Blackboard) -> Result<bool, TickError> {
            *self.ticks.entry(node).or_default() += 1;
            self.conditions
                .get(name)
                .copied()
                .ok_or_else(|| TickError::UnknownCondition(name.into()))
        }

        fn action(
            &mut self,
            node: NodeId,
            name: &str,
            _: Option<&str>,
            _: &mut Blackboard,
        ) -> Result<Status, TickError> {
            let n = self.ticks.entry(node).or_default();
            *n += 1;
            Ok(match name {
                "s" => Status::Success,
                "f" => Status::Failure,
                "r" => Status::Running,
                other => match other.strip_prefix("count:") {
                    Some(k) if *n >= k.parse::<u32>().unwrap() => Status::Success,
                    Some(_) => Status::Running,
                    None => return Err(TickError::UnknownAction(other.into())),
                },
            })
        }

        fn reset(&mut self, node: NodeId, _: &NodeKind) {
            self.resets += 1;
            self.ticks.remove(&node);
        }
    }

    fn leaf(s: Status) -> BTNode {
        BTNode::action(match s {
            Status::Success => "s",
            Status::Failure => "f",
            Status::Running => "r",
        })
    }

    fn once(node: BTNode) -> Status {
        Tree::new(BTNode::root(node)).unwrap().tick(&mut Scripted::default()).unwrap()
    }

    #[test]
    fn single_leaf_and_running_passthrough() {
        assert_eq!(once(BTNode::action("s")), Status::Success);
        let mut t = Tree::new(BTNode::root(BTNode::action("r"))).unwrap();
        let mut ctx = Scripted::default();
        for _ in 0..5 {
            assert_eq!(t.tick(&mut ctx).unwrap(), Status::Running);
        }
        assert_eq!(t.clock().now(), 5 * DEFAULT_PERIOD);
    }

    #[test]
    fn empty_root_is_structural_error() {
        let r = Tree::new(BTNode::new(NodeKind::Root { period: None }, vec![]));
        assert!(r.is_err());
    }

    #[test]
    fn sequence_examples() {
        use Status::*;
        assert_eq!(once(BTNode::sequence(vec![leaf(Success), leaf(Success), leaf(Success)])), Success);
        assert_eq!(once(BTNode::sequence(vec![leaf(Success), leaf(Failure), BTNode::action("never")])), Failure);
        assert_eq!(once(BTNode::sequence(vec![leaf(Success), leaf(Running), BTNode::action("never")])), Running);
    }

    #[test]
    fn fallback_examples() {
        use Status::*;
        assert_eq!(once(BTNode::fallback(vec![leaf(Failure), leaf(Success), BTNode::action("never")])), Success);
        assert_eq!(once(BTNode::fallback(vec![leaf(Failure), leaf(Failure)])), Failure);
        assert_eq!(once(BTNode::fallback(vec![leaf(Running), BTNode::action("never")])), Running);
    }

    #[test]
    fn parallel_examples() {
        use Status::*;
        let p = |m, v: &[Status]| once(BTNode::parallel(m, v.iter().map(|&s| leaf(s)).collect()));
        assert_eq!(p(0, &[Success, Success, Success]), Success);
        assert_eq!(p(0, &[Success, Failure, Running]), Failure);
        assert_eq!(p(1, &[Success, Failure, Success, Success]), Success);
        assert_eq!(p(1, &[Failure, Failure, Success, Success]), Failure);
    }

    /// Threshold rule evaluated directly on the status tuple.
    fn parallel_oracle(m: usize, statuses: &[Status]) -> Status {
        let failed = statuses.iter().filter(|s| **s == Status::Failure).count();
        let running = statuses.iter().filter(|s| **s == Status::Running).count();
        if failed > m {
            Status::Failure
        } else if running == 0 {
            Status::Success
        } else {
            Status::Running
        }
    }

    #[test]
    fn parallel_matches_enumerated_oracle() {
        use Status::*;
        let all = [Running, Success, Failure];
        for m in 0..4 {
            for code in 0..81u32 {
                let tuple: Vec<Status> = (0..4).map(|i| all[((code / 3u32.pow(i)) % 3) as usize]).collect();
                let got = once(BTNode::parallel(m, tuple.iter().map(|&s| leaf(s)).collect()));
                assert_eq!(got, parallel_oracle(m, &tuple), "m={m} {tuple:?}");
            }
        }
    }

    #[test]
    fn repeat_counts_iterations() {
        let mut t = Tree::new(BTNode::root(BTNode::repeat(RepeatCount::Times(2), BTNode::action("s")))).unwrap();
        let mut ctx = Scripted::default();
        assert_eq!(t.tick(&mut ctx).unwrap(), Status::Running);
        assert_eq!(t.tick(&mut ctx).unwrap(), Status::Success);
    }

    #[test]
    fn repeat_infinite_never_succeeds() {
        let mut t = Tree::new(BTNode::root(BTNode::repeat(RepeatCount::Infinite, BTNode::action("s")))).unwrap();
        let mut ctx = Scripted::default();
        for _ in 0..1000 {
            assert_eq!(t.tick(&mut ctx).unwrap(), Status::Running);
        }
        // The child is re-armed after each iteration, so it really ran every tick.
        assert_eq!(ctx.resets, 1000);
    }

    #[test]
    fn repeat_zero_and_failure() {
        let mut ctx = Scripted::default();
        let mut t = Tree::new(BTNode::root(BTNode::repeat(RepeatCount::Times(0), BTNode::action("s")))).unwrap();
        assert_eq!(t.tick(&mut ctx).unwrap(), Status::Success);
        assert!(ctx.ticks.is_empty());
        assert_eq!(once(BTNode::repeat(RepeatCount::Times(3), BTNode::action("f"))), Status::Failure);
    }

    #[test]
    fn unregistered_condition_is_an_error() {
        let mut t = Tree::new(BTNode::root(BTNode::condition("nope"))).unwrap();
        assert_eq!(
            t.tick(&mut Scripted::default()),
            Err(TickError::UnknownCondition("nope".into()))
        );
    }

    #[test]
    fn latched_actions_are_not_re_executed() {
        // count:2 finishes on its second tick; the sequence then reaches `r`.
        let seq = BTNode::sequence(vec![BTNode::action("count:2"), BTNode::action("r")]);
        let mut t = Tree::new(BTNode::root(seq)).unwrap();
        let mut ctx = Scripted::default();
        for _ in 0..6 {
            assert_eq!(t.tick(&mut ctx).unwrap(), Status::Running);
        }
        assert_eq!(ctx.ticks[&2], 2);
        assert_eq!(ctx.ticks[&3], 5);
    }

    #[test]
    fn set_blackboard_always_succeeds() {
        let t = BTNode::sequence(vec![
            BTNode::set_blackboard("goal1", BbValue::Coord(Cell::new(0, 0))),
            BTNode::set_blackboard("goal1", BbValue::Coord(Cell::new(2, 1))),
        ]);
        let mut tree = Tree::new(BTNode::root(t)).unwrap();
        assert_eq!(tree.tick(&mut Scripted::default()).unwrap(), Status::Success);
        assert_eq!(tree.blackboard().get("goal1").unwrap(), &BbValue::Coord(Cell::new(2, 1)));
    }

    #[test]
    fn conditions_use_registered_predicates() {
        let mut ctx = Scripted::default();
        ctx.conditions.insert("battery-fair".into(), true);
        ctx.conditions.insert("goal-updated".into(), false);
        let mut t = Tree::new(BTNode::root(BTNode::condition("battery-fair"))).unwrap();
        assert_eq!(t.tick(&mut ctx).unwrap(), Status::Success);
        let mut t = Tree::new(BTNode::root(BTNode::condition("goal-updated"))).unwrap();
        assert_eq!(t.tick(&mut ctx).unwrap(), Status::Failure);
    }
}
