//! Structural rewrites that split trees into independently rooted members
//! communicating through action topics.

use std::collections::{BTreeMap, BTreeSet};

use crate::action::ActionTopics;
use crate::bt::{BTNode, NodeKind, StructureError};
use crate::dds::TopicError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error("only action leaves can be split, found `{0}`")]
    NotAnAction(&'static str),
    #[error("subtree contains no action to split")]
    NoAction,
    #[error("`{0}` nodes cannot appear in a split subtree")]
    Unsupported(&'static str),
    #[error("action `{action}` is already wired under namespace `{namespace}`")]
    DuplicateWiring { namespace: String, action: String },
    #[error("namespace `{0}` appears twice")]
    DuplicateNamespace(String),
    #[error("expected {expected} entries, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("a task must command exactly one action, found {0:?}")]
    TaskActions(Vec<String>),
    #[error("nothing to coalesce")]
    Empty,
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Topic(#[from] TopicError),
}

/// One independently rooted and independently clocked tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub namespace: String,
    pub tree: BTNode,
}

/// A set of members that share no tick and talk only through topics.
/// It has no status of its own.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AsyncParallel {
    pub clients: Vec<Member>,
    pub servers: Vec<Member>,
}

impl AsyncParallel {
    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.clients.iter().chain(&self.servers)
    }

    pub fn into_members(self) -> Vec<Member> {
        self.clients.into_iter().chain(self.servers).collect()
    }

    /// Every client leaf has exactly one server leaf for the same action under
    /// the namespace it addresses, and every server leaf has a client.
    pub fn audit(&self) -> Result<(), String> {
        let mut servers: BTreeMap<(String, String), usize> = BTreeMap::new();
        for m in self.members() {
            m.tree.walk(&mut |n| {
                if let NodeKind::ActionServer { action, .. } = &n.kind {
                    *servers.entry((m.namespace.clone(), action.clone())).or_default() += 1;
                }
            });
        }
        let mut clients = BTreeSet::new();
        for m in self.members() {
            m.tree.walk(&mut |n| {
                if let NodeKind::ActionClient { action, namespace, .. } = &n.kind {
                    clients.insert((namespace.clone(), action.clone()));
                }
            });
        }
        for c in &clients {
            match servers.get(c) {
                Some(1) => {}
                Some(k) => return Err(format!("{} servers for `{}` under `{}`", k, c.1, c.0)),
                None => return Err(format!("no server for `{}` under `{}`", c.1, c.0)),
            }
        }
        if let Some(s) = servers.keys().find(|s| !clients.contains(*s)) {
            return Err(format!("server `{}` under `{}` has no client", s.1, s.0));
        }
        Ok(())
    }
}

/// Topic binding created by a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wiring {
    pub topics: ActionTopics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub client: BTNode,
    pub server: BTNode,
    pub wiring: Vec<Wiring>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composite {
    Sequence,
    Fallback,
}

impl Composite {
    pub fn node(self, children: Vec<BTNode>) -> BTNode {
        match self {
            Composite::Sequence => BTNode::sequence(children),
            Composite::Fallback => BTNode::fallback(children),
        }
    }
}

/// Namespace under which the client half of a split at `ns` runs.
pub fn client_namespace(ns: &str) -> String {
    format!("{ns}-client")
}

/// Strips a root, if present.
pub fn body(tree: &BTNode) -> BTNode {
    match tree.kind {
        NodeKind::Root { .. } => tree.children[0].clone(),
        _ => tree.clone(),
    }
}

fn reroot(like: &BTNode, child: BTNode) -> BTNode {
    match like.period() {
        Some(p) => BTNode::root_with_period(child, p),
        None => BTNode::root(child),
    }
}

/// Hands out wirings and refuses to wire one action twice under a namespace.
#[derive(Debug, Default)]
pub struct Splitter {
    used: BTreeSet<(String, String)>,
}

impl Splitter {
    pub fn new() -> Self {
        Self::default()
    }

    fn wire(&mut self, namespace: &str, action: &str) -> Result<Wiring, TransformError> {
        let topics = ActionTopics::new(namespace, action)?;
        if !self.used.insert((namespace.to_string(), action.to_string())) {
            return Err(TransformError::DuplicateWiring {
                namespace: namespace.into(),
                action: action.into(),
            });
        }
        Ok(Wiring { topics })
    }

    pub fn split_action(&mut self, node: &BTNode, namespace: &str) -> Result<SplitResult, TransformError> {
        let NodeKind::Action { name, input } = &node.kind else {
            return Err(TransformError::NotAnAction(node.kind.keyword()));
        };
        let wiring = self.wire(namespace, name)?;
        Ok(SplitResult {
            client: BTNode::action_client(name.clone(), namespace, input.clone()),
            server: BTNode::leaf(NodeKind::ActionServer { action: name.clone(), input: input.clone() }),
            wiring: vec![wiring],
        })
    }

    /// Splits every action of `t_l`: the client mirror keeps the control flow,
    /// the server mirror takes its place next to `t_m`.
    pub fn split_pair(
        &mut self,
        op: Composite,
        t_l: &BTNode,
        t_m: &BTNode,
        namespace: &str,
    ) -> Result<AsyncParallel, TransformError> {
        let t_l = body(t_l);
        let t_m = body(t_m);
        t_l.validate_fragment()?;
        t_m.validate_fragment()?;
        let mut wiring = Vec::new();
        let (client, server) = self.mirror(&t_l, namespace, &mut wiring)?;
        if wiring.is_empty() {
            return Err(TransformError::NoAction);
        }
        Ok(AsyncParallel {
            clients: vec![Member { namespace: client_namespace(namespace), tree: BTNode::root(client) }],
            servers: vec![Member { namespace: namespace.to_string(), tree: BTNode::root(op.node(vec![server, t_m])) }],
        })
    }

    fn mirror(
        &mut self,
        node: &BTNode,
        namespace: &str,
        wiring: &mut Vec<Wiring>,
    ) -> Result<(BTNode, BTNode), TransformError> {
        match &node.kind {
            NodeKind::Action { .. } => {
                let s = self.split_action(node, namespace)?;
                wiring.extend(s.wiring);
                Ok((s.client, s.server))
            }
            NodeKind::Sequence | NodeKind::Fallback => {
                let mut cs = Vec::new();
                let mut ss = Vec::new();
                for c in &node.children {
                    let (a, b) = self.mirror(c, namespace, wiring)?;
                    cs.push(a);
                    ss.push(b);
                }
                Ok((BTNode::new(node.kind.clone(), cs), BTNode::new(node.kind.clone(), ss)))
            }
            other => Err(TransformError::Unsupported(other.keyword())),
        }
    }
}

pub fn split_action(node: &BTNode, namespace: &str) -> Result<SplitResult, TransformError> {
    Splitter::new().split_action(node, namespace)
}

pub fn split_sequence(t_l: &BTNode, t_m: &BTNode, namespace: &str) -> Result<AsyncParallel, TransformError> {
    Splitter::new().split_pair(Composite::Sequence, t_l, t_m, namespace)
}

pub fn split_fallback(t_l: &BTNode, t_m: &BTNode, namespace: &str) -> Result<AsyncParallel, TransformError> {
    Splitter::new().split_pair(Composite::Fallback, t_l, t_m, namespace)
}

pub fn split_composite(op: Composite, t_l: &BTNode, t_m: &BTNode, namespace: &str) -> Result<AsyncParallel, TransformError> {
    Splitter::new().split_pair(op, t_l, t_m, namespace)
}

/// Splits N composites at once, clients grouped first and servers after,
/// index `i` of one group pairing with index `i` of the other.
pub fn split_many(
    trees: &[(Composite, BTNode, BTNode)],
    namespaces: &[String],
) -> Result<AsyncParallel, TransformError> {
    if trees.len() != namespaces.len() {
        return Err(TransformError::LengthMismatch { expected: trees.len(), found: namespaces.len() });
    }
    check_distinct(namespaces)?;
    let mut splitter = Splitter::new();
    let mut out = AsyncParallel::default();
    for ((op, t_l, t_m), ns) in trees.iter().zip(namespaces) {
        let part = splitter.split_pair(*op, t_l, t_m, ns)?;
        out.clients.extend(part.clients);
        out.servers.extend(part.servers);
    }
    Ok(out)
}

fn check_distinct(namespaces: &[String]) -> Result<(), TransformError> {
    let mut seen = BTreeSet::new();
    for ns in namespaces {
        if !seen.insert(ns.as_str()) {
            return Err(TransformError::DuplicateNamespace(ns.clone()));
        }
    }
    Ok(())
}

/// Replaces every client and server leaf by the plain action it came from.
pub fn collapse(tree: &BTNode) -> BTNode {
    tree.map_nodes(&mut |n| match n.kind {
        NodeKind::ActionClient { action, input, .. } | NodeKind::ActionServer { action, input } => {
            BTNode::leaf(NodeKind::Action { name: action, input })
        }
        _ => n,
    })
}

fn task_action(task: &BTNode) -> Result<String, TransformError> {
    let mut ids = BTreeSet::new();
    task.walk(&mut |n| {
        if let NodeKind::Action { name, .. } = &n.kind {
            ids.insert(name.clone());
        }
    });
    match ids.len() {
        1 => Ok(ids.pop_first().unwrap()),
        0 => Err(TransformError::NoAction),
        _ => Err(TransformError::TaskActions(ids.into_iter().collect())),
    }
}

/// Turns the task's plain actions into clients addressing `robot_ns`.
pub fn task_client(task: &BTNode, robot_ns: &str) -> Result<BTNode, TransformError> {
    task_action(task)?;
    let client = task.map_nodes(&mut |n| match n.kind {
        NodeKind::Action { name, input } => BTNode::action_client(name, robot_ns, input),
        _ => n,
    });
    Ok(match client.kind {
        NodeKind::Root { .. } => client,
        _ => BTNode::root(client),
    })
}

/// The robot side of a task: its single action served, with `recovery`
/// behind it in a fallback.
pub fn robot_side(task: &BTNode, recovery: &BTNode) -> Result<BTNode, TransformError> {
    let action = task_action(task)?;
    let recovery = body(recovery);
    recovery.validate_fragment()?;
    Ok(BTNode::root(BTNode::fallback(vec![BTNode::action_server(action), recovery])))
}

pub fn attach_recovery(
    task: &BTNode,
    recovery: &BTNode,
    tpu_ns: &str,
    robot_ns: &str,
) -> Result<AsyncParallel, TransformError> {
    check_distinct(&[tpu_ns.to_string(), robot_ns.to_string()])?;
    Ok(AsyncParallel {
        clients: vec![Member { namespace: tpu_ns.to_string(), tree: task_client(task, robot_ns)? }],
        servers: vec![Member { namespace: robot_ns.to_string(), tree: robot_side(task, recovery)? }],
    })
}

fn wirings(tree: &BTNode) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    tree.walk(&mut |n| {
        if let NodeKind::ActionClient { action, namespace, .. } = &n.kind {
            out.insert((namespace.clone(), action.clone()));
        }
    });
    out
}

/// Puts N client trees under one root and one parallel node that tolerates
/// all but total failure. The root keeps the first client's period.
pub fn coalesce_clients(clients: &[BTNode]) -> Result<BTNode, TransformError> {
    let first = clients.first().ok_or(TransformError::Empty)?;
    let mut seen = BTreeSet::new();
    for c in clients {
        for w in wirings(c) {
            if !seen.insert(w.clone()) {
                return Err(TransformError::DuplicateWiring { namespace: w.0, action: w.1 });
            }
        }
    }
    let mut children: Vec<BTNode> = clients.iter().map(body).collect();
    for c in &children {
        c.validate_fragment()?;
    }
    let inner = if children.len() == 1 {
        children.pop().unwrap()
    } else {
        BTNode::parallel(children.len() - 1, children)
    };
    Ok(reroot(first, inner))
}

/// The full system: one coalesced planning tree and one served tree per robot.
pub fn compose_system(
    tasks: &[BTNode],
    recoveries: &[BTNode],
    tpu_ns: &str,
    robot_nss: &[String],
) -> Result<AsyncParallel, TransformError> {
    for len in [recoveries.len(), robot_nss.len()] {
        if len != tasks.len() {
            return Err(TransformError::LengthMismatch { expected: tasks.len(), found: len });
        }
    }
    let mut all = robot_nss.to_vec();
    all.push(tpu_ns.to_string());
    check_distinct(&all)?;
    let mut clients = Vec::new();
    let mut servers = Vec::new();
    for ((task, rec), ns) in tasks.iter().zip(recoveries).zip(robot_nss) {
        clients.push(task_client(task, ns)?);
        servers.push(Member { namespace: ns.clone(), tree: robot_side(task, rec)? });
    }
    let tpu = coalesce_clients(&clients)?;
    Ok(AsyncParallel { clients: vec![Member { namespace: tpu_ns.to_string(), tree: tpu }], servers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(n: &str) -> BTNode {
        BTNode::action(n)
    }

    #[test]
    fn split_action_binds_both_halves() {
        let s = split_action(&a("navigate"), "robot1").unwrap();
        assert_eq!(s.client, BTNode::action_client("navigate", "robot1", None));
        assert_eq!(s.server, BTNode::action_server("navigate"));
        assert_eq!(s.wiring[0].topics.cmd, "/robot1/navigate/cmd");
        assert!(matches!(
            split_action(&BTNode::condition("c"), "robot1"),
            Err(TransformError::NotAnAction("condition"))
        ));
        let mut sp = Splitter::new();
        sp.split_action(&a("navigate"), "robot1").unwrap();
        assert!(matches!(sp.split_action(&a("navigate"), "robot1"), Err(TransformError::DuplicateWiring { .. })));
        sp.split_action(&a("navigate"), "robot2").unwrap();
    }

    #[test]
    fn split_sequence_shape_and_round_trip() {
        let sys = split_sequence(&a("A"), &a("B"), "r").unwrap();
        assert_eq!(sys.clients[0].tree, BTNode::root(BTNode::action_client("A", "r", None)));
        assert_eq!(sys.clients[0].namespace, "r-client");
        assert_eq!(
            sys.servers[0].tree,
            BTNode::root(BTNode::sequence(vec![BTNode::action_server("A"), a("B")]))
        );
        assert_eq!(collapse(&sys.servers[0].tree), BTNode::root(BTNode::sequence(vec![a("A"), a("B")])));
        sys.audit().unwrap();
    }

    #[test]
    fn split_fallback_of_composite_left_side() {
        let t_l = BTNode::sequence(vec![a("A1"), BTNode::fallback(vec![a("A2"), a("A3")])]);
        let t_m = BTNode::sequence(vec![BTNode::condition("c"), a("B")]);
        let sys = split_fallback(&t_l, &t_m, "r").unwrap();
        assert_eq!(wirings(&sys.clients[0].tree).len(), 3);
        assert_eq!(collapse(&sys.servers[0].tree), BTNode::root(BTNode::fallback(vec![t_l.clone(), t_m])));
        assert_eq!(collapse(&sys.clients[0].tree), BTNode::root(t_l));
        sys.audit().unwrap();
    }

    #[test]
    fn split_rejects_bad_left_sides() {
        let c = BTNode::condition("c");
        assert_eq!(split_sequence(&BTNode::sequence(vec![c.clone()]), &a("B"), "r"), Err(TransformError::Unsupported("condition")));
        let dup = BTNode::sequence(vec![a("A"), a("A")]);
        assert!(matches!(split_sequence(&dup, &a("B"), "r"), Err(TransformError::DuplicateWiring { .. })));
    }

    #[test]
    fn split_many_groups_and_pairs() {
        let pairs: Vec<_> = (0..3).map(|i| (Composite::Sequence, a(&format!("A{i}")), a("B"))).collect();
        let nss: Vec<String> = (0..3).map(|i| format!("r{i}")).collect();
        let bundle = split_many(&pairs, &nss).unwrap();
        assert_eq!((bundle.clients.len(), bundle.servers.len()), (3, 3));
        for i in 0..3 {
            let single = split_sequence(&pairs[i].1, &pairs[i].2, &nss[i]).unwrap();
            assert_eq!(bundle.clients[i], single.clients[0]);
            assert_eq!(bundle.servers[i], single.servers[0]);
        }
        let one = split_many(&pairs[..1], &nss[..1]).unwrap();
        assert_eq!(one, split_sequence(&pairs[0].1, &pairs[0].2, &nss[0]).unwrap());
        let dup = vec!["r0".to_string(); 2];
        assert_eq!(split_many(&pairs[..2], &dup), Err(TransformError::DuplicateNamespace("r0".into())));
    }

    #[test]
    fn recovery_and_composition() {
        let rec = BTNode::sequence(vec![a("spin"), a("wait")]);
        let sys = attach_recovery(&a("navigate"), &rec, "tpu", "robot1").unwrap();
        assert_eq!(
            sys.servers[0].tree,
            BTNode::root(BTNode::fallback(vec![BTNode::action_server("navigate"), rec.clone()]))
        );
        sys.audit().unwrap();

        let nss: Vec<String> = (1..=3).map(|i| format!("robot{i}")).collect();
        let tasks = vec![a("navigate"); 3];
        let recs = vec![rec.clone(); 3];
        let full = compose_system(&tasks, &recs, "tpu", &nss).unwrap();
        assert_eq!(full.members().count(), 4);
        assert!(matches!(full.clients[0].tree.children[0].kind, NodeKind::Parallel { failure_threshold: 2 }));
        full.audit().unwrap();

        let single = compose_system(&tasks[..1], &recs[..1], "tpu", &nss[..1]).unwrap();
        assert_eq!(single, attach_recovery(&tasks[0], &rec, "tpu", "robot1").unwrap());
    }

    #[test]
    fn coalesce_refuses_overlap() {
        let c = BTNode::root(BTNode::action_client("navigate", "robot1", None));
        assert!(matches!(coalesce_clients(&[c.clone(), c.clone()]), Err(TransformError::DuplicateWiring { .. })));
        assert_eq!(coalesce_clients(&[c.clone()]).unwrap(), c);
        assert_eq!(coalesce_clients(&[]), Err(TransformError::Empty));
    }

    #[test]
    fn audit_catches_missing_server() {
        let sys = AsyncParallel {
            clients: vec![Member { namespace: "tpu".into(), tree: BTNode::root(BTNode::action_client("x", "r", None)) }],
            servers: vec![],
        };
        assert!(sys.audit().is_err());
    }
}
