use std::fmt;

use serde::{Deserialize, Serialize};

use super::blackboard::BbValue;

/// Three-valued result of ticking a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Success,
    Failure,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Status::Running)
    }

    /// Swaps Success and Failure, leaving Running untouched.
    pub fn inverted(self) -> Status {
        match self {
            Status::Running => Status::Running,
            Status::Success => Status::Failure,
            Status::Failure => Status::Success,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Success => "success",
            Status::Failure => "failure",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepeatCount {
    Times(u32),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Tree root; `period` overrides the default tick period.
    Root { period: Option<u64> },
    Sequence,
    Fallback,
    /// Fails once more than `failure_threshold` children have failed.
    Parallel { failure_threshold: usize },
    Repeat(RepeatCount),
    Condition(String),
    /// Plain action. `input` names the blackboard key holding its command, if any.
    Action { name: String, input: Option<String> },
    ActionClient { action: String, namespace: String, input: Option<String> },
    ActionServer { action: String, input: Option<String> },
    SetBlackboard { key: String, value: BbValue },
}

impl NodeKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            NodeKind::Root { .. } => "root",
            NodeKind::Sequence => "sequence",
            NodeKind::Fallback => "fallback",
            NodeKind::Parallel { .. } => "parallel",
            NodeKind::Repeat(_) => "repeat",
            NodeKind::Condition(_) => "condition",
            NodeKind::Action { .. } => "action",
            NodeKind::ActionClient { .. } => "action-client",
            NodeKind::ActionServer { .. } => "action-server",
            NodeKind::SetBlackboard { .. } => "set-blackboard",
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self,
            NodeKind::Condition(_)
                | NodeKind::Action { .. }
                | NodeKind::ActionClient { .. }
                | NodeKind::ActionServer { .. }
                | NodeKind::SetBlackboard { .. }
        )
    }

    /// Action id for the three execution-leaf kinds.
    pub fn action_id(&self) -> Option<&str> {
        match self {
            NodeKind::Action { name, .. } => Some(name),
            NodeKind::ActionClient { action, .. } | NodeKind::ActionServer { action, .. } => {
                Some(action)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BTNode {
    pub kind: NodeKind,
    pub children: Vec<BTNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("{path}: root needs exactly one child, found {found}")]
    RootChildren { path: String, found: usize },
    #[error("{path}: root may only appear at the top of a tree")]
    NestedRoot { path: String },
    #[error("tree is not rooted at a root node (found {found})")]
    MissingRoot { found: &'static str },
    #[error("{path}: {keyword} is a leaf and cannot have children")]
    LeafWithChildren { path: String, keyword: &'static str },
    #[error("{path}: {keyword} needs at least {min} children, found {found}")]
    TooFewChildren { path: String, keyword: &'static str, min: usize, found: usize },
    #[error("{path}: parallel threshold m={m} must be below the child count {children}")]
    ParallelThreshold { path: String, m: usize, children: usize },
    #[error("{path}: repeat needs exactly one child, found {found}")]
    DecoratorChildren { path: String, found: usize },
    #[error("{path}: empty identifier")]
    EmptyName { path: String },
}

impl BTNode {
    pub fn new(kind: NodeKind, children: Vec<BTNode>) -> Self {
        Self { kind, children }
    }

    pub fn leaf(kind: NodeKind) -> Self {
        Self { kind, children: Vec::new() }
    }

    pub fn root(child: BTNode) -> Self {
        Self::new(NodeKind::Root { period: None }, vec![child])
    }

    pub fn root_with_period(child: BTNode, period: u64) -> Self {
        Self::new(NodeKind::Root { period: Some(period) }, vec![child])
    }

    pub fn sequence(children: Vec<BTNode>) -> Self {
        Self::new(NodeKind::Sequence, children)
    }

    pub fn fallback(children: Vec<BTNode>) -> Self {
        Self::new(NodeKind::Fallback, children)
    }

    pub fn parallel(failure_threshold: usize, children: Vec<BTNode>) -> Self {
        Self::new(NodeKind::Parallel { failure_threshold }, children)
    }

    pub fn repeat(count: RepeatCount, child: BTNode) -> Self {
        Self::new(NodeKind::Repeat(count), vec![child])
    }

    pub fn condition(name: impl Into<String>) -> Self {
        Self::leaf(NodeKind::Condition(name.into()))
    }

    pub fn action(name: impl Into<String>) -> Self {
        Self::leaf(NodeKind::Action { name: name.into(), input: None })
    }

    pub fn action_with_input(name: impl Into<String>, input: impl Into<String>) -> Self {
        Self::leaf(NodeKind::Action { name: name.into(), input: Some(input.into()) })
    }

    pub fn action_client(
        action: impl Into<String>,
        namespace: impl Into<String>,
        input: Option<String>,
    ) -> Self {
        Self::leaf(NodeKind::ActionClient {
            action: action.into(),
            namespace: namespace.into(),
            input,
        })
    }

    pub fn action_server(action: impl Into<String>) -> Self {
        Self::leaf(NodeKind::ActionServer { action: action.into(), input: None })
    }

    pub fn set_blackboard(key: impl Into<String>, value: BbValue) -> Self {
        Self::leaf(NodeKind::SetBlackboard { key: key.into(), value })
    }

    /// Tick period declared on the root, if any.
    pub fn period(&self) -> Option<u64> {
        match self.kind {
            NodeKind::Root { period } => period,
            _ => None,
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(BTNode::size).sum::<usize>()
    }

    /// Preorder walk over every node.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a BTNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Rebuilds the tree bottom-up, applying `f` to every node after its children.
    pub fn map_nodes(&self, f: &mut impl FnMut(BTNode) -> BTNode) -> BTNode {
        let children = self.children.iter().map(|c| c.map_nodes(f)).collect();
        f(BTNode { kind: self.kind.clone(), children })
    }

    pub fn action_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let Some(id) = n.kind.action_id() {
                out.push(id.to_string());
            }
        });
        out
    }

    /// Checks every structural invariant of a rooted tree.
    pub fn validate(&self) -> Result<(), StructureError> {
        self.validate_subtree("root", true)?;
        match self.kind {
            NodeKind::Root { .. } => Ok(()),
            ref other => Err(StructureError::MissingRoot { found: other.keyword() }),
        }
    }

    /// Checks node invariants without requiring a root at the top.
    pub fn validate_fragment(&self) -> Result<(), StructureError> {
        self.validate_subtree(self.kind.keyword(), false)
    }

    fn validate_subtree(&self, path: &str, top: bool) -> Result<(), StructureError> {
        for (i, c) in self.children.iter().enumerate() {
            let child_path = format!("{path}/{}[{i}]", c.kind.keyword());
            c.validate_subtree(&child_path, false)?;
        }
        let n = self.children.len();
        let path = path.to_string();
        let kw = self.kind.keyword();
        match &self.kind {
            NodeKind::Root { .. } => {
                if !top {
                    return Err(StructureError::NestedRoot { path });
                }
                if n != 1 {
                    return Err(StructureError::RootChildren { path, found: n });
                }
            }
            NodeKind::Sequence | NodeKind::Fallback => {
                if n < 1 {
                    return Err(StructureError::TooFewChildren { path, keyword: kw, min: 1, found: n });
                }
            }
            NodeKind::Parallel { failure_threshold } => {
                if n < 2 {
                    return Err(StructureError::TooFewChildren { path, keyword: kw, min: 2, found: n });
                }
                if *failure_threshold >= n {
                    return Err(StructureError::ParallelThreshold {
                        path,
                        m: *failure_threshold,
                        children: n,
                    });
                }
            }
            NodeKind::Repeat(_) => {
                if n != 1 {
                    return Err(StructureError::DecoratorChildren { path, found: n });
                }
            }
            leaf => {
                if n != 0 {
                    return Err(StructureError::LeafWithChildren { path, keyword: kw });
                }
                let names: Vec<&str> = match leaf {
                    NodeKind::Condition(name) => vec![name],
                    NodeKind::Action { name, .. } => vec![name],
                    NodeKind::ActionClient { action, namespace, .. } => vec![action, namespace],
                    NodeKind::ActionServer { action, .. } => vec![action],
                    NodeKind::SetBlackboard { key, .. } => vec![key],
                    _ => vec![],
                };
                if names.iter().any(|s| s.is_empty()) {
                    return Err(StructureError::EmptyName { path });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_without_child_is_rejected() {
        let t = BTNode::new(NodeKind::Root { period: None }, vec![]);
        assert!(matches!(t.validate(), Err(StructureError::RootChildren { found: 0, .. })));
    }

    #[test]
    fn parallel_threshold_bound() {
        let p = BTNode::parallel(2, vec![BTNode::action("a"), BTNode::action("b")]);
        assert!(matches!(
            BTNode::root(p).validate(),
            Err(StructureError::ParallelThreshold { m: 2, children: 2, .. })
        ));
        let single = BTNode::parallel(0, vec![BTNode::action("a")]);
        assert!(matches!(
            single.validate_fragment(),
            Err(StructureError::TooFewChildren { min: 2, .. })
        ));
    }

    #[test]
    fn nested_root_and_leaf_children() {
        let nested = BTNode::root(BTNode::root(BTNode::action("a")));
        assert!(matches!(nested.validate(), Err(StructureError::NestedRoot { .. })));
        let leafy = BTNode::new(
            NodeKind::Condition("c".into()),
            vec![BTNode::action("a")],
        );
        assert!(matches!(
            BTNode::root(leafy).validate(),
            Err(StructureError::LeafWithChildren { .. })
        ));
    }

    #[test]
    fn error_paths_name_the_offending_node() {
        let t = BTNode::root(BTNode::sequence(vec![
            BTNode::action("a"),
            BTNode::parallel(5, vec![BTNode::action("b"), BTNode::action("c")]),
        ]));
        let err = t.validate().unwrap_err().to_string();
        assert!(err.starts_with("root/sequence[0]/parallel[1]"), "{err}");
    }

    #[test]
    fn status_inversion_is_involutive() {
        for s in [Status::Running, Status::Success, Status::Failure] {
            assert_eq!(s.inverted().inverted(), s);
        }
    }
}
