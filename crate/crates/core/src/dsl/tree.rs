//! Tree text format.
//!
//! ```text
//! (root :period 20
//!   (repeat :times inf
//!     (sequence
//!       (set-blackboard g1 (2 2))
//!       (action-client navigate @robot1 :goal g1))))
//! ```

use super::sexpr::{is_symbol_char, parse_one, quote, Pos, SExpr, SyntaxError};
use crate::bt::{BTNode, BbValue, Cell, NodeKind, RepeatCount, StructureError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DslError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("invalid tree: {0}")]
    Structure(#[from] StructureError),
}

fn err(pos: Pos, message: impl Into<String>) -> SyntaxError {
    SyntaxError { pos, message: message.into() }
}

/// Parses and validates a rooted tree.
pub fn parse_tree(text: &str) -> Result<BTNode, DslError> {
    let node = node(&parse_one(text)?)?;
    node.validate()?;
    Ok(node)
}

/// Parses a subtree without requiring a root.
pub fn parse_fragment(text: &str) -> Result<BTNode, DslError> {
    let node = node(&parse_one(text)?)?;
    node.validate_fragment()?;
    Ok(node)
}

struct Parts<'a> {
    head: &'a str,
    pos: Pos,
    options: Vec<(&'a str, &'a SExpr, Pos)>,
    namespaces: Vec<(&'a str, Pos)>,
    args: Vec<&'a SExpr>,
}

fn split(e: &SExpr) -> Result<Parts<'_>, SyntaxError> {
    let SExpr::List(items, pos) = e else {
        return Err(err(e.pos(), "expected a node in parentheses"));
    };
    let Some(SExpr::Atom(head, _)) = items.first() else {
        return Err(err(*pos, "node must start with a keyword"));
    };
    let mut parts = Parts { head, pos: *pos, options: Vec::new(), namespaces: Vec::new(), args: Vec::new() };
    let mut it = items[1..].iter();
    while let Some(item) = it.next() {
        match item {
            SExpr::Atom(a, p) if a.starts_with(':') && a.len() > 1 => {
                let v = it.next().ok_or_else(|| err(*p, format!("option `{a}` needs a value")))?;
                parts.options.push((&a[1..], v, *p));
            }
            SExpr::Atom(a, p) if a.starts_with('@') => parts.namespaces.push((&a[1..], *p)),
            other => parts.args.push(other),
        }
    }
    Ok(parts)
}

impl<'a> Parts<'a> {
    fn allow(&self, keys: &[&str]) -> Result<(), SyntaxError> {
        for (k, _, p) in &self.options {
            if !keys.contains(k) {
                return Err(err(*p, format!("`{}` takes no option `:{k}`", self.head)));
            }
        }
        if let Some((_, p)) = self.namespaces.first() {
            if self.head != "action-client" {
                return Err(err(*p, format!("`{}` takes no namespace", self.head)));
            }
        }
        Ok(())
    }

    fn option(&self, key: &str) -> Option<&'a SExpr> {
        self.options.iter().find(|(k, _, _)| *k == key).map(|(_, v, _)| *v)
    }

    fn names(&self, n: usize) -> Result<Vec<String>, SyntaxError> {
        if self.args.len() != n {
            return Err(err(self.pos, format!("`{}` takes {n} name(s), found {}", self.head, self.args.len())));
        }
        self.args.iter().map(|a| name(a)).collect()
    }

    fn goal(&self) -> Result<Option<String>, SyntaxError> {
        self.option("goal").map(name).transpose()
    }
}

fn name(e: &SExpr) -> Result<String, SyntaxError> {
    match e {
        SExpr::Atom(s, _) | SExpr::Str(s, _) => Ok(s.clone()),
        SExpr::List(_, p) => Err(err(*p, "expected a name")),
    }
}

fn integer<T: std::str::FromStr>(e: &SExpr, what: &str) -> Result<T, SyntaxError> {
    match e {
        SExpr::Atom(s, _) => s.parse().map_err(|_| err(e.pos(), format!("{what} must be a non-negative integer, got `{s}`"))),
        _ => Err(err(e.pos(), format!("{what} must be a non-negative integer"))),
    }
}

fn looks_numeric(s: &str) -> bool {
    let t = s.strip_prefix('-').unwrap_or(s);
    t.starts_with(|c: char| c.is_ascii_digit()) || (t.starts_with('.') && t[1..].starts_with(|c: char| c.is_ascii_digit()))
}

pub fn value(e: &SExpr) -> Result<BbValue, SyntaxError> {
    match e {
        SExpr::Str(s, _) => Ok(BbValue::Text(s.clone())),
        SExpr::Atom(s, p) => Ok(match s.as_str() {
            "true" => BbValue::Bool(true),
            "false" => BbValue::Bool(false),
            _ if looks_numeric(s) => match s.parse::<i64>() {
                Ok(i) => BbValue::Int(i),
                Err(_) => BbValue::Float(s.parse().map_err(|_| err(*p, format!("bad number `{s}`")))?),
            },
            _ => BbValue::Text(s.clone()),
        }),
        SExpr::List(items, p) => match items.as_slice() {
            [x, y] => Ok(BbValue::Coord(Cell::new(integer(x, "x")?, integer(y, "y")?))),
            _ => Err(err(*p, "a coordinate is written `(X Y)`")),
        },
    }
}

fn node(e: &SExpr) -> Result<BTNode, SyntaxError> {
    let p = split(e)?;
    let children = |p: &Parts| -> Result<Vec<BTNode>, SyntaxError> { p.args.iter().map(|a| node(a)).collect() };
    let kind = match p.head {
        "root" => {
            p.allow(&["period"])?;
            let period = p.option("period").map(|v| integer::<u64>(v, "period")).transpose()?;
            if period == Some(0) {
                return Err(err(p.pos, "period must be positive"));
            }
            return Ok(BTNode::new(NodeKind::Root { period }, children(&p)?));
        }
        "sequence" | "fallback" => {
            p.allow(&[])?;
            let kind = if p.head == "sequence" { NodeKind::Sequence } else { NodeKind::Fallback };
            return Ok(BTNode::new(kind, children(&p)?));
        }
        "parallel" => {
            p.allow(&["m"])?;
            let m = p.option("m").ok_or_else(|| err(p.pos, "`parallel` needs `:m K`"))?;
            return Ok(BTNode::new(NodeKind::Parallel { failure_threshold: integer(m, "m")? }, children(&p)?));
        }
        "repeat" => {
            p.allow(&["times"])?;
            let count = match p.option("times") {
                None => RepeatCount::Infinite,
                Some(SExpr::Atom(s, _)) if s == "inf" => RepeatCount::Infinite,
                Some(v) => RepeatCount::Times(integer(v, "times")?),
            };
            return Ok(BTNode::new(NodeKind::Repeat(count), children(&p)?));
        }
        "condition" => {
            p.allow(&[])?;
            NodeKind::Condition(p.names(1)?.remove(0))
        }
        "action" => {
            p.allow(&["goal"])?;
            NodeKind::Action { name: p.names(1)?.remove(0), input: p.goal()? }
        }
        "action-server" => {
            p.allow(&["goal"])?;
            NodeKind::ActionServer { action: p.names(1)?.remove(0), input: p.goal()? }
        }
        "action-client" => {
            p.allow(&["goal"])?;
            let namespace = match p.namespaces.as_slice() {
                [(ns, _)] => ns.to_string(),
                [] => return Err(err(p.pos, "`action-client` needs `@NAMESPACE`")),
                [_, (_, q), ..] => return Err(err(*q, "more than one namespace")),
            };
            NodeKind::ActionClient { action: p.names(1)?.remove(0), namespace, input: p.goal()? }
        }
        "set-blackboard" => {
            p.allow(&[])?;
            match p.args.as_slice() {
                [k, v] => NodeKind::SetBlackboard { key: name(k)?, value: value(v)? },
                _ => return Err(err(p.pos, "`set-blackboard` takes KEY VALUE")),
            }
        }
        other => return Err(err(p.pos, format!("unknown node `{other}`"))),
    };
    Ok(BTNode::leaf(kind))
}

fn render_name(s: &str) -> String {
    let bare = !s.is_empty()
        && s.chars().all(is_symbol_char)
        && !s.starts_with([':', '@'])
        && !looks_numeric(s)
        && !matches!(s, "true" | "false");
    if bare {
        s.to_string()
    } else {
        quote(s)
    }
}

fn render_value(v: &BbValue) -> String {
    match v {
        BbValue::Bool(b) => b.to_string(),
        BbValue::Int(i) => i.to_string(),
        BbValue::Float(f) => format!("{f:?}"),
        BbValue::Text(s) => quote(s),
        BbValue::Coord(c) => format!("({} {})", c.x, c.y),
    }
}

fn head(n: &BTNode) -> String {
    let goal = |input: &Option<String>| input.as_ref().map(|g| format!(" :goal {}", render_name(g))).unwrap_or_default();
    match &n.kind {
        NodeKind::Root { period: Some(p) } => format!("root :period {p}"),
        NodeKind::Root { period: None } => "root".into(),
        NodeKind::Sequence => "sequence".into(),
        NodeKind::Fallback => "fallback".into(),
        NodeKind::Parallel { failure_threshold } => format!("parallel :m {failure_threshold}"),
        NodeKind::Repeat(RepeatCount::Infinite) => "repeat".into(),
        NodeKind::Repeat(RepeatCount::Times(k)) => format!("repeat :times {k}"),
        NodeKind::Condition(name) => format!("condition {}", render_name(name)),
        NodeKind::Action { name, input } => format!("action {}{}", render_name(name), goal(input)),
        NodeKind::ActionServer { action, input } => format!("action-server {}{}", render_name(action), goal(input)),
        NodeKind::ActionClient { action, namespace, input } => {
            format!("action-client {} @{namespace}{}", render_name(action), goal(input))
        }
        NodeKind::SetBlackboard { key, value } => format!("set-blackboard {} {}", render_name(key), render_value(value)),
    }
}

fn one_line(n: &BTNode) -> String {
    let mut s = format!("({}", head(n));
    for c in &n.children {
        s.push(' ');
        s.push_str(&one_line(c));
    }
    s.push(')');
    s
}

const WIDTH: usize = 80;

fn pretty(n: &BTNode, indent: usize, out: &mut String) {
    let line = one_line(n);
    if indent + line.len() <= WIDTH || n.children.is_empty() {
        out.push_str(&line);
        return;
    }
    out.push('(');
    out.push_str(&head(n));
    for c in &n.children {
        out.push('\n');
        out.push_str(&" ".repeat(indent + 2));
        pretty(c, indent + 2, out);
    }
    out.push(')');
}

/// Canonical text: nodes that fit in 80 columns stay on one line, others put
/// each child on its own indented line.
pub fn serialize_tree(tree: &BTNode) -> String {
    let mut out = String::new();
    pretty(tree, 0, &mut out);
    out.push('\n');
    out
}
