use serde::{Deserialize, Serialize};

use crate::action::{Request, RequestId, Response};
use crate::bt::{BbValue, Status};
use crate::geom::{Cell, Goal, Pose};

/// Self-describing topic payload: a kind tag plus a body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "kebab-case")]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Coord(Cell),
    Goal(Goal),
    Pose(Pose),
    Status(Status),
    Requests(Vec<Request>),
    Responses(Vec<Response>),
    /// A payload attributed to one request.
    Tagged { request: RequestId, body: Box<Value> },
    Bytes(Vec<u8>),
}

impl Value {
    pub fn tagged(request: RequestId, body: Value) -> Self {
        Value::Tagged { request, body: Box::new(body) }
    }

    /// Canonical form used when testing two commands for equality.
    pub fn canonical(&self) -> Value {
        match self {
            Value::Goal(g) => Value::Goal(g.canonical()),
            Value::Coord(c) => Value::Goal(Goal::new(*c)),
            other => other.clone(),
        }
    }

    pub fn as_goal(&self) -> Option<Goal> {
        match self {
            Value::Goal(g) => Some(*g),
            Value::Coord(c) => Some(Goal::new(*c)),
            _ => None,
        }
    }
}

impl From<&BbValue> for Value {
    fn from(v: &BbValue) -> Self {
        match v {
            BbValue::Bool(b) => Value::Bool(*b),
            BbValue::Int(i) => Value::Int(*i),
            BbValue::Float(f) => Value::Float(*f),
            BbValue::Text(s) => Value::Text(s.clone()),
            BbValue::Coord(c) => Value::Goal(Goal::new(*c)),
        }
    }
}
