//! Tick-driven behavior-tree engine.

mod blackboard;
mod clock;
mod engine;
mod node;

pub use blackboard::{BbValue, Blackboard, UnsetKey};
pub use crate::geom::Cell;
pub use clock::{TickClock, DEFAULT_PERIOD};
pub use engine::{Leaves, NodeId, TickError, Tree};
pub use node::{BTNode, NodeKind, RepeatCount, Status, StructureError};
