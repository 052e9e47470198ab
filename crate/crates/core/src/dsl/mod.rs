//! Text formats: trees as s-expressions, and scenario files.

mod scenario;
mod sexpr;
mod tree;

pub use scenario::{
    parse_scenario, RobotDoc, RunDoc, Scenario, ScenarioDoc, ScenarioError, TpuDoc, DEFAULT_ROBOT_PERIOD,
    DEFAULT_TPU_PERIOD,
};
pub use sexpr::{Pos, SyntaxError};
pub use tree::{parse_fragment, parse_tree, serialize_tree, DslError};
