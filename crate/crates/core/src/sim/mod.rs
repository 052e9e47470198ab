//! Deterministic grid world standing in for the physical robots.

mod grid;
mod planner;
mod robot;
mod world;

pub use grid::{Layer, MapError, OccupancyGrid, StaticMap};
pub use planner::{astar, neighbors, plan_global, PlanError};
pub use robot::{FollowStep, NoPath, RobotConfig, RobotState, Spin, Wait};
pub use world::{Body, Fault, FaultKind, World, WorldError, WorldEvent, WorldEventKind};
