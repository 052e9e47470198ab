//! Behavior trees that span robots: split actions over a discovered data
//! space, tree transforms, a grid simulator and a deterministic runtime.

pub mod action;
pub mod bt;
pub mod dds;
pub mod geom;
pub mod transform;
pub mod sim;
pub mod agents;
pub mod runtime;
pub mod cli;
pub mod dsl;
