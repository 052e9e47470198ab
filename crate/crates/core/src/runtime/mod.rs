//! Deterministic execution of a set of members over one data space.

mod env;
mod scenario;
mod scheduler;
pub mod udp;
pub mod trace;

pub use env::{EnvEvent, Environment, Script, ScriptedEnv};
pub use scenario::{build, plan, run_scenario, Plan, summarize, BuildError, Progress, RobotSummary, RunOptions, RunOutcome, Summary};
pub use scheduler::{MemberSpec, RunConfig, Runtime, RuntimeError};
pub use udp::{run_udp, UdpOptions};
pub use trace::{compare, CompareError, Completion, EventKind, Mode, Record, Trace, TraceError, TraceHeader};
