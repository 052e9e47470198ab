//! Command-line front end: `run`, `compare` and `parse`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dsl::{self, Scenario};
use crate::runtime::{self, compare, CompareError, Mode, RunOptions, RuntimeError, Trace};
use crate::sim::World;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

pub const SEED_VAR: &str = "MBBT_SEED";

#[derive(Debug, Parser)]
#[command(name = "mbbt", version, about = "Run, compare and parse multi-robot behavior trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Det,
    Udp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and print its summary as JSON.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        cycles: Option<u32>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write an SVG of the map, goals and robot trails.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        strict_collisions: bool,
        /// Multicast group for udp mode.
        #[arg(long, value_name = "ADDR:PORT", default_value_t = crate::dds::wire::DEFAULT_GROUP)]
        group: std::net::SocketAddrV4,
    },
    /// Compare the completion logs of two deterministic traces.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        project: Option<String>,
    },
    /// Validate a tree file and print its canonical form.
    Parse { file: PathBuf },
}

/// Runs the CLI against explicit streams and returns the exit code.
pub fn run_cli<I, T>(args: I, env_seed: Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match cli.command {
        Command::Run { scenario, ticks, cycles, mode, trace, plot, strict_collisions, group } => {
            let seed = match env_seed.map(|s| s.trim().parse::<u64>().map_err(|_| s)) {
                None => None,
                Some(Ok(s)) => Some(s),
                Some(Err(s)) => {
                    let _ = writeln!(err, "error: {SEED_VAR} must be an unsigned integer, got `{s}`");
                    return EXIT_INPUT;
                }
            };
            let udp = runtime::UdpOptions { group, ..Default::default() };
            let opts = RunOptions { max_ticks: ticks, cycles, seed, strict_collisions, udp, ..RunOptions::default() };
            cmd_run(&scenario, mode, &opts, trace.as_deref(), plot.as_deref(), out, err)
        }
        Command::Compare { a, b, project } => cmd_compare(&a, &b, project.as_deref(), out, err),
        Command::Parse { file } => cmd_parse(&file, out, err),
    }
}

fn cmd_run(
    path: &Path,
    mode: Option<ModeArg>,
    opts: &RunOptions,
    trace_path: Option<&Path>,
    plot_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let scn = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_INPUT;
        }
    };
    let mode = match mode {
        Some(ModeArg::Det) => Mode::Det,
        Some(ModeArg::Udp) => Mode::Udp,
        None => scn.doc.run.mode,
    };
    let outcome = match mode {
        Mode::Det => runtime::run_scenario(&scn, opts),
        Mode::Udp => runtime::run_udp(&scn, opts),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    if let Some(p) = trace_path {
        if let Err(e) = std::fs::write(p, outcome.trace.to_jsonl()) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_FAIL;
        }
    }
    if let Some(p) = plot_path {
        if let Err(e) = std::fs::write(p, render_svg(&outcome.world, &scn)) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_FAIL;
        }
    }
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
    if let Some(e) = &outcome.error {
        let _ = writeln!(err, "error: {e}");
    }
    exit_for(outcome.error.as_ref())
}

fn exit_for(error: Option<&RuntimeError>) -> i32 {
    match error {
        None => EXIT_OK,
        Some(_) => EXIT_INVARIANT,
    }
}

fn load_trace(path: &Path, err: &mut dyn Write) -> Option<Trace> {
    let parsed = std::fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|t| Trace::parse(&t).map_err(|e| e.to_string()));
    match parsed {
        Ok(t) => Some(t),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            None
        }
    }
}

fn cmd_compare(a: &Path, b: &Path, project: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (Some(ta), Some(tb)) = (load_trace(a, err), load_trace(b, err)) else {
        return EXIT_INPUT;
    };
    match compare(&ta, &tb, project) {
        Ok(n) => {
            let _ = writeln!(out, "match: {n} completions");
            EXIT_OK
        }
        Err(e @ CompareError::Nondeterministic(_)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
        Err(e) => {
            let _ = writeln!(out, "{e}");
            EXIT_FAIL
        }
    }
}

fn cmd_parse(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
            return EXIT_INPUT;
        }
    };
    match dsl::parse_tree(&text) {
        Ok(tree) => {
            let _ = write!(out, "{}", dsl::serialize_tree(&tree));
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "{}:{e}", path.display());
            EXIT_INPUT
        }
    }
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Map, obstacles, goals and each robot's trail, y growing upward.
pub fn render_svg(world: &World, scn: &Scenario) -> String {
    let map = world.map();
    let s = 20;
    let (w, h) = (map.width() as i32, map.height() as i32);
    let px = |x: i32| x * s + s / 2;
    let py = |y: i32| (h - 1 - y) * s + s / 2;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">"#, w * s, h * s);
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fafafa"/>"##);
    for y in 0..h {
        for x in 0..w {
            let c = crate::geom::Cell::new(x, y);
            if map.is_occupied(c) || world.obstacles().contains(&c) {
                let _ = writeln!(svg, r##"<rect x="{}" y="{}" width="{s}" height="{s}" fill="#444"/>"##, x * s, (h - 1 - y) * s);
            }
        }
    }
    for (g, _) in &scn.doc.goals {
        let _ = writeln!(
            svg,
            r##"<circle cx="{}" cy="{}" r="{}" fill="none" stroke="#000" stroke-width="2"/><text x="{}" y="{}" font-size="12">{}</text>"##,
            px(g.cell.x),
            py(g.cell.y),
            s / 2,
            px(g.cell.x) + s / 2,
            py(g.cell.y) - s / 2,
            g.name
        );
    }
    for (i, ns) in world.robot_names().enumerate() {
        let body = world.robot(ns).unwrap();
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = body.trail().iter().map(|c| format!("{},{}", px(c.x), py(c.y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-opacity="0.5" stroke-width="3"/>"#,
            points.join(" ")
        );
        let c = body.state().pose.cell;
        let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="6" fill="{color}"><title>{ns}</title></circle>"#, px(c.x), py(c.y));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariant_failures_map_to_their_own_exit_code() {
        assert_eq!(exit_for(None), EXIT_OK);
        let e = RuntimeError::Invariant { tick: 4, message: "two robots on (1, 1)".into() };
        assert_eq!(exit_for(Some(&e)), EXIT_INVARIANT);
    }
}
