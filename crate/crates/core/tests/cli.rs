mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value as Json;

fn mbbt(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mbbt"));
    cmd.args(args).env_remove("MBBT_SEED");
    if let Some(s) = seed {
        cmd.env("MBBT_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_prints_summary_and_writes_trace_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, plot) = (dir.path().join("t.jsonl"), dir.path().join("p.svg"));
    let scn = common::shipped_path();
    let o = mbbt(&["run", p(&scn), "--trace", p(&trace), "--plot", p(&plot)], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: Json = serde_json::from_slice(&o.stdout).unwrap();
    let robots = summary["robots"].as_array().unwrap();
    assert_eq!(robots.len(), 3);
    assert!(robots.iter().all(|r| r["cycles"].as_u64() >= Some(3) && r["skips"] == 0));
    assert_eq!(summary["rejected_requests"], 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    let header: Json = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!((header["mode"].as_str(), header["seed"].as_u64()), (Some("det"), Some(7)));
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 3);
}

#[test]
fn seed_variable_overrides_the_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let scn = common::shipped_path();
    let o = mbbt(&["run", p(&scn), "--trace", p(&trace), "--cycles", "1"], Some("41"));
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().next().unwrap().contains("\"seed\":41"));
    assert_eq!(code(&mbbt(&["run", p(&scn)], Some("many"))), 2);
}

#[test]
fn tick_and_cycle_limits_apply() {
    let scn = common::shipped_path();
    let o = mbbt(&["run", p(&scn), "--ticks", "50"], None);
    assert_eq!(code(&o), 0);
    let s: Json = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["ticks"].as_u64().unwrap() <= 50);
    let o = mbbt(&["run", p(&scn), "--cycles", "1"], None);
    let s: Json = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["robots"].as_array().unwrap().iter().all(|r| r["cycles"] == 1));
}

#[test]
fn scenario_errors_exit_two_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let o = mbbt(&["run", p(&dir.path().join("absent.scn"))], None);
    assert_eq!(code(&o), 2);
    std::fs::copy(common::scenarios_dir().join("empty20.map"), dir.path().join("empty20.map")).unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, common::shipped_text().replace("g3 = 17 17", "g3 = 17 40")).unwrap();
    let o = mbbt(&["run", p(&bad)], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 18"), "{}", stderr(&o));
    let o = mbbt(&["run", p(&bad), "--mode", "fast"], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn parse_echoes_canonical_form_and_reports_positions() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.bt");
    std::fs::write(&file, "# demo\n(root   (sequence (action a)\n   (action b :goal g)))").unwrap();
    let o = mbbt(&["parse", p(&file)], None);
    assert_eq!(code(&o), 0);
    let canonical = String::from_utf8(o.stdout).unwrap();
    assert_eq!(canonical, "(root (sequence (action a) (action b :goal g)))\n");
    std::fs::write(&file, &canonical).unwrap();
    assert_eq!(String::from_utf8(mbbt(&["parse", p(&file)], None).stdout).unwrap(), canonical);

    std::fs::write(&file, "(root\n  (sequence (action a)\n").unwrap();
    let o = mbbt(&["parse", p(&file)], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2:3: unclosed"), "{}", stderr(&o));
    let shipped = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("trees/tpu.bt");
    assert_eq!(code(&mbbt(&["parse", p(&shipped)], None)), 0);
}

#[test]
fn compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let scn = common::shipped_path();
    let trace = |name: &str, extra: &[&str]| {
        let path = dir.path().join(name);
        let mut args = vec!["run", p(&scn), "--trace", p(&path)];
        args.extend(extra);
        assert_eq!(code(&mbbt(&args, None)), 0);
        path
    };
    let a = trace("a.jsonl", &[]);
    let b = trace("b.jsonl", &[]);
    let short = trace("short.jsonl", &["--cycles", "1"]);
    assert_eq!(code(&mbbt(&["compare", p(&a), p(&b)], None)), 0);
    let o = mbbt(&["compare", p(&a), p(&short)], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("diverge"));
    assert_eq!(code(&mbbt(&["compare", p(&a), p(&short), "--project", "tpu"], None)), 0);

    let udp = dir.path().join("u.jsonl");
    let text = std::fs::read_to_string(&a).unwrap().replacen("\"mode\":\"det\"", "\"mode\":\"udp\"", 1);
    std::fs::write(&udp, text).unwrap();
    assert_eq!(code(&mbbt(&["compare", p(&a), p(&udp)], None)), 2);
    let junk = dir.path().join("junk.jsonl");
    std::fs::write(&junk, "not a trace\n").unwrap();
    assert_eq!(code(&mbbt(&["compare", p(&a), p(&junk)], None)), 2);
}
