mod common;

use proptest::prelude::*;

use common::{shipped, shipped_with};
use mbbt::bt::{BTNode, Status};
use mbbt::runtime::{plan, run_scenario, MemberSpec, RunConfig, RunOptions, Runtime, RuntimeError, ScriptedEnv};

#[test]
fn departed_robot_leaves_the_others_running() {
    let leave = 700;
    let opts = RunOptions::default();
    let mut p = plan(&shipped(), &opts).unwrap();
    for m in &mut p.members {
        if m.namespace == "robot2" {
            m.leave_at = Some(leave);
        }
    }
    let mut progress = p.progress;
    let mut rt = Runtime::new(p.world, p.members, p.config).unwrap();
    rt.run_until(|rt| {
        progress.feed(rt.records());
        progress.cycles("robot1") >= 3 && progress.cycles("robot3") >= 3
    })
    .unwrap();
    progress.feed(rt.records());
    assert!(progress.cycles("robot1") >= 3 && progress.cycles("robot3") >= 3, "stalled at tick {}", rt.now());
    assert_eq!(progress.skips("robot1") + progress.skips("robot3"), 0);
    let t = rt.trace();
    assert!(t.in_ns("robot2").all(|r| r.tick <= leave), "robot2 acted after leaving");
    assert_ne!(rt.root_status("tpu"), Some(Status::Failure));
}

#[test]
fn two_writers_on_one_command_topic_stop_the_run() {
    let client = || BTNode::root(BTNode::action_client("navigate", "srv", None));
    let specs = vec![
        MemberSpec::new("tpu-a", client()).with_period(10),
        MemberSpec::new("tpu-b", client()).with_period(10),
        MemberSpec::new("srv", BTNode::root(BTNode::action_server("navigate"))).with_period(10),
    ];
    let env = ScriptedEnv::new().script("navigate", 5, Status::Success);
    let mut rt = Runtime::new(env, specs, RunConfig { max_ticks: 1000, ..RunConfig::default() }).unwrap();
    match rt.run() {
        Err(RuntimeError::Invariant { tick, message }) => {
            assert!(tick <= 20, "caught late at {tick}");
            assert!(message.contains("srv/navigate"), "{message}");
        }
        other => panic!("expected an invariant error, got {other:?}"),
    }
}

fn fault_lines() -> impl Strategy<Value = String> {
    let one = (1u64..1500, 0i64..20, 0i64..20, 0usize..4, any::<bool>()).prop_map(|(t, x, y, who, block)| {
        let target = ["", " @robot1", " @robot2", " @robot3"][who];
        let verb = if block { "block-cell" } else { "unblock-cell" };
        format!("{t} {verb} {x} {y}{target}\n")
    });
    proptest::collection::vec(one, 1..8).prop_map(|v| format!("[faults]\n{}", v.concat()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn robots_never_stand_on_obstacles(faults in fault_lines()) {
        let scn = shipped_with(&faults);
        let opts = RunOptions { max_ticks: Some(1500), cycles: Some(0), ..RunOptions::default() };
        let out = run_scenario(&scn, &opts).unwrap();
        prop_assert!(out.error.is_none(), "{:?}", out.error);
        let speed = out.world.config().speed as i32;
        for ns in out.world.robot_names() {
            let trail = out.world.robot(ns).unwrap().trail();
            for w in trail.windows(2) {
                prop_assert!(w[0].manhattan(w[1]) as i32 <= speed, "{ns} jumped {} -> {}", w[0], w[1]);
            }
            prop_assert!(trail.iter().all(|c| !scn.map.is_occupied(*c)));
        }
    }
}
