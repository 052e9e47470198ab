//! Split-action protocol driven directly over one data space.

use proptest::prelude::*;

use mbbt::action::{ActionClient, ActionServer, ActionTopics, CommandExecutor, ExecStep};
use mbbt::bt::Status;
use mbbt::dds::{GlobalDataSpace, Value};
use mbbt::geom::Cell;

struct Counter {
    n: i64,
    duration: i64,
}

impl CommandExecutor for Counter {
    fn begin(&mut self, _: &Value) {
        self.n = 0;
    }

    fn step(&mut self, _: &Value) -> ExecStep {
        self.n += 1;
        if self.n >= self.duration {
            ExecStep::Complete(Value::Int(self.n))
        } else {
            ExecStep::Progress(Value::Int(self.n))
        }
    }
}

struct Rig {
    bus: GlobalDataSpace,
    client: ActionClient,
    server: ActionServer,
    exec: Counter,
}

impl Rig {
    fn new(duration: i64) -> Self {
        let mut bus = GlobalDataSpace::new();
        let (tpu, robot) = (bus.join("tpu").unwrap(), bus.join("robot1").unwrap());
        let topics = ActionTopics::new("robot1", "navigate").unwrap();
        let client = ActionClient::new(topics.clone(), tpu, 0);
        let server = ActionServer::new(topics, robot);
        client.bind(&mut bus).unwrap();
        server.bind(&mut bus).unwrap();
        Self { bus, client, server, exec: Counter { n: 0, duration } }
    }
}

/// Both clocks merged in time order; on a shared instant the server ticks first.
fn schedule(client_period: u64, server_period: u64, horizon: u64) -> Vec<(u64, bool)> {
    let mut out: Vec<(u64, bool)> = (1..=horizon / client_period).map(|k| (k * client_period, true)).collect();
    out.extend((1..=horizon / server_period).map(|k| (k * server_period, false)));
    out.sort();
    out
}

fn value_at(history: &[(u64, i64)], t: u64) -> i64 {
    history.iter().take_while(|(at, _)| *at <= t).last().map_or(0, |(_, v)| *v)
}

#[test]
fn client_completes_faithfully_at_every_period_ratio() {
    let command = Value::Coord(Cell::new(10, 0));
    for (dc, ds) in [(10, 10), (10, 30), (30, 10), (70, 20), (20, 70)] {
        let mut rig = Rig::new(6);
        let mut history = Vec::new();
        let mut done = None;
        for (t, client_turn) in schedule(dc, ds, 20_000) {
            rig.bus.set_time(t);
            if !client_turn {
                rig.server.tick(&mut rig.bus, &mut rig.exec).unwrap();
                if let Some(Value::Int(n)) = rig.server.state_d() {
                    history.push((t, *n));
                }
                continue;
            }
            let open = rig.client.open_request();
            let tick = rig.client.tick(&mut rig.bus, command.clone());
            if let Some(Value::Int(seen)) = rig.client.state() {
                let floor = value_at(&history, t.saturating_sub(dc + ds));
                assert!(*seen >= floor, "{dc}:{ds} client saw {seen} at {t}, server had {floor} by then");
            }
            if tick.status == Status::Success {
                let tagged = &rig.bus.peek(&rig.client.topics().result).unwrap().value;
                let Value::Tagged { request, body } = tagged else { panic!("untagged result") };
                assert_eq!(Some(*request), open.or(rig.server.accepted()), "{dc}:{ds} result for another request");
                assert_eq!(**body, Value::Status(Status::Success));
                done = Some(t);
                break;
            }
        }
        assert!(done.is_some(), "{dc}:{ds} never completed");
        assert_eq!(rig.server.command_d(), Some(&command.canonical()), "{dc}:{ds} command chain");
        assert_eq!(rig.client.state(), rig.server.state_d(), "{dc}:{ds} state chain");
        assert_eq!(rig.client.last_result(), rig.server.result_d());
        assert!(rig.bus.violations().is_empty());
    }
}

#[test]
fn silent_server_times_out_after_three_client_ticks() {
    let mut rig = Rig::new(3);
    let cmd = Value::Int(1);
    let statuses: Vec<_> = (0..4).map(|_| rig.client.tick(&mut rig.bus, cmd.clone()).status).collect();
    assert_eq!(statuses, [Status::Running, Status::Running, Status::Running, Status::Failure]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_writer_holds_under_random_interleavings(
        turns in proptest::collection::vec((any::<bool>(), 0u8..8), 1..400),
        duration in 1i64..6,
    ) {
        let mut rig = Rig::new(duration);
        let mut command = 0;
        let mut last_version = std::collections::BTreeMap::new();
        for (i, (client_turn, roll)) in turns.into_iter().enumerate() {
            rig.bus.set_time(i as u64);
            if client_turn {
                if roll == 0 {
                    command += 1;
                }
                rig.client.tick(&mut rig.bus, Value::Int(command));
            } else if roll == 1 {
                rig.server.reset(&mut rig.exec);
            } else {
                rig.server.tick(&mut rig.bus, &mut rig.exec).unwrap();
            }
        }
        let topics = rig.client.topics().clone();
        let (tpu, robot) = (rig.bus.lookup("tpu").unwrap(), rig.bus.lookup("robot1").unwrap());
        for p in rig.bus.take_log() {
            let want = if topics.client_side().contains(&p.topic.as_str()) { tpu } else { robot };
            prop_assert_eq!(p.writer, want, "{} written by the wrong side", p.topic);
            let prev = last_version.insert(p.topic.clone(), p.version).unwrap_or(0);
            prop_assert!(p.version > prev);
        }
        prop_assert!(rig.bus.violations().is_empty());
    }
}
