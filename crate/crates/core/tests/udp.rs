mod common;

use std::net::SocketAddrV4;

use common::shipped;
use mbbt::dds::wire::DEFAULT_GROUP;
use mbbt::runtime::{run_udp, Mode, RunOptions, UdpOptions};

#[test]
fn shipped_scenario_completes_a_cycle_over_sockets() {
    let port = 46_000 + (std::process::id() % 1000) as u16;
    let udp = UdpOptions { group: SocketAddrV4::new(*DEFAULT_GROUP.ip(), port), ..UdpOptions::default() };
    let opts = RunOptions { cycles: Some(1), udp, ..RunOptions::default() };
    let out = run_udp(&shipped(), &opts).unwrap();
    assert!(out.error.is_none(), "{:?}", out.error);
    assert_eq!(out.trace.header.mode, Mode::Udp);
    for r in &out.summary.robots {
        assert!(r.cycles >= 1, "{} finished {} cycles", r.namespace, r.cycles);
    }
    assert!(out.trace.records.windows(2).all(|w| w[0].tick <= w[1].tick));
}
