use std::path::PathBuf;

use phcirc_core::checks::{verify_netlist, VerifyOptions};
use phcirc_core::netlist::parse;

fn netlist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../netlists")
}

pub const GOLDEN: [&str; 6] =
    ["rc.cir", "rlc.cir", "rl_loop.cir", "lc.cir", "npn_bias.cir", "bridge_rectifier/acdc.cir"];

#[test]
fn golden_netlists_verify() {
    for name in GOLDEN {
        let text = std::fs::read_to_string(netlist_dir().join(name)).unwrap();
        let netlist = parse(&text).unwrap();
        let suites = verify_netlist(&netlist, &VerifyOptions { seed: 7, ..Default::default() }).unwrap();
        for s in &suites {
            assert!(s.ok(), "{name}: {s:?}");
        }
    }
}
