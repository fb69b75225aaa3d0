//! Circuit generators, the resistor-insertion transform, benchmarks and
//! waveform comparison.

pub mod bench;
pub mod compare;
pub mod generate;
pub mod transform;

use std::fmt::Write as _;

use crate::coloring::{color_stats, greedy_color, ColorOrder, ColorSchedule, ConflictGraph};
use crate::netlist::{ElementParams, Netlist};

pub use bench::{bench, BenchMode, BenchOptions, BenchRecord};
pub use compare::{compare_waveforms, CompareReport};
pub use generate::{gen_adder, gen_synth, AdderConfig, SynthSpec};
pub use transform::{insert_resistors, TransformOptions, TransformReport};

/// FET conflict graph straight from the netlist, in FET order.
pub fn fet_conflict_graph(netlist: &Netlist) -> ConflictGraph {
    let nodes: Vec<Vec<usize>> = netlist
        .elements
        .iter()
        .filter(|e| matches!(e.params, ElementParams::Mosfet { .. }))
        .map(|e| {
            e.nodes
                .iter()
                .filter_map(|n| netlist.node_index(n))
                .collect()
        })
        .collect();
    ConflictGraph::from_device_nodes(&nodes)
}

pub fn color_netlist(netlist: &Netlist, order: ColorOrder) -> (ConflictGraph, ColorSchedule) {
    let graph = fet_conflict_graph(netlist);
    let schedule =
        greedy_color(&graph, &order.sequence(&graph)).expect("order sequence is a permutation");
    (graph, schedule)
}

/// Tab-separated coloring summary: `key<TAB>value` header lines, then a
/// `size<TAB>groups` histogram, then `device<TAB>color` rows.
pub fn color_report(netlist: &Netlist, order: ColorOrder) -> String {
    let (graph, schedule) = color_netlist(netlist, order);
    let stats = color_stats(&schedule, &graph);
    let fets: Vec<&str> = netlist
        .elements
        .iter()
        .filter(|e| matches!(e.params, ElementParams::Mosfet { .. }))
        .map(|e| e.name.as_str())
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "devices\t{}", fets.len());
    let _ = writeln!(out, "colors\t{}", stats.colors);
    let _ = writeln!(out, "edges\t{}", stats.edges);
    let _ = writeln!(out, "max_degree\t{}", stats.max_degree);
    let _ = writeln!(out, "order\t{order}");
    let _ = writeln!(out, "size\tgroups");
    for (size, count) in stats.histogram() {
        let _ = writeln!(out, "{size}\t{count}");
    }
    let _ = writeln!(out, "device\tcolor");
    for (name, &c) in fets.iter().zip(schedule.colors()) {
        let _ = writeln!(out, "{name}\t{c}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Circuit;
    use crate::netlist::parse;

    #[test]
    fn netlist_graph_matches_compiled_graph() {
        let nl = gen_adder(&AdderConfig::new(2)).unwrap();
        let c = Circuit::compile(&nl).unwrap();
        assert_eq!(fet_conflict_graph(&nl), c.conflict_graph());
    }

    #[test]
    fn report_layout() {
        let nl = parse("t\nM1 a b 0 0 nm\nM2 a c 0 0 nm\n.model nm NMOS(vto=1)\n.end").unwrap();
        let r = color_report(&nl, ColorOrder::Netlist);
        assert!(r.contains("colors\t2\n"));
        assert!(r.ends_with("device\tcolor\nm1\t0\nm2\t1\n"));
    }
}
