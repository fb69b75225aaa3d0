//! Benchmark circuit generators.

use thiserror::Error;

use super::fet_conflict_graph;
use crate::coloring::{greedy_color, ColorOrder};
use crate::netlist::{
    AnalysisCard, Element, ModelCard, Netlist, NetlistError, Polarity, Pulse, SourceSpec,
};

pub const VDD: f64 = 1.8;
pub const LOAD_CAP: f64 = 10e-15;
pub const CHANNEL_LENGTH: f64 = 0.18e-6;
pub const NMOS_WIDTH: f64 = 0.5e-6;
pub const PMOS_WIDTH: f64 = 1e-6;
/// FETs per full-adder cell.
pub const CELL_FETS: usize = 28;
/// Nodes per cell: a, b, 12 internal, sum, carry-out.
pub const CELL_NODES: usize = 16;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator parameters: {0}")]
    Invalid(String),
    #[error("generated circuit colors to {got} but {expected} was requested")]
    ColorMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

fn nmos_card() -> ModelCard {
    let mut m = ModelCard::new("nch", Polarity::Nmos);
    m.vt0 = 0.5;
    m.kp = 200e-6;
    m.lambda = 0.05;
    m
}

fn pmos_card() -> ModelCard {
    let mut m = ModelCard::new("pch", Polarity::Pmos);
    m.vt0 = -0.5;
    m.kp = 80e-6;
    m.lambda = 0.05;
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub n: usize,
    pub c_target: usize,
    pub work_multiplier: u32,
}

impl SynthSpec {
    pub fn new(n: usize, c_target: usize) -> Self {
        Self {
            n,
            c_target,
            work_multiplier: 1,
        }
    }

    pub fn id(&self) -> String {
        format!("synth-n{}-c{}", self.n, self.c_target)
    }
}

/// `n` NMOS devices in groups of `c_target` that share a source node. When
/// `c_target` does not divide `n` the last group is smaller. Each device has
/// a private drain load and gate divider; group sources return to ground
/// through a resistor (size-1 groups are grounded directly).
pub fn gen_synth(spec: &SynthSpec) -> Result<Netlist, GenerateError> {
    let SynthSpec { n, c_target: c, .. } = *spec;
    if n == 0 || c == 0 || c > n {
        return Err(GenerateError::Invalid(format!(
            "need 1 <= C <= N, got N={n} C={c}"
        )));
    }
    let mut els = vec![Element::vsource("vdd", "vdd", "0", SourceSpec::dc(VDD))];
    let groups = n.div_ceil(c);
    for g in 0..groups {
        let members = g * c..((g + 1) * c).min(n);
        let source = if members.len() == 1 {
            "0".to_string()
        } else {
            let s = format!("s{g}");
            els.push(Element::resistor(&format!("rs{g}"), &s, "0", 1e3));
            s
        };
        for i in members {
            let (d, gate) = (format!("d{i}"), format!("g{i}"));
            // divider ratio varies so devices sit at different bias points
            let top = 10e3 + 1e3 * (i % 7) as f64;
            els.push(Element::resistor(&format!("rd{i}"), "vdd", &d, 20e3));
            els.push(Element::resistor(&format!("rt{i}"), "vdd", &gate, top));
            els.push(Element::resistor(&format!("rb{i}"), &gate, "0", 10e3));
            els.push(Element::mosfet(
                &format!("m{i}"),
                &d,
                &gate,
                &source,
                "0",
                "nch",
                1e-6,
                CHANNEL_LENGTH,
            ));
        }
    }
    let netlist = Netlist::from_parts(
        format!("{} synthetic kernel benchmark", spec.id()),
        els,
        [nmos_card()],
        vec![AnalysisCard::Tran {
            tstep: 1e-10,
            tstop: 1e-9,
        }],
    )?;
    let graph = fet_conflict_graph(&netlist);
    let colors = greedy_color(&graph, &ColorOrder::Netlist.sequence(&graph))
        .expect("netlist order is a permutation")
        .color_count();
    if colors != c {
        return Err(GenerateError::ColorMismatch {
            expected: c,
            got: colors,
        });
    }
    Ok(netlist)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdderConfig {
    pub bits: usize,
    /// Input nodes (e.g. "a0", "b3", "cin") tied to VDD instead of their default drive.
    pub high_inputs: Vec<String>,
    pub tstep: f64,
    pub tstop: f64,
}

impl AdderConfig {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            high_inputs: Vec::new(),
            tstep: 10e-12,
            tstop: 2e-9,
        }
    }

    pub fn id(&self) -> String {
        format!("adder{}", self.bits)
    }

    /// Node count of the generated circuit: per-cell nodes plus vdd and cin.
    pub fn declared_nodes(&self) -> usize {
        CELL_NODES * self.bits + 2
    }

    pub fn declared_fets(&self) -> usize {
        CELL_FETS * self.bits
    }
}

pub fn a0_pulse() -> Pulse {
    Pulse {
        v1: 0.0,
        v2: VDD,
        td: 100e-12,
        tr: 50e-12,
        tf: 50e-12,
        pw: 900e-12,
        per: 2e-9,
    }
}

/// Ripple-carry adder of 28T mirror full-adder cells. `a0` is pulsed, all
/// other inputs (and the carry-in `cin`) are held at 0 V unless listed in
/// `high_inputs`. Cell `k` drives `sum{k}` and `c{k}`; carry-in of cell `k>0`
/// is `c{k-1}`.
pub fn gen_adder(cfg: &AdderConfig) -> Result<Netlist, GenerateError> {
    if cfg.bits == 0 {
        return Err(GenerateError::Invalid("bits must be >= 1".into()));
    }
    let mut els = vec![Element::vsource("vdd", "vdd", "0", SourceSpec::dc(VDD))];
    let drive = |els: &mut Vec<Element>, node: &str| {
        let high = cfg.high_inputs.iter().any(|h| h.eq_ignore_ascii_case(node));
        let spec = if high {
            SourceSpec::dc(VDD)
        } else if node == "a0" {
            SourceSpec {
                dc: 0.0,
                pulse: Some(a0_pulse()),
            }
        } else {
            SourceSpec::dc(0.0)
        };
        els.push(Element::vsource(&format!("v{node}"), node, "0", spec));
    };
    drive(&mut els, "cin");
    for k in 0..cfg.bits {
        let (a, b) = (format!("a{k}"), format!("b{k}"));
        drive(&mut els, &a);
        drive(&mut els, &b);
        let ci = if k == 0 {
            "cin".to_string()
        } else {
            format!("c{}", k - 1)
        };
        full_adder_cell(&mut els, k, &a, &b, &ci);
    }
    let netlist = Netlist::from_parts(
        format!("{} ripple-carry adder", cfg.id()),
        els,
        [nmos_card(), pmos_card()],
        vec![AnalysisCard::Tran {
            tstep: cfg.tstep,
            tstop: cfg.tstop,
        }],
    )?;
    debug_assert_eq!(netlist.node_count(), cfg.declared_nodes());
    Ok(netlist)
}

fn full_adder_cell(els: &mut Vec<Element>, k: usize, a: &str, b: &str, ci: &str) {
    let n = |s: &str| format!("x{k}_{s}");
    let (cob, sob) = (n("cob"), n("sob"));
    let (sum, co) = (format!("sum{k}"), format!("c{k}"));
    let mut count = 0;
    let mut p = |els: &mut Vec<Element>, d: &str, g: &str, s: &str| {
        count += 1;
        els.push(Element::mosfet(
            &format!("mp{k}_{count}"),
            d,
            g,
            s,
            "vdd",
            "pch",
            PMOS_WIDTH,
            CHANNEL_LENGTH,
        ));
    };
    // carry: cob = !(a&b | ci&(a|b))
    p(els, &n("pc1"), a, "vdd");
    p(els, &n("pc1"), b, "vdd");
    p(els, &cob, ci, &n("pc1"));
    p(els, &n("pc2"), a, "vdd");
    p(els, &cob, b, &n("pc2"));
    // sum: sob = !(a&b&ci | cob&(a|b|ci))
    p(els, &n("ps1"), a, "vdd");
    p(els, &n("ps1"), b, "vdd");
    p(els, &n("ps1"), ci, "vdd");
    p(els, &sob, &cob, &n("ps1"));
    p(els, &n("ps2"), a, "vdd");
    p(els, &n("ps3"), b, &n("ps2"));
    p(els, &sob, ci, &n("ps3"));
    p(els, &co, &cob, "vdd");
    p(els, &sum, &sob, "vdd");

    let mut count = 0;
    let mut m = |els: &mut Vec<Element>, d: &str, g: &str, s: &str| {
        count += 1;
        els.push(Element::mosfet(
            &format!("mn{k}_{count}"),
            d,
            g,
            s,
            "0",
            "nch",
            NMOS_WIDTH,
            CHANNEL_LENGTH,
        ));
    };
    m(els, &n("nc1"), a, "0");
    m(els, &n("nc1"), b, "0");
    m(els, &cob, ci, &n("nc1"));
    m(els, &n("nc2"), a, "0");
    m(els, &cob, b, &n("nc2"));
    m(els, &n("ns1"), a, "0");
    m(els, &n("ns1"), b, "0");
    m(els, &n("ns1"), ci, "0");
    m(els, &sob, &cob, &n("ns1"));
    m(els, &n("ns2"), a, "0");
    m(els, &n("ns3"), b, &n("ns2"));
    m(els, &sob, ci, &n("ns3"));
    m(els, &co, &cob, "0");
    m(els, &sum, &sob, "0");

    els.push(Element::capacitor(&format!("cl{k}_s"), &sum, "0", LOAD_CAP));
    els.push(Element::capacitor(&format!("cl{k}_c"), &co, "0", LOAD_CAP));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse, ElementKind};

    #[test]
    fn synth_color_counts() {
        for (n, c) in [(1000, 1), (1000, 334), (100, 100), (1000, 26), (12, 5)] {
            let nl = gen_synth(&SynthSpec::new(n, c)).unwrap();
            assert_eq!(nl.count_kind(ElementKind::Mosfet), n);
            let g = fet_conflict_graph(&nl);
            let s = greedy_color(&g, &ColorOrder::Netlist.sequence(&g)).unwrap();
            assert_eq!(s.color_count(), c);
        }
        assert!(gen_synth(&SynthSpec::new(10, 0)).is_err());
        assert!(gen_synth(&SynthSpec::new(10, 11)).is_err());
    }

    #[test]
    fn synth_c1_is_edgeless() {
        let nl = gen_synth(&SynthSpec::new(1000, 1)).unwrap();
        assert_eq!(fet_conflict_graph(&nl).edge_count(), 0);
    }

    #[test]
    fn adder_counts() {
        for bits in [1, 2, 64] {
            let cfg = AdderConfig::new(bits);
            let nl = gen_adder(&cfg).unwrap();
            assert_eq!(nl.count_kind(ElementKind::Mosfet), 28 * bits);
            assert_eq!(nl.node_count(), cfg.declared_nodes());
        }
        assert_eq!(AdderConfig::new(64).declared_fets(), 1792);
    }

    #[test]
    fn adder_round_trips_through_text() {
        let nl = gen_adder(&AdderConfig::new(2)).unwrap();
        assert_eq!(parse(&nl.to_spice()).unwrap(), nl);
    }

    #[test]
    fn carry_chain_wiring() {
        let nl = gen_adder(&AdderConfig::new(2)).unwrap();
        // stage 1 gates see c0
        let gated_by_c0 = nl
            .elements
            .iter()
            .filter(|e| e.kind() == ElementKind::Mosfet && e.nodes[1] == "c0")
            .count();
        assert_eq!(gated_by_c0, 6);
    }
}
