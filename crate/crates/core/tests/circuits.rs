mod common;

use common::*;
use proptest::prelude::*;
use stampsim::coloring::{greedy_color, ColorOrder};
use stampsim::devices::OperatingPoint;
use stampsim::engine::{Circuit, NrOptions, Simulator, TranConfig};
use stampsim::kernels::{KernelConfig, KernelKind};
use stampsim::netlist::{Element, ModelCard, Netlist, Polarity};
use stampsim::workbench::generate::VDD;
use stampsim::workbench::{
    compare_waveforms, fet_conflict_graph, gen_adder, insert_resistors, AdderConfig,
    TransformOptions,
};

fn loadsingle(nl: &Netlist) -> Simulator {
    Simulator::new(
        Circuit::compile(nl).unwrap(),
        KernelConfig::new(KernelKind::LoadSingle, 1),
        ColorOrder::Netlist,
    )
    .unwrap()
}

#[test]
fn ota_conflict_graph() {
    let g = fet_conflict_graph(&ota());
    assert_eq!(
        g.edges(),
        vec![(0, 1), (0, 2), (0, 3), (0, 4), (1, 3), (1, 4), (2, 3)]
    );
    let s = greedy_color(&g, &ColorOrder::Netlist.sequence(&g)).unwrap();
    s.validate(&g).unwrap();
    assert_eq!(s.colors(), &[0, 1, 1, 2, 2]);
}

#[test]
fn conflict_graph_equals_plan_overlap() {
    let transformed = insert_resistors(&adder(2), &TransformOptions::default())
        .unwrap()
        .0;
    for nl in [
        ota(),
        inverter(),
        adder(1),
        adder(2),
        synth(100, 10),
        synth(60, 1),
        transformed,
    ] {
        let c = Circuit::compile(&nl).unwrap();
        assert_eq!(c.conflict_graph().edges(), plan_overlap(&c), "{}", nl.title);
    }
}

fn random_netlist() -> impl Strategy<Value = Netlist> {
    prop::collection::vec((prop::collection::vec(0usize..8, 4), any::<bool>()), 1..20).prop_map(
        |fets| {
            let node = |k: usize| {
                if k == 0 {
                    "0".to_string()
                } else {
                    format!("n{k}")
                }
            };
            let els: Vec<Element> = fets
                .iter()
                .enumerate()
                .map(|(i, (t, p))| {
                    let model = if *p { "pm" } else { "nm" };
                    Element::mosfet(
                        &format!("m{i}"),
                        &node(t[0]),
                        &node(t[1]),
                        &node(t[2]),
                        &node(t[3]),
                        model,
                        1e-6,
                        1e-6,
                    )
                })
                .collect();
            let models = [
                ModelCard::new("nm", Polarity::Nmos),
                ModelCard::new("pm", Polarity::Pmos),
            ];
            Netlist::from_parts("random", els, models, vec![]).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn random_circuits_graph_equals_plan_overlap(nl in random_netlist()) {
        let c = Circuit::compile(&nl).unwrap();
        prop_assert_eq!(c.conflict_graph().edges(), plan_overlap(&c));
    }
}

/// Dense assembly of the same linearized devices, indexing by terminal
/// unknowns rather than through entry handles.
#[test]
fn adder_assembly_matches_dense_oracle() {
    let nl = adder(1);
    let mut sim = loadsingle(&nl);
    let x = sim.dc_operating_point(&NrOptions::default()).unwrap();
    let op = OperatingPoint::transient(&x, 1e-11, 1e-11);
    sim.assemble(&op).unwrap();
    let c = sim.circuit();
    let n = c.dimension();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    let mut add = |terms: &[Option<usize>], s: &stampsim::devices::LocalStamp| {
        for (i, ti) in terms.iter().enumerate() {
            let Some(r) = *ti else { continue };
            b[r] += s.i[i];
            for (j, tj) in terms.iter().enumerate() {
                if let Some(col) = *tj {
                    a[r][col] += s.g[i][j];
                }
            }
        }
    };
    for d in &c.linear {
        add(&d.plan().terminals, &d.local_stamp(&op));
    }
    for f in &c.fets {
        add(&f.plan.terminals, &f.local_stamp(&op, 1));
    }
    let dense = c.system.to_dense();
    let rhs = c.system.rhs();
    for r in 0..n {
        assert!((rhs[r] - b[r]).abs() <= 1e-15 + 1e-12 * b[r].abs());
        for col in 0..n {
            assert!(
                (dense[r][col] - a[r][col]).abs() <= 1e-15 + 1e-12 * a[r][col].abs(),
                "({r},{col})"
            );
        }
    }
}

#[test]
fn adder_system_solve_matches_dense_oracle() {
    let nl = adder(2);
    let mut sim = loadsingle(&nl);
    let x0 = sim.dc_operating_point(&NrOptions::default()).unwrap();
    let (x1, _, _) = sim
        .newton_step(&x0, 0.0, None, &NrOptions::default())
        .unwrap();
    let sys = sim.system();
    let oracle = dense_solve(sys.to_dense(), sys.rhs());
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in x1.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
    }
    assert!(sim.lu().reconstruction_error(&sys.values()) <= 1e-12 * sys.norm_inf());
}

fn adder_dc(bits: usize, high: &[&str]) -> (Netlist, Vec<f64>) {
    let mut cfg = AdderConfig::new(bits);
    cfg.high_inputs = high.iter().map(|s| s.to_string()).collect();
    let nl = gen_adder(&cfg).unwrap();
    let x = loadsingle(&nl)
        .dc_operating_point(&NrOptions::default())
        .unwrap();
    (nl, x)
}

fn logic(nl: &Netlist, x: &[f64], node: &str) -> bool {
    let v = x[nl.node_index(node).unwrap()];
    assert!(
        v < 0.1 * VDD || v > 0.9 * VDD,
        "{node} at {v} V is not a logic level"
    );
    v > 0.5 * VDD
}

#[test]
fn two_bit_adder_truth_table_at_dc() {
    // (high inputs, sum0, sum1, carry out)
    let cases: [(&[&str], bool, bool, bool); 5] = [
        (&[], false, false, false),
        (&["a0"], true, false, false),
        (&["a0", "b0"], false, true, false),
        (&["a0", "b0", "a1"], false, false, true),
        (&["cin", "a0", "b0", "a1", "b1"], true, true, true),
    ];
    for (high, s0, s1, co) in cases {
        let (nl, x) = adder_dc(2, high);
        assert_eq!(logic(&nl, &x, "sum0"), s0, "{high:?}");
        assert_eq!(logic(&nl, &x, "sum1"), s1, "{high:?}");
        assert_eq!(logic(&nl, &x, "c1"), co, "{high:?}");
    }
}

#[test]
fn sixteen_bit_adder_dc_from_zero_guess() {
    // undamped NR runs off to ~1e10 V on this one
    let (nl, x) = adder_dc(16, &["a0", "b0", "b5"]);
    assert!(!logic(&nl, &x, "sum0"));
    assert!(logic(&nl, &x, "sum1"));
    assert!(logic(&nl, &x, "sum5"));
    assert!((2..16)
        .filter(|&k| k != 5)
        .all(|k| !logic(&nl, &x, &format!("sum{k}"))));
}

#[test]
fn inverter_swings_rail_to_rail() {
    let nl = inverter();
    let w = loadsingle(&nl)
        .run_transient(&TranConfig::from_netlist(&nl).unwrap())
        .unwrap();
    let out = w.column("out").unwrap();
    let vin = w.column("in").unwrap();
    assert!(out[0] > 0.99 * VDD);
    let hi = out
        .iter()
        .position(|&v| v < 0.01 * VDD)
        .expect("output falls");
    assert!(vin[hi] > 0.5 * VDD);
    // once the output starts to fall (past the gate-drain feedthrough bump)
    // it is monotone until the input turns around
    let start = out.iter().position(|&v| v < 0.95 * VDD).unwrap();
    let turn = vin.iter().rposition(|&v| v >= VDD).unwrap();
    assert!(start < turn);
    assert!(out[start..=turn].windows(2).all(|p| p[1] <= p[0] + 1e-9));
    assert!(*out.last().unwrap() > 0.99 * VDD);
}

#[test]
fn transform_preserves_waveforms() {
    let nl = adder(4);
    let tnl = insert_resistors(&nl, &TransformOptions::default())
        .unwrap()
        .0;
    let cfg = TranConfig::new(10e-12, 600e-12).unwrap();
    let a = loadsingle(&nl).run_transient(&cfg).unwrap();
    let b = loadsingle(&tnl).run_transient(&cfg).unwrap();
    // Driven nodes only. Stack-internal nodes behind two off devices are set
    // by gmin leakage alone; next to 1e3 S taps their voltage carries
    // rounding noise of a few percent in either netlist form.
    let driven = |c: &str| {
        c.starts_with("sum") || c.starts_with('c') || c.ends_with("cob") || c.ends_with("sob")
    };
    let pick = |w: &stampsim::Waveforms| {
        let cols: Vec<String> = a.columns.iter().filter(|c| driven(c)).cloned().collect();
        let mut out = stampsim::Waveforms::new(cols.clone());
        for (t, row) in w.times.iter().zip(&w.rows) {
            let vals: Vec<f64> = cols
                .iter()
                .map(|c| row[w.columns.iter().position(|x| x == c).unwrap()])
                .collect();
            out.push(*t, &vals);
        }
        out
    };
    let r = compare_waveforms(&pick(&a), &pick(&b), 0.0, 1e-3).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn full_transform_of_adder_is_edgeless() {
    let (out, rep) = insert_resistors(&adder(8), &TransformOptions::default()).unwrap();
    assert!(rep.resistors_added > 0);
    assert_eq!(fet_conflict_graph(&out).edge_count(), 0);
}
