//! Series-resistor insertion at FET-to-FET connections.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::netlist::{is_ground, Element, ElementParams, Netlist, NetlistError};

pub const DEFAULT_R: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformOptions {
    /// Share of each net's removable attachments to reroute, in `[0, 1]`.
    pub fraction: f64,
    pub r_value: f64,
    pub seed: u64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            fraction: 1.0,
            r_value: DEFAULT_R,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitNet {
    pub net: String,
    pub attachments: usize,
    pub rerouted: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformReport {
    pub resistors_added: usize,
    pub nets_split: usize,
    /// Per split net: the `(new node, resistor)` pairs that were inserted.
    pub nets: Vec<SplitNet>,
}

/// For every non-ground net touched by two or more FET terminals, move
/// `round(fraction * (k - 1))` of its `k` attachments onto fresh nodes, each
/// tied back to the net through an `r_value` resistor. With `fraction = 1`
/// every net keeps exactly one FET attachment, so no two FETs share a node.
pub fn insert_resistors(
    netlist: &Netlist,
    opts: &TransformOptions,
) -> Result<(Netlist, TransformReport), NetlistError> {
    if !(0.0..=1.0).contains(&opts.fraction) || !(opts.r_value > 0.0) {
        return Err(NetlistError::InvalidValue {
            element: "transform".into(),
            message: "fraction must be in [0, 1] and r positive".into(),
        });
    }
    let mut attachments: IndexMap<&str, Vec<(usize, usize)>> = IndexMap::new();
    for (e, el) in netlist.elements.iter().enumerate() {
        if matches!(el.params, ElementParams::Mosfet { .. }) {
            for (t, node) in el.nodes.iter().enumerate() {
                if !is_ground(node) {
                    attachments.entry(node.as_str()).or_default().push((e, t));
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut node_names: HashSet<String> = netlist.node_map.keys().cloned().collect();
    let mut element_names: HashSet<String> =
        netlist.elements.iter().map(|e| e.name.clone()).collect();
    let mut elements = netlist.elements.clone();
    let mut added = Vec::new();
    let mut report = TransformReport::default();

    for (net, atts) in &attachments {
        let k = atts.len();
        let m = if opts.fraction >= 1.0 {
            k.saturating_sub(1)
        } else {
            (opts.fraction * (k.saturating_sub(1)) as f64).round() as usize
        };
        if m == 0 {
            continue;
        }
        let mut chosen: Vec<(usize, usize)> = if m == k - 1 {
            atts[1..].to_vec()
        } else {
            atts.choose_multiple(&mut rng, m).copied().collect()
        };
        chosen.sort_unstable();
        let mut split = SplitNet {
            net: net.to_string(),
            attachments: k,
            rerouted: Vec::with_capacity(m),
        };
        for (j, (e, t)) in chosen.into_iter().enumerate() {
            let node = unique(&mut node_names, &format!("{net}_r{j}"));
            let name = unique(&mut element_names, &format!("rx_{net}_{j}"));
            elements[e].nodes[t] = node.clone();
            added.push(Element::resistor(&name, &node, net, opts.r_value));
            split.rerouted.push((node, name));
        }
        report.resistors_added += m;
        report.nets_split += 1;
        report.nets.push(split);
    }
    if added.is_empty() {
        return Ok((netlist.clone(), report));
    }
    elements.extend(added);
    let out = Netlist::from_parts(
        netlist.title.clone(),
        elements,
        netlist.models.values().cloned(),
        netlist.analyses.clone(),
    )?;
    Ok((out, report))
}

fn unique(taken: &mut HashSet<String>, base: &str) -> String {
    let mut name = base.to_string();
    let mut n = 0;
    while taken.contains(&name) {
        n += 1;
        name = format!("{base}_{n}");
    }
    taken.insert(name.clone());
    name
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse, ElementKind};
    use crate::workbench::fet_conflict_graph;
    use proptest::prelude::*;

    const INV: &str = "t\nVDD vdd 0 1.8\nMN out in 0 0 nm\nMP out in vdd vdd pm\n\
                       .model nm NMOS(vto=0.5 kp=1e-4)\n.model pm PMOS(vto=-0.5 kp=1e-4)\n.end";

    #[test]
    fn zero_fraction_is_identity() {
        let nl = parse(INV).unwrap();
        let opts = TransformOptions {
            fraction: 0.0,
            ..Default::default()
        };
        let (out, rep) = insert_resistors(&nl, &opts).unwrap();
        assert_eq!(out, nl);
        assert_eq!(rep.resistors_added, 0);
    }

    #[test]
    fn full_split_of_inverter() {
        let nl = parse(INV).unwrap();
        let (out, rep) = insert_resistors(&nl, &TransformOptions::default()).unwrap();
        // out and in are shared by both devices; vdd by the PMOS source and bulk
        assert_eq!(rep.resistors_added, 3);
        assert_eq!(rep.nets_split, 3);
        assert_eq!(out.count_kind(ElementKind::Resistor), 3);
        assert_eq!(fet_conflict_graph(&out).edge_count(), 0);
    }

    #[test]
    fn conflict_free_input_is_untouched() {
        let text = "t\nM1 a b c 0 nm\nM2 d e f 0 nm\n.model nm NMOS(vto=0.5)\n.end";
        let nl = parse(text).unwrap();
        let (out, rep) = insert_resistors(&nl, &TransformOptions::default()).unwrap();
        assert_eq!(rep.resistors_added, 0);
        assert_eq!(out, nl);
    }

    #[test]
    fn seeded_selection_is_deterministic() {
        let text = "t\nM1 x a 0 0 nm\nM2 x b 0 0 nm\nM3 x c 0 0 nm\nM4 x d 0 0 nm\nM5 x e 0 0 nm\n.model nm NMOS(vto=0.5)\n.end";
        let nl = parse(text).unwrap();
        let opts = TransformOptions {
            fraction: 0.5,
            seed: 7,
            ..Default::default()
        };
        let a = insert_resistors(&nl, &opts).unwrap();
        let b = insert_resistors(&nl, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.resistors_added, 2);
    }

    fn random_fet_netlist() -> impl Strategy<Value = Netlist> {
        prop::collection::vec(prop::collection::vec(0usize..6, 4), 1..12).prop_map(|fets| {
            let els = fets
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let n = |k: usize| {
                        if t[k] == 0 {
                            "0".to_string()
                        } else {
                            format!("n{}", t[k])
                        }
                    };
                    Element::mosfet(
                        &format!("m{i}"),
                        &n(0),
                        &n(1),
                        &n(2),
                        &n(3),
                        "nm",
                        1e-6,
                        1e-6,
                    )
                })
                .collect();
            let model = crate::netlist::ModelCard::new("nm", crate::netlist::Polarity::Nmos);
            Netlist::from_parts("p", els, [model], vec![]).unwrap()
        })
    }

    proptest! {
        #[test]
        fn full_fraction_always_edgeless(nl in random_fet_netlist()) {
            let (out, _) = insert_resistors(&nl, &TransformOptions::default()).unwrap();
            prop_assert_eq!(fet_conflict_graph(&out).edge_count(), 0);
        }
    }
}
