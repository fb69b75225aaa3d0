#![allow(dead_code)]

use std::collections::HashSet;

use stampsim::engine::Circuit;
use stampsim::netlist::{parse, Netlist};
use stampsim::workbench::{gen_adder, gen_synth, AdderConfig, SynthSpec};

pub const OTA: &str = "five transistor ota
VDD vdd 0 1.8
VIP inp 0 0.9
VIN inn 0 0.9
VB bias 0 0.7
M1 x inp tail 0 nch W=1u L=0.18u
M2 out inn tail 0 nch W=1u L=0.18u
M3 x x vdd vdd pch W=2u L=0.18u
M4 out x vdd vdd pch W=2u L=0.18u
M5 tail bias 0 0 nch W=2u L=0.18u
CL out 0 10f
.model nch NMOS(vto=0.5 kp=200e-6 lambda=0.05)
.model pch PMOS(vto=-0.5 kp=80e-6 lambda=0.05)
.tran 10p 200p
.end
";

pub const INVERTER: &str = "inverter
VDD vdd 0 1.8
VIN in 0 PULSE(0 1.8 50p 20p 20p 200p 500p)
MN out in 0 0 nch W=0.5u L=0.18u
MP out in vdd vdd pch W=1u L=0.18u
CL out 0 10f
.model nch NMOS(vto=0.5 kp=200e-6 lambda=0.05)
.model pch PMOS(vto=-0.5 kp=80e-6 lambda=0.05)
.tran 5p 500p
.end
";

pub fn ota() -> Netlist {
    parse(OTA).unwrap()
}

pub fn inverter() -> Netlist {
    parse(INVERTER).unwrap()
}

pub fn adder(bits: usize) -> Netlist {
    gen_adder(&AdderConfig::new(bits)).unwrap()
}

pub fn synth(n: usize, c: usize) -> Netlist {
    gen_synth(&SynthSpec::new(n, c)).unwrap()
}

pub fn max_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Thread counts {1, 2, 4, max}, deduplicated.
pub fn thread_sweep() -> Vec<usize> {
    let mut t = vec![1, 2, 4, max_threads()];
    t.sort_unstable();
    t.dedup();
    t
}

/// Pairs of FETs whose stamp plans share a matrix slot or RHS row.
pub fn plan_overlap(c: &Circuit) -> Vec<(usize, usize)> {
    let sets: Vec<(HashSet<usize>, HashSet<usize>)> = c
        .fets
        .iter()
        .map(|f| {
            (
                f.plan.handles().iter().map(|h| h.index()).collect(),
                f.plan.rhs_rows().into_iter().collect(),
            )
        })
        .collect();
    let mut out = Vec::new();
    for u in 0..sets.len() {
        for v in u + 1..sets.len() {
            if !sets[u].0.is_disjoint(&sets[v].0) || !sets[u].1.is_disjoint(&sets[v].1) {
                out.push((u, v));
            }
        }
    }
    out
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}
