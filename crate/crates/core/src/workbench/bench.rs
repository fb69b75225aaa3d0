//! Kernel and transient benchmarks with an equivalence gate.

use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::coloring::ColorOrder;
use crate::devices::OperatingPoint;
use crate::engine::{Circuit, EngineError, NrOptions, Simulator, TranConfig};
use crate::kernels::{KernelConfig, KernelKind};
use crate::mna::SparseSystem;
use crate::netlist::Netlist;

/// Relative agreement required between a parallel kernel and loadsingle.
pub const EQUIV_REL: f64 = 1e-12;
/// Absolute floor for entries that cancel to (near) zero.
pub const EQUIV_ABS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchMode {
    /// Repeated assembly at a fixed operating point.
    Kernel { iterations: usize },
    /// Full transient; `tstop` overrides the netlist's .tran stop time.
    Transient { tstop: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub kernels: Vec<KernelKind>,
    pub threads: Vec<usize>,
    pub repeats: usize,
    pub mode: BenchMode,
    pub work_multiplier: u32,
    pub order: ColorOrder,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            kernels: KernelKind::ALL.to_vec(),
            threads: vec![1],
            repeats: 5,
            mode: BenchMode::Kernel { iterations: 20 },
            work_multiplier: 1,
            order: ColorOrder::Netlist,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Matrix { row: usize, col: usize },
    Rhs { row: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub entry: Entry,
    pub reference: f64,
    pub value: f64,
}

impl Deviation {
    pub fn abs(&self) -> f64 {
        (self.value - self.reference).abs()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{kernel} at {threads} threads disagrees with loadsingle at {entry:?}: {value:e} vs {reference:e}", entry = .deviation.entry, value = .deviation.value, reference = .deviation.reference)]
    Equivalence {
        kernel: KernelKind,
        threads: usize,
        deviation: Deviation,
    },
    #[error("invalid bench options: {0}")]
    Options(String),
}

/// A snapshot of the assembled system.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
    coords: Vec<(usize, usize)>,
}

impl Assembly {
    pub fn capture(system: &SparseSystem) -> Self {
        let rp = system.row_ptr();
        let coords = (0..system.dimension())
            .flat_map(|r| {
                system.col_idx()[rp[r]..rp[r + 1]]
                    .iter()
                    .map(move |&c| (r, c))
            })
            .collect();
        Self {
            values: system.values(),
            rhs: system.rhs(),
            coords,
        }
    }

    /// Worst entry outside `abs + rel * |reference|`, if any. `rel = abs = 0`
    /// demands bitwise equality.
    pub fn deviation(&self, other: &Assembly, rel: f64, abs: f64) -> Option<Deviation> {
        let bad = |r: f64, v: f64| {
            if rel == 0.0 && abs == 0.0 {
                r.to_bits() != v.to_bits()
            } else {
                !((v - r).abs() <= abs + rel * r.abs())
            }
        };
        let mut worst: Option<Deviation> = None;
        let mut consider = |entry: Entry, r: f64, v: f64| {
            if bad(r, v) && worst.as_ref().map_or(true, |w| (v - r).abs() > w.abs()) {
                worst = Some(Deviation {
                    entry,
                    reference: r,
                    value: v,
                });
            }
        };
        for (k, (&r, &v)) in self.values.iter().zip(&other.values).enumerate() {
            let (row, col) = self.coords[k];
            consider(Entry::Matrix { row, col }, r, v);
        }
        for (row, (&r, &v)) in self.rhs.iter().zip(&other.rhs).enumerate() {
            consider(Entry::Rhs { row }, r, v);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub circuit: String,
    pub kernel: KernelKind,
    pub threads: usize,
    pub colors: usize,
    pub devices: usize,
    pub t_calc: f64,
    pub t_stamp: f64,
    pub t_device_eval: f64,
    pub t_matrix_solve: f64,
    pub t_total: f64,
    pub nr_iterations: usize,
    pub speedup: f64,
}

impl BenchRecord {
    pub fn to_line(&self) -> String {
        format!(
            "circuit={} kernel={} threads={} colors={} devices={} t_calc={:e} t_stamp={:e} t_device_eval={:e} t_matrix_solve={:e} t_total={:e} nr_iterations={} speedup={}",
            self.circuit,
            self.kernel,
            self.threads,
            self.colors,
            self.devices,
            self.t_calc,
            self.t_stamp,
            self.t_device_eval,
            self.t_matrix_solve,
            self.t_total,
            self.nr_iterations,
            self.speedup
        )
    }
}

pub fn render_table(records: &[BenchRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<11} {:>3} {:>6} {:>7} {:>11} {:>11} {:>11} {:>11} {:>11} {:>7} {:>8}",
        "circuit",
        "kernel",
        "th",
        "colors",
        "devices",
        "calc(s)",
        "stamp(s)",
        "dev_eval(s)",
        "solve(s)",
        "total(s)",
        "NR it",
        "speedup"
    );
    for r in records {
        let _ = writeln!(
            out,
            "{:<24} {:<11} {:>3} {:>6} {:>7} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>7} {:>8.3}",
            r.circuit,
            r.kernel.to_string(),
            r.threads,
            r.colors,
            r.devices,
            r.t_calc,
            r.t_stamp,
            r.t_device_eval,
            r.t_matrix_solve,
            r.t_total,
            r.nr_iterations,
            r.speedup
        );
    }
    out
}

/// Operating point used for equivalence checks and kernel-mode timing: the
/// DC solution, evaluated as the first transient step so companion models
/// participate.
pub fn reference_point(netlist: &Netlist) -> Result<(Vec<f64>, f64), EngineError> {
    let circuit = Circuit::compile(netlist)?;
    let mut sim = Simulator::new(
        circuit,
        KernelConfig::new(KernelKind::LoadSingle, 1),
        ColorOrder::Netlist,
    )?;
    let x = sim.dc_operating_point(&NrOptions::default())?;
    let dt = netlist.tran().map_or(1e-12, |(tstep, _)| tstep);
    Ok((x, dt))
}

pub fn make_simulator(
    netlist: &Netlist,
    kernel: KernelConfig,
    order: ColorOrder,
) -> Result<Simulator, EngineError> {
    Simulator::new(Circuit::compile(netlist)?, kernel, order)
}

/// Assemble once at `x` and snapshot the system.
pub fn assemble_at(sim: &mut Simulator, x: &[f64], dt: f64) -> Result<Assembly, EngineError> {
    sim.assemble(&OperatingPoint::transient(x, dt, dt))?;
    Ok(Assembly::capture(sim.system()))
}

/// Check one kernel configuration against loadsingle at the reference point.
/// loadomp must match bitwise; the colored kernels to `EQUIV_REL`.
pub fn check_equivalence(
    netlist: &Netlist,
    kernel: KernelConfig,
    order: ColorOrder,
    reference: &Assembly,
    x: &[f64],
    dt: f64,
) -> Result<(), BenchError> {
    let mut sim = make_simulator(netlist, kernel, order)?;
    let got = assemble_at(&mut sim, x, dt)?;
    let (rel, abs) = if kernel.kind == KernelKind::LoadOmp {
        (0.0, 0.0)
    } else {
        (EQUIV_REL, EQUIV_ABS)
    };
    match reference.deviation(&got, rel, abs) {
        None => Ok(()),
        Some(deviation) => Err(BenchError::Equivalence {
            kernel: kernel.kind,
            threads: kernel.threads,
            deviation,
        }),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Sample {
    t_calc: f64,
    t_stamp: f64,
    t_device_eval: f64,
    t_matrix_solve: f64,
    t_total: f64,
    nr_iterations: usize,
}

fn run_once(
    sim: &mut Simulator,
    mode: BenchMode,
    netlist: &Netlist,
    x: &[f64],
    dt: f64,
) -> Result<Sample, EngineError> {
    sim.reset_stats();
    let t_total = match mode {
        BenchMode::Kernel { iterations } => {
            let op = OperatingPoint::transient(x, dt, dt);
            let start = Instant::now();
            for _ in 0..iterations {
                sim.assemble(&op)?;
            }
            start.elapsed().as_secs_f64()
        }
        BenchMode::Transient { tstop } => {
            let mut cfg = TranConfig::from_netlist(netlist)?;
            if let Some(t) = tstop {
                cfg = TranConfig::new(cfg.tstep.min(t), t)?;
            }
            sim.run_transient(&cfg)?;
            sim.stats().t_total
        }
    };
    let s = sim.stats();
    Ok(Sample {
        t_calc: s.kernel.t_calc(),
        t_stamp: s.kernel.t_stamp(),
        t_device_eval: s.t_device_eval,
        t_matrix_solve: s.t_matrix_solve,
        t_total,
        nr_iterations: match mode {
            BenchMode::Kernel { iterations } => iterations,
            BenchMode::Transient { .. } => s.nr_iterations_total,
        },
    })
}

/// Run every (kernel, threads) combination, loadsingle first as the
/// baseline. Each combination is checked against loadsingle before it is
/// timed; timings are medians over `repeats` runs after one warm-up.
pub fn bench(
    circuit_id: &str,
    netlist: &Netlist,
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>, BenchError> {
    if opts.repeats == 0 || opts.threads.is_empty() || opts.threads.contains(&0) {
        return Err(BenchError::Options(
            "repeats and thread counts must be positive".into(),
        ));
    }
    let (x, dt) = reference_point(netlist)?;
    let base_cfg = KernelConfig::new(KernelKind::LoadSingle, 1).with_work(opts.work_multiplier);
    let reference = assemble_at(&mut make_simulator(netlist, base_cfg, opts.order)?, &x, dt)?;
    let colors = Circuit::compile(netlist)?
        .color(opts.order)
        .map_err(EngineError::from)?
        .1
        .color_count();

    let mut combos = vec![base_cfg];
    for &kind in &opts.kernels {
        if kind == KernelKind::LoadSingle {
            continue;
        }
        for &t in &opts.threads {
            combos.push(KernelConfig::new(kind, t).with_work(opts.work_multiplier));
        }
    }

    let mut records: Vec<BenchRecord> = Vec::new();
    let mut baseline = f64::NAN;
    for cfg in combos {
        check_equivalence(netlist, cfg, opts.order, &reference, &x, dt)?;
        let mut sim = make_simulator(netlist, cfg, opts.order)?;
        run_once(&mut sim, opts.mode, netlist, &x, dt)?;
        let samples = (0..opts.repeats)
            .map(|_| run_once(&mut sim, opts.mode, netlist, &x, dt))
            .collect::<Result<Vec<_>, _>>()?;
        let med = |f: fn(&Sample) -> f64| median(samples.iter().map(f).collect());
        let t_total = med(|s| s.t_total);
        if cfg.kind == KernelKind::LoadSingle {
            baseline = t_total;
        }
        let rec = BenchRecord {
            circuit: circuit_id.to_string(),
            kernel: cfg.kind,
            threads: cfg.threads,
            colors,
            devices: sim.circuit().fets.len(),
            t_calc: med(|s| s.t_calc),
            t_stamp: med(|s| s.t_stamp),
            t_device_eval: med(|s| s.t_device_eval),
            t_matrix_solve: med(|s| s.t_matrix_solve),
            t_total,
            nr_iterations: samples[0].nr_iterations,
            speedup: baseline / t_total,
        };
        log::info!("{}", rec.to_line());
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workbench::generate::{gen_synth, SynthSpec};

    #[test]
    fn bench_records_and_baseline() {
        let nl = gen_synth(&SynthSpec::new(40, 4)).unwrap();
        let opts = BenchOptions {
            threads: vec![1, 2],
            repeats: 3,
            mode: BenchMode::Kernel { iterations: 2 },
            ..Default::default()
        };
        let recs = bench("s", &nl, &opts).unwrap();
        assert_eq!(recs.len(), 1 + 3 * 2);
        assert_eq!(recs[0].kernel, KernelKind::LoadSingle);
        assert_eq!(recs[0].speedup, 1.0);
        assert!(recs.iter().all(|r| r.colors == 4 && r.devices == 40));
        assert!(recs[1]
            .to_line()
            .starts_with("circuit=s kernel=loadomp threads=1 colors=4"));
        assert_eq!(render_table(&recs).lines().count(), 8);
    }

    #[test]
    fn transient_mode_counts_iterations() {
        let nl = gen_synth(&SynthSpec::new(6, 2)).unwrap();
        let opts = BenchOptions {
            kernels: vec![KernelKind::ColorFused],
            repeats: 1,
            mode: BenchMode::Transient { tstop: Some(2e-10) },
            ..Default::default()
        };
        let recs = bench("s", &nl, &opts).unwrap();
        assert!(recs.iter().all(|r| r.nr_iterations >= 2 * 3));
        assert!(recs
            .iter()
            .all(|r| r.t_device_eval + r.t_matrix_solve <= r.t_total));
    }

    #[test]
    fn bitwise_mode_detects_rounding() {
        let a = Assembly {
            values: vec![0.1 + 0.2],
            rhs: vec![],
            coords: vec![(0, 0)],
        };
        let mut b = a.clone();
        b.values[0] = 0.3;
        assert!(a.deviation(&b, 0.0, 0.0).is_some());
        assert!(a.deviation(&b, EQUIV_REL, EQUIV_ABS).is_none());
    }
}
