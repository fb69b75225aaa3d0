//! Transient analysis: fixed-step backward Euler, Newton-Raphson with
//! kernel-driven assembly, sparse LU solve.

use std::io;
use std::time::Instant;

use thiserror::Error;

use crate::coloring::{greedy_color, ColorOrder, ColorSchedule, ColoringError, ConflictGraph};
use crate::devices::{LinearDevice, Mosfet, OperatingPoint};
use crate::kernels::{KernelConfig, KernelError, KernelRunner, PhaseTimings};
use crate::lu::{SolverError, SparseLu};
use crate::mna::{MnaError, SparseSystem, SystemBuilder};
use crate::netlist::{ElementParams, Netlist, NetlistError};

const RESIDUAL_FACTOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Mna(#[from] MnaError),
    #[error(transparent)]
    Coloring(#[from] ColoringError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("linear solve failed at t={time:e}: {source}")]
    Solver { time: f64, source: SolverError },
    #[error("Newton-Raphson did not converge at t={time:e} after {iterations} iterations (last max |dx| = {max_delta:e})")]
    NonConvergence {
        time: f64,
        iterations: usize,
        max_delta: f64,
    },
    #[error("netlist has no .tran card")]
    NoTransient,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrOptions {
    pub max_nr_iterations: usize,
    pub reltol: f64,
    /// Volts, node unknowns.
    pub vntol: f64,
    /// Amperes, branch-current unknowns.
    pub abstol: f64,
    /// Largest per-iteration change of a node voltage when the circuit has
    /// MOSFETs. Infinite disables the clamp.
    pub max_step: f64,
}

impl Default for NrOptions {
    fn default() -> Self {
        Self {
            max_nr_iterations: 100,
            reltol: 1e-3,
            vntol: 1e-6,
            abstol: 1e-12,
            max_step: 0.5,
        }
    }
}

impl NrOptions {
    fn validate(&self) -> Result<(), EngineError> {
        if self.max_nr_iterations == 0
            || !(self.reltol > 0.0 && self.vntol > 0.0 && self.abstol > 0.0 && self.max_step > 0.0)
        {
            return Err(EngineError::Config(
                "tolerances and iteration limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranConfig {
    pub tstep: f64,
    pub tstop: f64,
    pub nr: NrOptions,
}

impl TranConfig {
    pub fn new(tstep: f64, tstop: f64) -> Result<Self, EngineError> {
        if !(tstep > 0.0 && tstep <= tstop) {
            return Err(EngineError::Config("require 0 < tstep <= tstop".into()));
        }
        Ok(Self {
            tstep,
            tstop,
            nr: NrOptions::default(),
        })
    }

    pub fn from_netlist(netlist: &Netlist) -> Result<Self, EngineError> {
        let (tstep, tstop) = netlist.tran().ok_or(EngineError::NoTransient)?;
        Self::new(tstep, tstop)
    }

    pub fn steps(&self) -> usize {
        (self.tstop / self.tstep).round().max(1.0) as usize
    }
}

/// Accumulated over every NR iteration of a run. Seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub nr_iterations_total: usize,
    pub t_device_eval: f64,
    pub t_matrix_solve: f64,
    pub t_total: f64,
    pub kernel: PhaseTimings,
}

/// A netlist lowered to MNA: frozen system, linear devices and FETs.
pub struct Circuit {
    pub node_names: Vec<String>,
    pub branch_names: Vec<String>,
    pub system: SparseSystem,
    pub linear: Vec<LinearDevice>,
    pub fets: Vec<Mosfet>,
}

impl Circuit {
    pub fn compile(netlist: &Netlist) -> Result<Self, EngineError> {
        let node = |name: &str| netlist.node_index(name);
        let mut builder = SystemBuilder::new(netlist.node_count());
        let mut branch_names = Vec::new();
        // (plan index, element index)
        let mut reserved = Vec::with_capacity(netlist.elements.len());
        for (k, el) in netlist.elements.iter().enumerate() {
            let terms: Vec<Option<usize>> = el.nodes.iter().map(|n| node(n)).collect();
            let plan = match &el.params {
                ElementParams::VoltageSource(_) => {
                    let br = builder.add_branch()?;
                    branch_names.push(el.name.clone());
                    builder.reserve_pairs(
                        &[terms[0], terms[1], Some(br)],
                        &[(0, 2), (1, 2), (2, 0), (2, 1)],
                    )?
                }
                _ => builder.reserve(&terms)?,
            };
            reserved.push((plan, k));
        }
        let (system, plans) = builder.finalize()?;
        let mut plans: Vec<Option<_>> = plans.into_iter().map(Some).collect();
        let mut linear = Vec::new();
        let mut fets = Vec::new();
        for (p, k) in reserved {
            let el = &netlist.elements[k];
            let plan = plans[p].take().expect("plan used once");
            let name = el.name.clone();
            match &el.params {
                ElementParams::Resistor { ohms } => linear.push(LinearDevice::Resistor {
                    name,
                    plan,
                    conductance: 1.0 / ohms,
                }),
                ElementParams::Capacitor { farads } => linear.push(LinearDevice::Capacitor {
                    name,
                    plan,
                    farads: *farads,
                    v_prev: 0.0,
                }),
                ElementParams::VoltageSource(spec) => linear.push(LinearDevice::VoltageSource {
                    name,
                    plan,
                    spec: *spec,
                }),
                ElementParams::Mosfet { model, w, l } => {
                    fets.push(Mosfet::new(name, plan, &netlist.models[model], *w, *l));
                }
            }
        }
        Ok(Self {
            node_names: netlist.node_map.keys().cloned().collect(),
            branch_names,
            system,
            linear,
            fets,
        })
    }

    pub fn dimension(&self) -> usize {
        self.system.dimension()
    }

    pub fn node_count(&self) -> usize {
        self.system.node_count()
    }

    pub fn conflict_graph(&self) -> ConflictGraph {
        let nodes: Vec<Vec<usize>> = self.fets.iter().map(Mosfet::nodes).collect();
        ConflictGraph::from_device_nodes(&nodes)
    }

    /// Greedy coloring of the FET conflict graph, validated before return.
    pub fn color(
        &self,
        order: ColorOrder,
    ) -> Result<(ConflictGraph, ColorSchedule), ColoringError> {
        let graph = self.conflict_graph();
        let schedule = greedy_color(&graph, &order.sequence(&graph))?;
        schedule.validate(&graph)?;
        Ok((graph, schedule))
    }
}

pub struct Simulator {
    circuit: Circuit,
    runner: KernelRunner,
    lu: SparseLu,
    stats: SolveStats,
    values: Vec<f64>,
}

impl Simulator {
    pub fn new(
        circuit: Circuit,
        kernel: KernelConfig,
        order: ColorOrder,
    ) -> Result<Self, EngineError> {
        let schedule = if kernel.kind.needs_schedule() {
            Some(circuit.color(order)?.1)
        } else {
            None
        };
        let runner = KernelRunner::new(kernel, circuit.fets.len(), schedule)?;
        let sys = &circuit.system;
        let lu = SparseLu::analyze(sys.dimension(), sys.row_ptr(), sys.col_idx());
        Ok(Self {
            values: vec![0.0; sys.nnz()],
            circuit,
            runner,
            lu,
            stats: SolveStats::default(),
        })
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn system(&self) -> &SparseSystem {
        &self.circuit.system
    }

    pub fn runner(&self) -> &KernelRunner {
        &self.runner
    }

    pub fn runner_mut(&mut self) -> &mut KernelRunner {
        &mut self.runner
    }

    /// Instrument subsequent kernel runs with a race probe sized to this system.
    pub fn attach_probe(&mut self) {
        self.runner.attach_probe(&self.circuit.system);
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SolveStats::default();
    }

    pub fn lu(&self) -> &SparseLu {
        &self.lu
    }

    /// Clear, stamp linear devices sequentially, then run the FET kernel.
    pub fn assemble(&mut self, op: &OperatingPoint) -> Result<PhaseTimings, EngineError> {
        let c = &self.circuit;
        c.system.clear_values();
        for dev in &c.linear {
            dev.compute(op).stamp(&c.system);
        }
        let t = self.runner.run(&c.fets, op, &c.system)?;
        self.stats.t_device_eval += t.t_total();
        self.stats.kernel += t;
        Ok(t)
    }

    fn solve(&mut self, time: f64) -> Result<Vec<f64>, EngineError> {
        let start = Instant::now();
        let sys = &self.circuit.system;
        for (slot, v) in self.values.iter_mut().enumerate() {
            *v = sys.value(slot);
        }
        let b = sys.rhs();
        let x = self
            .lu
            .solve(&self.values, &b)
            .map_err(|source| EngineError::Solver { time, source })?;
        let r = sys.multiply(&x);
        let resid = r
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = sys.norm_inf() * inf_norm(&x) + inf_norm(&b);
        if resid > RESIDUAL_FACTOR * scale {
            log::warn!(
                "residual {resid:.3e} above bound {:.3e} at t={time:e}",
                RESIDUAL_FACTOR * scale
            );
        }
        self.stats.t_matrix_solve += start.elapsed().as_secs_f64();
        Ok(x)
    }

    /// One NR iteration from `x`. Returns the new iterate, whether it is
    /// within tolerance of `x`, and the largest absolute change.
    pub fn newton_step(
        &mut self,
        x: &[f64],
        time: f64,
        dt: Option<f64>,
        nr: &NrOptions,
    ) -> Result<(Vec<f64>, bool, f64), EngineError> {
        let op = OperatingPoint { x, time, dt };
        self.assemble(&op)?;
        let mut next = self.solve(time)?;
        self.stats.nr_iterations_total += 1;
        let n_nodes = self.circuit.node_count();
        let limit = if self.circuit.fets.is_empty() {
            f64::INFINITY
        } else {
            nr.max_step
        };
        let mut converged = true;
        let mut max_delta = 0.0f64;
        for (i, (new, &old)) in next.iter_mut().zip(x).enumerate() {
            if i < n_nodes {
                *new = old + (*new - old).clamp(-limit, limit);
            }
            let new = *new;
            let delta = (new - old).abs();
            max_delta = max_delta.max(delta);
            let abs = if i < n_nodes { nr.vntol } else { nr.abstol };
            if !(delta <= nr.reltol * new.abs().max(old.abs()) + abs) {
                converged = false;
            }
        }
        Ok((next, converged, max_delta))
    }

    /// NR to convergence; at least two iterations so the last one confirms.
    fn newton(
        &mut self,
        mut x: Vec<f64>,
        time: f64,
        dt: Option<f64>,
        nr: &NrOptions,
    ) -> Result<(Vec<f64>, usize), EngineError> {
        let mut max_delta = f64::INFINITY;
        for it in 1..=nr.max_nr_iterations {
            let (next, converged, delta) = self.newton_step(&x, time, dt, nr)?;
            max_delta = delta;
            x = next;
            if converged && it >= 2 {
                return Ok((x, it));
            }
        }
        Err(EngineError::NonConvergence {
            time,
            iterations: nr.max_nr_iterations,
            max_delta,
        })
    }

    /// DC solution from a zero initial guess with sources at their t=0 values.
    pub fn dc_operating_point(&mut self, nr: &NrOptions) -> Result<Vec<f64>, EngineError> {
        nr.validate()?;
        let start = Instant::now();
        let x0 = vec![0.0; self.circuit.dimension()];
        let res = self.newton(x0, 0.0, None, nr).map(|(x, _)| x);
        self.stats.t_total += start.elapsed().as_secs_f64();
        res
    }

    /// Fixed-step march from the DC point to `tstop`.
    pub fn run_transient(&mut self, cfg: &TranConfig) -> Result<Waveforms, EngineError> {
        cfg.nr.validate()?;
        let start = Instant::now();
        let result = self.march(cfg);
        self.stats.t_total += start.elapsed().as_secs_f64();
        result
    }

    fn march(&mut self, cfg: &TranConfig) -> Result<Waveforms, EngineError> {
        let n_nodes = self.circuit.node_count();
        let mut waves = Waveforms::new(self.circuit.node_names.clone());
        let x0 = vec![0.0; self.circuit.dimension()];
        let (mut x, _) = self.newton(x0, 0.0, None, &cfg.nr)?;
        self.update_state(&x);
        waves.push(0.0, &x[..n_nodes]);
        for k in 1..=cfg.steps() {
            let t = k as f64 * cfg.tstep;
            x = self.newton(x, t, Some(cfg.tstep), &cfg.nr)?.0;
            self.update_state(&x);
            waves.push(t, &x[..n_nodes]);
        }
        Ok(waves)
    }

    fn update_state(&mut self, x: &[f64]) {
        for dev in &mut self.circuit.linear {
            dev.update_state(x);
        }
        for fet in &mut self.circuit.fets {
            fet.update_state(x);
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Node-voltage samples, one row per accepted timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveforms {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl Waveforms {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            times: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, time: f64, values: &[f64]) {
        self.times.push(time);
        self.rows.push(values.to_vec());
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// `time,<node>...` header; values in shortest round-trip form.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("time").chain(self.columns.iter().map(String::as_str)))?;
        for (t, row) in self.times.iter().zip(&self.rows) {
            w.write_record(std::iter::once(t).chain(row).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.get(0) != Some("time") {
            return Err("first column must be 'time'".into());
        }
        let mut waves = Self::new(header.iter().skip(1).map(str::to_string).collect());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", line + 1))?;
            waves.push(vals[0], &vals[1..]);
        }
        Ok(waves)
    }
}
