//! Transient circuit simulation with separated device-evaluation and
//! matrix-stamping phases, and color-scheduled parallel stamping.
// `!(x > 0.0)` style tests are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coloring;
pub mod devices;
pub mod engine;
pub mod kernels;
pub mod lu;
pub mod mna;
pub mod netlist;
pub mod workbench;

pub use coloring::{greedy_color, ColorOrder, ColorSchedule, ConflictGraph};
pub use engine::{Circuit, NrOptions, Simulator, SolveStats, TranConfig, Waveforms};
pub use kernels::{KernelConfig, KernelKind, KernelRunner, PhaseTimings};
pub use lu::{SolverError, SparseLu};
pub use mna::{SparseSystem, SystemBuilder};
pub use netlist::{parse, Netlist, NetlistError};
