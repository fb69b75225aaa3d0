//! Device evaluation (Compute phase) and contribution stamping (Stamp phase).
//!
//! `compute` is a pure function of device parameters, the operating point and
//! the stored previous-timestep state; it never touches the system. `stamp`
//! only accumulates an already computed contribution through the device's
//! [`StampPlan`].

use std::hint::black_box;

use arrayvec::ArrayVec;

use crate::mna::{EntryHandle, SparseSystem, StampPlan};
use crate::netlist::{ModelCard, Polarity, SourceSpec};

/// Drain-source convergence conductance added to every MOSFET.
pub const GMIN: f64 = 1e-12;

const MAX_TERMINALS: usize = 4;

/// Bias and integration context for one Compute phase.
#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint<'a> {
    pub x: &'a [f64],
    pub time: f64,
    /// Timestep for companion models; `None` for DC (capacitors open).
    pub dt: Option<f64>,
}

impl<'a> OperatingPoint<'a> {
    pub fn dc(x: &'a [f64], time: f64) -> Self {
        Self { x, time, dt: None }
    }

    pub fn transient(x: &'a [f64], time: f64, dt: f64) -> Self {
        Self {
            x,
            time,
            dt: Some(dt),
        }
    }

    #[inline]
    pub fn voltage(&self, node: Option<usize>) -> f64 {
        node.map_or(0.0, |i| self.x[i])
    }
}

/// One device's linearized stamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceContribution {
    pub matrix: ArrayVec<(EntryHandle, f64), { MAX_TERMINALS * MAX_TERMINALS }>,
    pub rhs: ArrayVec<(usize, f64), MAX_TERMINALS>,
}

impl DeviceContribution {
    #[inline]
    pub fn stamp(&self, system: &SparseSystem) {
        for &(h, v) in &self.matrix {
            system.add(h, v);
        }
        for &(row, v) in &self.rhs {
            system.add_rhs(row, v);
        }
    }
}

/// Dense stamp over a device's local terminals, before ground elimination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStamp {
    pub terminals: usize,
    pub g: [[f64; MAX_TERMINALS]; MAX_TERMINALS],
    pub i: [f64; MAX_TERMINALS],
}

impl LocalStamp {
    fn new(terminals: usize) -> Self {
        Self {
            terminals,
            g: [[0.0; MAX_TERMINALS]; MAX_TERMINALS],
            i: [0.0; MAX_TERMINALS],
        }
    }

    #[inline]
    fn conductance(&mut self, a: usize, b: usize, g: f64) {
        self.g[a][a] += g;
        self.g[b][b] += g;
        self.g[a][b] -= g;
        self.g[b][a] -= g;
    }

    /// Current `i` flowing from `a` to `b` through the device.
    #[inline]
    fn current(&mut self, a: usize, b: usize, i: f64) {
        self.i[a] -= i;
        self.i[b] += i;
    }

    fn to_contribution(self, plan: &StampPlan) -> DeviceContribution {
        let mut out = DeviceContribution::default();
        for r in 0..self.terminals {
            for c in 0..self.terminals {
                if let Some(h) = plan.entry(r, c) {
                    out.matrix.push((h, self.g[r][c]));
                }
            }
        }
        for r in 0..self.terminals {
            if let Some(row) = plan.row(r) {
                out.rhs.push((row, self.i[r]));
            }
        }
        out
    }
}

/// Resistors, capacitors and voltage sources, stamped in the sequential pre-pass.
#[derive(Debug, Clone)]
pub enum LinearDevice {
    Resistor {
        name: String,
        plan: StampPlan,
        conductance: f64,
    },
    Capacitor {
        name: String,
        plan: StampPlan,
        farads: f64,
        v_prev: f64,
    },
    /// Terminals are (pos, neg, branch).
    VoltageSource {
        name: String,
        plan: StampPlan,
        spec: SourceSpec,
    },
}

impl LinearDevice {
    pub fn name(&self) -> &str {
        match self {
            Self::Resistor { name, .. }
            | Self::Capacitor { name, .. }
            | Self::VoltageSource { name, .. } => name,
        }
    }

    pub fn plan(&self) -> &StampPlan {
        match self {
            Self::Resistor { plan, .. }
            | Self::Capacitor { plan, .. }
            | Self::VoltageSource { plan, .. } => plan,
        }
    }

    pub fn local_stamp(&self, op: &OperatingPoint) -> LocalStamp {
        match self {
            Self::Resistor { conductance, .. } => {
                let mut s = LocalStamp::new(2);
                s.conductance(0, 1, *conductance);
                s
            }
            Self::Capacitor { farads, v_prev, .. } => {
                let mut s = LocalStamp::new(2);
                if let Some(dt) = op.dt {
                    let geq = farads / dt;
                    s.conductance(0, 1, geq);
                    s.current(0, 1, -geq * v_prev);
                }
                s
            }
            Self::VoltageSource { spec, .. } => {
                let mut s = LocalStamp::new(3);
                s.g[0][2] = 1.0;
                s.g[1][2] = -1.0;
                s.g[2][0] = 1.0;
                s.g[2][1] = -1.0;
                s.i[2] = spec.value_at(op.time);
                s
            }
        }
    }

    pub fn compute(&self, op: &OperatingPoint) -> DeviceContribution {
        self.local_stamp(op).to_contribution(self.plan())
    }

    pub fn update_state(&mut self, x: &[f64]) {
        if let Self::Capacitor { plan, v_prev, .. } = self {
            let op = OperatingPoint::dc(x, 0.0);
            *v_prev = op.voltage(plan.row(0)) - op.voltage(plan.row(1));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Cutoff,
    Triode,
    Saturation,
}

/// Level-1 drain current and derivatives for `vds >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level1 {
    pub region: Region,
    pub id: f64,
    pub gm: f64,
    pub gds: f64,
}

/// Square-law current for a normal-mode (vds >= 0) n-type device.
#[inline]
pub fn level1(vgs: f64, vds: f64, vt: f64, beta: f64, lambda: f64) -> Level1 {
    let vov = vgs - vt;
    if vov <= 0.0 {
        return Level1 {
            region: Region::Cutoff,
            id: 0.0,
            gm: 0.0,
            gds: 0.0,
        };
    }
    let clm = 1.0 + lambda * vds;
    if vds >= vov {
        let half = 0.5 * beta * vov * vov;
        Level1 {
            region: Region::Saturation,
            id: half * clm,
            gm: beta * vov * clm,
            gds: half * lambda,
        }
    } else {
        let core = beta * (vov * vds - 0.5 * vds * vds);
        Level1 {
            region: Region::Triode,
            id: core * clm,
            gm: beta * vds * clm,
            gds: beta * (vov - vds) * clm + core * lambda,
        }
    }
}

/// Evaluated MOSFET bias state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosfetState {
    pub region: Region,
    /// Source and drain roles swapped because the physical vds was negative.
    pub reversed: bool,
    /// Current into the physical drain terminal.
    pub id: f64,
    pub gm: f64,
    pub gds: f64,
    pub gmin: f64,
}

const D: usize = 0;
const G: usize = 1;
const S: usize = 2;
const B: usize = 3;

/// Level-1 MOSFET. Bulk is electrically tied to the source in the channel
/// equations and only carries the drain-bulk capacitance.
#[derive(Debug, Clone)]
pub struct Mosfet {
    pub name: String,
    pub plan: StampPlan,
    /// +1 for NMOS, -1 for PMOS.
    sign: f64,
    /// Threshold in the reflected (n-type) frame.
    vt: f64,
    beta: f64,
    lambda: f64,
    caps: [f64; 3],
    /// Previous-timestep vgs, vgd, vdb.
    v_prev: [f64; 3],
}

impl Mosfet {
    pub fn new(
        name: impl Into<String>,
        plan: StampPlan,
        model: &ModelCard,
        w: f64,
        l: f64,
    ) -> Self {
        let sign = match model.polarity {
            Polarity::Nmos => 1.0,
            Polarity::Pmos => -1.0,
        };
        Self {
            name: name.into(),
            plan,
            sign,
            vt: sign * model.vt0,
            beta: model.kp * w / l,
            lambda: model.lambda,
            caps: [model.cgs, model.cgd, model.cdb],
            v_prev: [0.0; 3],
        }
    }

    /// Non-ground unknowns touched by this device, sorted and deduplicated.
    pub fn nodes(&self) -> Vec<usize> {
        self.plan.rhs_rows()
    }

    fn terminal_voltages(&self, op: &OperatingPoint) -> [f64; 4] {
        [0, 1, 2, 3].map(|t| op.voltage(self.plan.row(t)))
    }

    /// Effective (drain, source) local terminals and reflected vgs, vds.
    #[inline]
    fn orient(&self, v: &[f64; 4]) -> (usize, usize, f64, f64) {
        let (dp, sp) = if self.sign * (v[D] - v[S]) >= 0.0 {
            (D, S)
        } else {
            (S, D)
        };
        (
            dp,
            sp,
            self.sign * (v[G] - v[sp]),
            self.sign * (v[dp] - v[sp]),
        )
    }

    pub fn evaluate(&self, op: &OperatingPoint) -> MosfetState {
        let v = self.terminal_voltages(op);
        let (dp, _, vgs, vds) = self.orient(&v);
        let e = level1(vgs, vds, self.vt, self.beta, self.lambda);
        let id = self.sign * e.id;
        MosfetState {
            region: e.region,
            reversed: dp != D,
            id: if dp == D { id } else { -id },
            gm: e.gm,
            gds: e.gds,
            gmin: GMIN,
        }
    }

    /// Linearized local stamp. `work` repeats the model arithmetic to emulate a
    /// heavier compact model; the result is identical for any `work >= 1`.
    pub fn local_stamp(&self, op: &OperatingPoint, work: u32) -> LocalStamp {
        let v = self.terminal_voltages(op);
        let (dp, sp, vgs, vds) = self.orient(&v);
        let mut e = level1(vgs, vds, self.vt, self.beta, self.lambda);
        for _ in 1..work {
            e = level1(
                black_box(vgs),
                black_box(vds),
                black_box(self.vt),
                self.beta,
                self.lambda,
            );
        }
        let ieq = self.sign * (e.id - e.gm * vgs - e.gds * vds);

        let mut s = LocalStamp::new(4);
        // VCCS from dp to sp: gm*(vg - vsp) + gds*(vdp - vsp) + ieq
        s.g[dp][dp] += e.gds;
        s.g[dp][G] += e.gm;
        s.g[dp][sp] -= e.gds + e.gm;
        s.g[sp][dp] -= e.gds;
        s.g[sp][G] -= e.gm;
        s.g[sp][sp] += e.gds + e.gm;
        s.current(dp, sp, ieq);
        s.conductance(D, S, GMIN);

        if let Some(dt) = op.dt {
            for (k, (a, b)) in [(G, S), (G, D), (D, B)].into_iter().enumerate() {
                let geq = self.caps[k] / dt;
                s.conductance(a, b, geq);
                s.current(a, b, -geq * self.v_prev[k]);
            }
        }
        s
    }

    pub fn compute(&self, op: &OperatingPoint, work: u32) -> DeviceContribution {
        self.local_stamp(op, work).to_contribution(&self.plan)
    }

    pub fn update_state(&mut self, x: &[f64]) {
        let v = self.terminal_voltages(&OperatingPoint::dc(x, 0.0));
        self.v_prev = [v[G] - v[S], v[G] - v[D], v[D] - v[B]];
    }
}
