//! The four MOSFET evaluation kernels.
//!
//! | kernel       | compute    | stamp      | parallel structure            |
//! |--------------|------------|------------|-------------------------------|
//! | `loadsingle` | sequential | sequential | none                          |
//! | `loadomp`    | parallel   | sequential | one region over all devices   |
//! | `color`      | parallel   | parallel   | one region, barrier per color |
//! | `colorfused` | fused      | parallel   | one region per color          |
//!
//! Work is split by static contiguous partitioning: worker `k` of `T` takes
//! `[len*k/T, len*(k+1)/T)` of whatever list is being processed. Matrix writes
//! are never locked; concurrent stamps only happen inside one color group and
//! a valid coloring guarantees they touch disjoint slots.

use std::cell::UnsafeCell;
use std::fmt;
use std::ops::{AddAssign, Range};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::coloring::ColorSchedule;
use crate::devices::{DeviceContribution, Mosfet, OperatingPoint};
use crate::mna::SparseSystem;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("kernel '{0}' requires a color schedule")]
    MissingSchedule(KernelKind),
    #[error("schedule covers {schedule} devices but {devices} were supplied")]
    ScheduleMismatch { schedule: usize, devices: usize },
    #[error("runner was set up for {expected} devices but {got} were supplied")]
    DeviceCountMismatch { expected: usize, got: usize },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    LoadSingle,
    LoadOmp,
    Color,
    ColorFused,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        Self::LoadSingle,
        Self::LoadOmp,
        Self::Color,
        Self::ColorFused,
    ];

    pub fn needs_schedule(self) -> bool {
        matches!(self, Self::Color | Self::ColorFused)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LoadSingle => "loadsingle",
            Self::LoadOmp => "loadomp",
            Self::Color => "color",
            Self::ColorFused => "colorfused",
        })
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "loadsingle" => Ok(Self::LoadSingle),
            "loadomp" => Ok(Self::LoadOmp),
            "color" => Ok(Self::Color),
            "colorfused" => Ok(Self::ColorFused),
            other => Err(format!("unknown kernel '{other}'")),
        }
    }
}

/// Phase times for one or more kernel invocations. Kernels that interleave
/// compute and stamp per device (`loadsingle`, `colorfused`) report the
/// combined time in `calc` with `fused` set and `stamp` zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub calc: Duration,
    pub stamp: Duration,
    pub total: Duration,
    pub fused: bool,
    pub invocations: usize,
}

impl PhaseTimings {
    pub fn t_calc(&self) -> f64 {
        self.calc.as_secs_f64()
    }

    pub fn t_stamp(&self) -> f64 {
        self.stamp.as_secs_f64()
    }

    pub fn t_total(&self) -> f64 {
        self.total.as_secs_f64()
    }
}

impl AddAssign for PhaseTimings {
    fn add_assign(&mut self, rhs: Self) {
        self.calc += rhs.calc;
        self.stamp += rhs.stamp;
        self.total += rhs.total;
        self.fused |= rhs.fused;
        self.invocations += rhs.invocations;
    }
}

/// One slot per device; slot `i` is written only by device `i`'s compute.
pub struct ContributionBuffer {
    slots: Box<[UnsafeCell<DeviceContribution>]>,
}

// SAFETY: every access goes through `write`/`get`, whose callers uphold the
// one-writer-per-slot, no-read-during-write discipline enforced by the
// kernels' phase barriers.
unsafe impl Sync for ContributionBuffer {}

impl ContributionBuffer {
    pub fn new(len: usize) -> Self {
        Self {
            slots: (0..len)
                .map(|_| UnsafeCell::new(DeviceContribution::default()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// # Safety
    /// No other thread may access slot `i` concurrently.
    #[inline]
    unsafe fn write(&self, i: usize, c: DeviceContribution) {
        *self.slots[i].get() = c;
    }

    /// # Safety
    /// No thread may be writing slot `i` concurrently.
    #[inline]
    unsafe fn get(&self, i: usize) -> &DeviceContribution {
        &*self.slots[i].get()
    }
}

/// Sense-counting spin barrier; yields after a short spin so oversubscribed
/// runs still make progress.
pub struct SpinBarrier {
    parties: usize,
    arrived: AtomicUsize,
    generation: AtomicUsize,
}

impl SpinBarrier {
    pub fn new(parties: usize) -> Self {
        Self {
            parties,
            arrived: AtomicUsize::new(0),
            generation: AtomicUsize::new(0),
        }
    }

    pub fn wait(&self) {
        if self.parties <= 1 {
            return;
        }
        let gen = self.generation.load(Ordering::Acquire);
        if self.arrived.fetch_add(1, Ordering::AcqRel) + 1 == self.parties {
            self.arrived.store(0, Ordering::Relaxed);
            self.generation.fetch_add(1, Ordering::Release);
            return;
        }
        let mut spins = 0u32;
        while self.generation.load(Ordering::Acquire) == gen {
            if spins < 128 {
                std::hint::spin_loop();
                spins += 1;
            } else {
                std::thread::yield_now();
            }
        }
    }
}

/// Matrix or RHS location reported by the race probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Matrix(usize),
    Rhs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaceConflict {
    pub slot: Slot,
    pub devices: (usize, usize),
}

/// Instrument that tags every slot with the device that last stamped it in
/// the current color epoch. A second device stamping the same slot inside
/// one concurrently processed group is a write race, whether or not the two
/// writes happened to overlap in time.
pub struct RaceProbe {
    matrix: Vec<AtomicU64>,
    rhs: Vec<AtomicU64>,
    conflicts: AtomicUsize,
    first: OnceLock<RaceConflict>,
}

impl RaceProbe {
    pub fn new(system: &SparseSystem) -> Self {
        Self {
            matrix: (0..system.nnz()).map(|_| AtomicU64::new(0)).collect(),
            rhs: (0..system.dimension()).map(|_| AtomicU64::new(0)).collect(),
            conflicts: AtomicUsize::new(0),
            first: OnceLock::new(),
        }
    }

    pub fn conflicts(&self) -> usize {
        self.conflicts.load(Ordering::Relaxed)
    }

    pub fn first_conflict(&self) -> Option<RaceConflict> {
        self.first.get().copied()
    }

    fn claim(&self, cell: &AtomicU64, slot: Slot, epoch: u32, dev: usize) {
        let tag = (u64::from(epoch) << 32) | (dev as u64 + 1);
        let mut cur = cell.load(Ordering::Acquire);
        loop {
            if cur == tag {
                return;
            }
            if cur >> 32 == u64::from(epoch) {
                self.conflicts.fetch_add(1, Ordering::Relaxed);
                let other = (cur & 0xffff_ffff) as usize - 1;
                let _ = self.first.set(RaceConflict {
                    slot,
                    devices: (other.min(dev), other.max(dev)),
                });
                return;
            }
            match cell.compare_exchange(cur, tag, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => return,
                Err(v) => cur = v,
            }
        }
    }

    fn record(&self, c: &DeviceContribution, epoch: u32, dev: usize) {
        for &(h, _) in &c.matrix {
            self.claim(&self.matrix[h.index()], Slot::Matrix(h.index()), epoch, dev);
        }
        for &(row, _) in &c.rhs {
            self.claim(&self.rhs[row], Slot::Rhs(row), epoch, dev);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub threads: usize,
    /// Repetitions of the model arithmetic per device evaluation.
    pub work_multiplier: u32,
    /// Color groups with fewer than `threads * small_group_factor` devices
    /// are stamped by a single worker.
    pub small_group_factor: usize,
}

impl KernelConfig {
    pub fn new(kind: KernelKind, threads: usize) -> Self {
        Self {
            kind,
            threads: threads.max(1),
            work_multiplier: 1,
            small_group_factor: 4,
        }
    }

    pub fn with_work(mut self, work_multiplier: u32) -> Self {
        self.work_multiplier = work_multiplier.max(1);
        self
    }
}

/// Worker `k`'s share of `len` items split `parts` ways.
#[inline]
pub fn partition(len: usize, parts: usize, k: usize) -> Range<usize> {
    len * k / parts..len * (k + 1) / parts
}

/// Owns the thread pool, contribution buffer and schedule for one kernel.
pub struct KernelRunner {
    config: KernelConfig,
    pool: Option<rayon::ThreadPool>,
    buffer: ContributionBuffer,
    schedule: Option<ColorSchedule>,
    devices: usize,
    probe: Option<RaceProbe>,
    epoch: u32,
}

impl KernelRunner {
    pub fn new(
        config: KernelConfig,
        devices: usize,
        schedule: Option<ColorSchedule>,
    ) -> Result<Self, KernelError> {
        if config.kind.needs_schedule() {
            match &schedule {
                None => return Err(KernelError::MissingSchedule(config.kind)),
                Some(s) if s.vertex_count() != devices => {
                    return Err(KernelError::ScheduleMismatch {
                        schedule: s.vertex_count(),
                        devices,
                    })
                }
                _ => {}
            }
        }
        let pool = if config.threads > 1 && config.kind != KernelKind::LoadSingle {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .thread_name(|i| format!("kernel-{i}"))
                    .build()
                    .map_err(|e| KernelError::Pool(e.to_string()))?,
            )
        } else {
            None
        };
        let buffered = matches!(config.kind, KernelKind::LoadOmp | KernelKind::Color);
        Ok(Self {
            config,
            pool,
            buffer: ContributionBuffer::new(if buffered { devices } else { 0 }),
            schedule,
            devices,
            probe: None,
            epoch: 1,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn schedule(&self) -> Option<&ColorSchedule> {
        self.schedule.as_ref()
    }

    /// Replace the schedule without revalidating it against the conflict
    /// graph. Used to inject faulty schedules under the race probe.
    pub fn set_schedule_unchecked(&mut self, schedule: ColorSchedule) -> Result<(), KernelError> {
        if schedule.vertex_count() != self.devices {
            return Err(KernelError::ScheduleMismatch {
                schedule: schedule.vertex_count(),
                devices: self.devices,
            });
        }
        self.schedule = Some(schedule);
        Ok(())
    }

    pub fn attach_probe(&mut self, system: &SparseSystem) {
        self.probe = Some(RaceProbe::new(system));
    }

    pub fn probe(&self) -> Option<&RaceProbe> {
        self.probe.as_ref()
    }

    pub fn run(
        &mut self,
        fets: &[Mosfet],
        op: &OperatingPoint,
        system: &SparseSystem,
    ) -> Result<PhaseTimings, KernelError> {
        if fets.len() != self.devices {
            return Err(KernelError::DeviceCountMismatch {
                expected: self.devices,
                got: fets.len(),
            });
        }
        Ok(match self.config.kind {
            KernelKind::LoadSingle => self.run_loadsingle(fets, op, system),
            KernelKind::LoadOmp => self.run_loadomp(fets, op, system),
            KernelKind::Color => self.run_color(fets, op, system)?,
            KernelKind::ColorFused => self.run_colorfused(fets, op, system)?,
        })
    }

    /// Execute `f(worker)` on every worker and join.
    fn region<R: Send>(&self, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
        match &self.pool {
            None => vec![f(0)],
            Some(pool) => pool.broadcast(|ctx| f(ctx.index())),
        }
    }

    fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Sequential compute-then-stamp in device order. Reference result.
    pub fn run_loadsingle(
        &mut self,
        fets: &[Mosfet],
        op: &OperatingPoint,
        system: &SparseSystem,
    ) -> PhaseTimings {
        let work = self.config.work_multiplier;
        let start = Instant::now();
        for fet in fets {
            fet.compute(op, work).stamp(system);
        }
        let total = start.elapsed();
        PhaseTimings {
            calc: total,
            stamp: Duration::ZERO,
            total,
            fused: true,
            invocations: 1,
        }
    }

    /// Parallel compute into the buffer, then sequential stamping in device order.
    pub fn run_loadomp(
        &mut self,
        fets: &[Mosfet],
        op: &OperatingPoint,
        system: &SparseSystem,
    ) -> PhaseTimings {
        let work = self.config.work_multiplier;
        let workers = self.workers();
        let buffer = &self.buffer;
        let start = Instant::now();
        self.region(|tid| {
            for i in partition(fets.len(), workers, tid) {
                // SAFETY: partitions are disjoint
                unsafe { buffer.write(i, fets[i].compute(op, work)) };
            }
        });
        let computed = Instant::now();
        for i in 0..fets.len() {
            // SAFETY: the compute region has joined
            unsafe { buffer.get(i) }.stamp(system);
        }
        let end = Instant::now();
        PhaseTimings {
            calc: computed - start,
            stamp: end - computed,
            total: end - start,
            fused: false,
            invocations: 1,
        }
    }

    /// One parallel region: buffered compute, barrier, then each color group
    /// stamped concurrently with a barrier between colors.
    pub fn run_color(
        &mut self,
        fets: &[Mosfet],
        op: &OperatingPoint,
        system: &SparseSystem,
    ) -> Result<PhaseTimings, KernelError> {
        let schedule = self
            .schedule
            .as_ref()
            .ok_or(KernelError::MissingSchedule(KernelKind::Color))?;
        let work = self.config.work_multiplier;
        let workers = self.workers();
        let serial_below = workers * self.config.small_group_factor;
        let epoch0 = self.epoch;
        let buffer = &self.buffer;
        let probe = self.probe.as_ref();
        let barrier = SpinBarrier::new(workers);

        let start = Instant::now();
        let phases = self.region(|tid| {
            for i in partition(fets.len(), workers, tid) {
                // SAFETY: partitions are disjoint
                unsafe { buffer.write(i, fets[i].compute(op, work)) };
            }
            barrier.wait();
            let computed = Instant::now();
            for (c, group) in schedule.groups().iter().enumerate() {
                let mine = if group.len() < serial_below {
                    if tid == 0 {
                        0..group.len()
                    } else {
                        0..0
                    }
                } else {
                    partition(group.len(), workers, tid)
                };
                for &dev in &group[mine] {
                    // SAFETY: all writes finished before the compute barrier
                    let contribution = unsafe { buffer.get(dev) };
                    if let Some(p) = probe {
                        p.record(contribution, epoch0 + c as u32, dev);
                    }
                    contribution.stamp(system);
                }
                barrier.wait();
            }
            (computed, Instant::now())
        });
        self.epoch += schedule.color_count() as u32 + 1;
        let (computed, stamped) = phases[0];
        let end = Instant::now();
        Ok(PhaseTimings {
            calc: computed - start,
            stamp: stamped - computed,
            total: end - start,
            fused: false,
            invocations: 1,
        })
    }

    /// Per color: a parallel loop where each device computes and immediately
    /// stamps. No buffer.
    pub fn run_colorfused(
        &mut self,
        fets: &[Mosfet],
        op: &OperatingPoint,
        system: &SparseSystem,
    ) -> Result<PhaseTimings, KernelError> {
        let schedule = self
            .schedule
            .as_ref()
            .ok_or(KernelError::MissingSchedule(KernelKind::ColorFused))?;
        let work = self.config.work_multiplier;
        let workers = self.workers();
        let serial_below = workers * self.config.small_group_factor;
        let probe = self.probe.as_ref();

        let eval = |dev: usize, epoch: u32| {
            let contribution = fets[dev].compute(op, work);
            if let Some(p) = probe {
                p.record(&contribution, epoch, dev);
            }
            contribution.stamp(system);
        };

        let start = Instant::now();
        for (c, group) in schedule.groups().iter().enumerate() {
            let epoch = self.epoch + c as u32;
            if workers == 1 || group.len() < serial_below {
                group.iter().for_each(|&dev| eval(dev, epoch));
            } else {
                self.region(|tid| {
                    for &dev in &group[partition(group.len(), workers, tid)] {
                        eval(dev, epoch);
                    }
                });
            }
        }
        let total = start.elapsed();
        self.epoch += schedule.color_count() as u32 + 1;
        Ok(PhaseTimings {
            calc: total,
            stamp: Duration::ZERO,
            total,
            fused: true,
            invocations: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_covers_range() {
        for len in [0, 1, 7, 100, 101] {
            for parts in 1..9 {
                let mut next = 0;
                for k in 0..parts {
                    let r = partition(len, parts, k);
                    assert_eq!(r.start, next);
                    next = r.end;
                }
                assert_eq!(next, len);
            }
        }
    }

    #[test]
    fn barrier_orders_phases() {
        let threads = 4;
        let barrier = SpinBarrier::new(threads);
        let counter = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| {
                    for round in 0..50 {
                        counter.fetch_add(1, Ordering::SeqCst);
                        barrier.wait();
                        assert_eq!(counter.load(Ordering::SeqCst), threads * (round + 1));
                        barrier.wait();
                    }
                });
            }
        });
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in KernelKind::ALL {
            assert_eq!(k.to_string().parse::<KernelKind>().unwrap(), k);
        }
        assert!("atomic".parse::<KernelKind>().is_err());
    }

    #[test]
    fn colored_kernels_need_a_matching_schedule() {
        let cfg = KernelConfig::new(KernelKind::Color, 2);
        assert!(matches!(
            KernelRunner::new(cfg, 3, None),
            Err(KernelError::MissingSchedule(_))
        ));
        let s = ColorSchedule::from_colors(&[0, 1]);
        assert!(matches!(
            KernelRunner::new(cfg, 3, Some(s)),
            Err(KernelError::ScheduleMismatch {
                schedule: 2,
                devices: 3
            })
        ));
    }
}
