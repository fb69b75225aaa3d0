//! Sparse MNA system with a frozen pattern and stable entry handles.
//!
//! Assembly is two-pass: devices [`SystemBuilder::reserve`] the slots they
//! will ever touch, [`SystemBuilder::finalize`] sorts and freezes the
//! pattern, and from then on stamping only accumulates into existing slots.
//! Ground is eliminated: any pair involving ground is dropped at reserve time.
//!
//! Values are stored as relaxed atomics accessed with separate load and store
//! (not an atomic read-modify-write). Concurrent [`SparseSystem::add`] calls on
//! the same slot therefore lose updates exactly like unsynchronized `+=`; the
//! colored schedule is what keeps them apart.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MnaError {
    #[error("system structure is frozen; reserve called after finalize")]
    StructureFrozen,
    #[error("unknown index {index} out of range for system of size {n}")]
    OutOfRange { index: usize, n: usize },
}

/// `f64` cell with unsynchronized accumulate.
#[derive(Debug, Default)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        Self(AtomicU64::new(v.to_bits()))
    }

    #[inline]
    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }

    /// Load, add, store. Not atomic as a whole.
    #[inline]
    pub fn accumulate(&self, v: f64) {
        self.set(self.get() + v)
    }
}

/// Index of one (row, col) slot in the frozen value array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryHandle(pub u32);

impl EntryHandle {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Slots a device stamps into, addressed by local terminal indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StampPlan {
    /// Unknown index per terminal; `None` for ground.
    pub terminals: Vec<Option<usize>>,
    /// Row-major `terminals.len()^2` table; `None` where the pair involves
    /// ground or was not reserved.
    entries: Vec<Option<EntryHandle>>,
}

impl StampPlan {
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> Option<EntryHandle> {
        self.entries[i * self.terminals.len() + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> Option<usize> {
        self.terminals[i]
    }

    /// Distinct handles, sorted.
    pub fn handles(&self) -> Vec<EntryHandle> {
        let mut h: Vec<_> = self.entries.iter().flatten().copied().collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    /// Distinct non-ground rows touched by the RHS, sorted.
    pub fn rhs_rows(&self) -> Vec<usize> {
        let mut r: Vec<_> = self.terminals.iter().flatten().copied().collect();
        r.sort_unstable();
        r.dedup();
        r
    }
}

struct PendingPlan {
    terminals: Vec<Option<usize>>,
    /// Index into `SystemBuilder::pairs` per local slot.
    slots: Vec<Option<usize>>,
}

/// Setup-time collector of the sparsity pattern.
pub struct SystemBuilder {
    n_nodes: usize,
    n_branches: usize,
    pairs: Vec<(u32, u32)>,
    plans: Vec<PendingPlan>,
    frozen: bool,
}

impl SystemBuilder {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            n_branches: 0,
            pairs: Vec::new(),
            plans: Vec::new(),
            frozen: false,
        }
    }

    /// Allocate a branch-current unknown, placed after all node unknowns.
    pub fn add_branch(&mut self) -> Result<usize, MnaError> {
        if self.frozen {
            return Err(MnaError::StructureFrozen);
        }
        self.n_branches += 1;
        Ok(self.n_nodes + self.n_branches - 1)
    }

    pub fn dimension(&self) -> usize {
        self.n_nodes + self.n_branches
    }

    /// Reserve the full cross product of the device's non-ground terminals.
    /// Returns the plan's position in the list produced by `finalize`.
    pub fn reserve(&mut self, terminals: &[Option<usize>]) -> Result<usize, MnaError> {
        let k = terminals.len();
        let all: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
        self.reserve_pairs(terminals, &all)
    }

    /// Reserve only the listed local `(i, j)` terminal pairs.
    pub fn reserve_pairs(
        &mut self,
        terminals: &[Option<usize>],
        local_pairs: &[(usize, usize)],
    ) -> Result<usize, MnaError> {
        if self.frozen {
            return Err(MnaError::StructureFrozen);
        }
        let n = self.dimension();
        if let Some(&index) = terminals.iter().flatten().find(|&&t| t >= n) {
            return Err(MnaError::OutOfRange { index, n });
        }
        let k = terminals.len();
        let mut slots = vec![None; k * k];
        for &(i, j) in local_pairs {
            if let (Some(r), Some(c)) = (terminals[i], terminals[j]) {
                slots[i * k + j] = Some(self.pairs.len());
                self.pairs.push((r as u32, c as u32));
            }
        }
        self.plans.push(PendingPlan {
            terminals: terminals.to_vec(),
            slots,
        });
        Ok(self.plans.len() - 1)
    }

    /// Deduplicate and sort the pattern, freeze it and remap every plan.
    pub fn finalize(&mut self) -> Result<(SparseSystem, Vec<StampPlan>), MnaError> {
        if self.frozen {
            return Err(MnaError::StructureFrozen);
        }
        self.frozen = true;
        let n = self.dimension();
        let mut coords = self.pairs.clone();
        coords.sort_unstable();
        coords.dedup();

        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _) in &coords {
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx: Vec<usize> = coords.iter().map(|&(_, c)| c as usize).collect();

        let lookup = |pair: (u32, u32)| {
            EntryHandle(coords.binary_search(&pair).expect("reserved pair present") as u32)
        };
        let plans = self
            .plans
            .drain(..)
            .map(|p| StampPlan {
                entries: p
                    .slots
                    .iter()
                    .map(|s| s.map(|s| lookup(self.pairs[s])))
                    .collect(),
                terminals: p.terminals,
            })
            .collect();

        let nnz = col_idx.len();
        let system = SparseSystem {
            n,
            n_nodes: self.n_nodes,
            row_ptr,
            col_idx,
            values: (0..nnz).map(|_| AtomicF64::default()).collect(),
            rhs: (0..n).map(|_| AtomicF64::default()).collect(),
        };
        Ok((system, plans))
    }
}

/// MNA matrix in CSR form (frozen pattern) plus dense right-hand side.
#[derive(Debug)]
pub struct SparseSystem {
    n: usize,
    n_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<AtomicF64>,
    rhs: Vec<AtomicF64>,
}

impl SparseSystem {
    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Unknowns `[0, n_nodes)` are node voltages; the rest are branch currents.
    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// `(row, col)` addressed by a handle.
    pub fn coords(&self, h: EntryHandle) -> (usize, usize) {
        let slot = h.index();
        let row = self.row_ptr.partition_point(|&p| p <= slot) - 1;
        (row, self.col_idx[slot])
    }

    pub fn find(&self, row: usize, col: usize) -> Option<EntryHandle> {
        let cols = &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]];
        cols.binary_search(&col)
            .ok()
            .map(|k| EntryHandle((self.row_ptr[row] + k) as u32))
    }

    pub fn clear_values(&self) {
        self.values.iter().for_each(|v| v.set(0.0));
        self.rhs.iter().for_each(|v| v.set(0.0));
    }

    /// Unsynchronized accumulate. Concurrent calls must target distinct slots.
    #[inline]
    pub fn add(&self, h: EntryHandle, v: f64) {
        self.values[h.index()].accumulate(v)
    }

    /// Unsynchronized accumulate into the RHS. Concurrent calls must target distinct rows.
    #[inline]
    pub fn add_rhs(&self, row: usize, v: f64) {
        self.rhs[row].accumulate(v)
    }

    #[inline]
    pub fn value(&self, slot: usize) -> f64 {
        self.values[slot].get()
    }

    #[inline]
    pub fn rhs_value(&self, row: usize) -> f64 {
        self.rhs[row].get()
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.iter().map(AtomicF64::get).collect()
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.rhs.iter().map(AtomicF64::get).collect()
    }

    /// Row-major dense copy of the matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (r, row) in a.iter_mut().enumerate() {
            for slot in self.row_ptr[r]..self.row_ptr[r + 1] {
                row[self.col_idx[slot]] = self.value(slot);
            }
        }
        a
    }

    /// `row col value` per pattern entry in sorted order, followed by
    /// `rhs row value` lines.
    pub fn dump_triplets(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n {
            for slot in self.row_ptr[r]..self.row_ptr[r + 1] {
                let _ = writeln!(out, "{} {} {:e}", r, self.col_idx[slot], self.value(slot));
            }
        }
        for r in 0..self.n {
            let _ = writeln!(out, "rhs {} {:e}", r, self.rhs_value(r));
        }
        out
    }

    /// `A·x` for residual checks.
    pub fn multiply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|s| self.value(s) * x[self.col_idx[s]])
                    .sum()
            })
            .collect()
    }

    /// Infinity norm of the matrix.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|s| self.value(s).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}
