//! Sparse LU for MNA systems.
//!
//! Column order comes from a minimum-degree ordering of `A + Aᵀ`, computed
//! once in [`SparseLu::analyze`]. The first numeric factorization is a
//! left-looking (Gilbert-Peierls) LU with threshold partial pivoting that
//! prefers the diagonal; it fixes the row pivot sequence and the fill pattern
//! of `L` and `U`. Later calls [`SparseLu::refactor`] reuse both and only redo
//! the arithmetic. If a reused pivot becomes numerically unacceptable the
//! refactor falls back to a fresh pivoting factorization.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use thiserror::Error;

/// Singular if the best available pivot is at most this fraction of the
/// largest magnitude in the original column.
pub const SINGULAR_PIVOT: f64 = f64::EPSILON;

/// Diagonal preference / repivot threshold for partial pivoting.
pub const PIVOT_TOLERANCE: f64 = 1e-3;

const GROWTH_WARNING: f64 = 1e8;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("singular matrix: no acceptable pivot for unknown {index}")]
    Singular { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LuStats {
    pub factorizations: usize,
    pub refactorizations: usize,
    pub repivots: usize,
    pub max_growth: f64,
}

#[derive(Debug, Clone, Default)]
struct Numeric {
    prow: Vec<usize>,
    pinv: Vec<usize>,
    l_ptr: Vec<usize>,
    l_rows: Vec<usize>,
    l_vals: Vec<f64>,
    /// U off-diagonal entries per step, in dependency (topological) order.
    u_ptr: Vec<usize>,
    u_steps: Vec<usize>,
    u_vals: Vec<f64>,
    diag: Vec<f64>,
}

pub struct SparseLu {
    n: usize,
    /// Compressed columns of A: original row and CSR slot per entry.
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_slots: Vec<usize>,
    order: Vec<usize>,
    numeric: Option<Numeric>,
    work: Vec<f64>,
    stats: LuStats,
}

impl SparseLu {
    /// Symbolic setup from a CSR pattern.
    pub fn analyze(n: usize, row_ptr: &[usize], col_idx: &[usize]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &c in col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut col_rows = vec![0; col_idx.len()];
        let mut col_slots = vec![0; col_idx.len()];
        for r in 0..n {
            for slot in row_ptr[r]..row_ptr[r + 1] {
                let c = col_idx[slot];
                col_rows[next[c]] = r;
                col_slots[next[c]] = slot;
                next[c] += 1;
            }
        }
        let order = minimum_degree(n, row_ptr, col_idx);
        Self {
            n,
            col_ptr,
            col_rows,
            col_slots,
            order,
            numeric: None,
            work: vec![0.0; n],
            stats: LuStats::default(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn column_order(&self) -> &[usize] {
        &self.order
    }

    pub fn stats(&self) -> LuStats {
        self.stats
    }

    pub fn fill(&self) -> usize {
        self.numeric
            .as_ref()
            .map_or(0, |f| f.l_rows.len() + f.u_steps.len() + self.n)
    }

    fn check_len(&self, values: &[f64]) -> Result<(), SolverError> {
        if values.len() != self.col_rows.len() {
            return Err(SolverError::Dimension {
                expected: self.col_rows.len(),
                got: values.len(),
            });
        }
        Ok(())
    }

    fn column_max(&self, j: usize, values: &[f64]) -> f64 {
        (self.col_ptr[j]..self.col_ptr[j + 1])
            .map(|p| values[self.col_slots[p]].abs())
            .fold(0.0, f64::max)
    }

    /// Full factorization with threshold partial pivoting. Values are in CSR
    /// slot order.
    pub fn factor(&mut self, values: &[f64]) -> Result<(), SolverError> {
        self.check_len(values)?;
        let n = self.n;
        let mut f = Numeric {
            prow: vec![NONE; n],
            pinv: vec![NONE; n],
            l_ptr: vec![0],
            u_ptr: vec![0],
            diag: vec![0.0; n],
            ..Numeric::default()
        };
        let mut work = std::mem::take(&mut self.work);
        let x = &mut work;
        let mut visited = vec![NONE; n];
        let mut postorder: Vec<usize> = Vec::new();
        let mut lower: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut a_max = 0.0f64;
        let mut u_max = 0.0f64;

        for k in 0..n {
            let j = self.order[k];
            postorder.clear();
            lower.clear();
            // reach of column j through the graph of L
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let r0 = self.col_rows[p];
                if visited[r0] == k {
                    continue;
                }
                visited[r0] = k;
                if f.pinv[r0] == NONE {
                    lower.push(r0);
                    continue;
                }
                stack.push((f.pinv[r0], 0));
                while let Some(&mut (s, ref mut pos)) = stack.last_mut() {
                    let end = f.l_ptr[s + 1];
                    let mut descended = false;
                    while f.l_ptr[s] + *pos < end {
                        let r = f.l_rows[f.l_ptr[s] + *pos];
                        *pos += 1;
                        if visited[r] == k {
                            continue;
                        }
                        visited[r] = k;
                        if f.pinv[r] == NONE {
                            lower.push(r);
                        } else {
                            stack.push((f.pinv[r], 0));
                            descended = true;
                            break;
                        }
                    }
                    if !descended {
                        postorder.push(s);
                        stack.pop();
                    }
                }
            }

            let col_max = self.column_max(j, values);
            a_max = a_max.max(col_max);
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                x[self.col_rows[p]] = values[self.col_slots[p]];
            }
            for &s in postorder.iter().rev() {
                let xs = x[f.prow[s]];
                f.u_steps.push(s);
                f.u_vals.push(xs);
                u_max = u_max.max(xs.abs());
                for q in f.l_ptr[s]..f.l_ptr[s + 1] {
                    x[f.l_rows[q]] -= f.l_vals[q] * xs;
                }
            }
            f.u_ptr.push(f.u_steps.len());

            let mut best = NONE;
            let mut best_abs = 0.0;
            for &r in &lower {
                if x[r].abs() > best_abs {
                    best_abs = x[r].abs();
                    best = r;
                }
            }
            if visited[j] == k && f.pinv[j] == NONE && x[j].abs() >= PIVOT_TOLERANCE * best_abs {
                best = j;
            }
            if best == NONE || best_abs == 0.0 || best_abs <= SINGULAR_PIVOT * col_max {
                for &r in &lower {
                    x[r] = 0.0;
                }
                for &s in &postorder {
                    x[f.prow[s]] = 0.0;
                }
                self.work = work;
                return Err(SolverError::Singular { index: j });
            }
            let pivot = x[best];
            f.pinv[best] = k;
            f.prow[k] = best;
            f.diag[k] = pivot;
            u_max = u_max.max(pivot.abs());
            for &r in &lower {
                if r != best {
                    f.l_rows.push(r);
                    f.l_vals.push(x[r] / pivot);
                }
                x[r] = 0.0;
            }
            f.l_ptr.push(f.l_rows.len());
            for &s in &postorder {
                x[f.prow[s]] = 0.0;
            }
        }
        self.work = work;
        self.note_growth(u_max, a_max);
        self.numeric = Some(f);
        self.stats.factorizations += 1;
        Ok(())
    }

    fn note_growth(&mut self, u_max: f64, a_max: f64) {
        let growth = if a_max > 0.0 { u_max / a_max } else { 0.0 };
        self.stats.max_growth = self.stats.max_growth.max(growth);
        if growth > GROWTH_WARNING {
            log::warn!("LU pivot growth {growth:.3e} exceeds {GROWTH_WARNING:e}");
        }
    }

    /// Numeric refactorization on the pattern and pivots of the last
    /// `factor`. Falls back to `factor` when no prior factorization exists or
    /// a reused pivot fails the threshold test.
    pub fn refactor(&mut self, values: &[f64]) -> Result<(), SolverError> {
        self.check_len(values)?;
        let Some(mut f) = self.numeric.take() else {
            return self.factor(values);
        };
        let x = &mut self.work;
        let mut a_max = 0.0f64;
        let mut u_max = 0.0f64;
        let mut ok = true;
        for k in 0..self.n {
            let j = self.order[k];
            let mut col_max = 0.0f64;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let v = values[self.col_slots[p]];
                col_max = col_max.max(v.abs());
                x[self.col_rows[p]] = v;
            }
            a_max = a_max.max(col_max);
            for p in f.u_ptr[k]..f.u_ptr[k + 1] {
                let s = f.u_steps[p];
                let xs = x[f.prow[s]];
                x[f.prow[s]] = 0.0;
                f.u_vals[p] = xs;
                u_max = u_max.max(xs.abs());
                for q in f.l_ptr[s]..f.l_ptr[s + 1] {
                    x[f.l_rows[q]] -= f.l_vals[q] * xs;
                }
            }
            let pr = f.prow[k];
            let pivot = x[pr];
            x[pr] = 0.0;
            let l_range = f.l_ptr[k]..f.l_ptr[k + 1];
            let l_max = l_range
                .clone()
                .map(|q| x[f.l_rows[q]].abs())
                .fold(0.0, f64::max);
            if pivot == 0.0
                || pivot.abs() < PIVOT_TOLERANCE * l_max
                || pivot.abs() <= SINGULAR_PIVOT * col_max
            {
                for q in l_range {
                    x[f.l_rows[q]] = 0.0;
                }
                ok = false;
                break;
            }
            f.diag[k] = pivot;
            u_max = u_max.max(pivot.abs());
            for q in l_range {
                let r = f.l_rows[q];
                f.l_vals[q] = x[r] / pivot;
                x[r] = 0.0;
            }
        }
        if !ok {
            self.stats.repivots += 1;
            return self.factor(values);
        }
        self.note_growth(u_max, a_max);
        self.numeric = Some(f);
        self.stats.refactorizations += 1;
        Ok(())
    }

    /// Solve with the current factors. Panics if nothing has been factored.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let f = self.numeric.as_ref().expect("factor before solve");
        let n = self.n;
        let mut z = vec![0.0; n];
        for k in 0..n {
            let zk = b[f.prow[k]];
            z[k] = zk;
            if zk != 0.0 {
                for q in f.l_ptr[k]..f.l_ptr[k + 1] {
                    b[f.l_rows[q]] -= f.l_vals[q] * zk;
                }
            }
        }
        for k in (0..n).rev() {
            let zk = z[k] / f.diag[k];
            z[k] = zk;
            if zk != 0.0 {
                for p in f.u_ptr[k]..f.u_ptr[k + 1] {
                    z[f.u_steps[p]] -= f.u_vals[p] * zk;
                }
            }
        }
        for k in 0..n {
            b[self.order[k]] = z[k];
        }
    }

    /// Refactor (or factor) and solve `A x = rhs`.
    pub fn solve(&mut self, values: &[f64], rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        if rhs.len() != self.n {
            return Err(SolverError::Dimension {
                expected: self.n,
                got: rhs.len(),
            });
        }
        self.refactor(values)?;
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// Max-abs entry of `P·A·Q − L·U`, formed densely. Diagnostic for small systems.
    pub fn reconstruction_error(&self, values: &[f64]) -> f64 {
        let f = self.numeric.as_ref().expect("factor before reconstruction");
        let n = self.n;
        let mut l = vec![vec![0.0; n]; n];
        let mut u = vec![vec![0.0; n]; n];
        for k in 0..n {
            l[k][k] = 1.0;
            for q in f.l_ptr[k]..f.l_ptr[k + 1] {
                l[f.pinv[f.l_rows[q]]][k] = f.l_vals[q];
            }
            u[k][k] = f.diag[k];
            for p in f.u_ptr[k]..f.u_ptr[k + 1] {
                u[f.u_steps[p]][k] = f.u_vals[p];
            }
        }
        let mut pa = vec![vec![0.0; n]; n];
        for k in 0..n {
            let j = self.order[k];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                pa[f.pinv[self.col_rows[p]]][k] = values[self.col_slots[p]];
            }
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let lu: f64 = (0..=i.min(j)).map(|m| l[i][m] * u[m][j]).sum();
                worst = worst.max((lu - pa[i][j]).abs());
            }
        }
        worst
    }
}

/// Minimum-degree ordering on the symmetrized pattern, ties broken by index.
fn minimum_degree(n: usize, row_ptr: &[usize], col_idx: &[usize]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for r in 0..n {
        for &c in &col_idx[row_ptr[r]..row_ptr[r + 1]] {
            if c != r {
                adj[r].insert(c as u32);
                adj[c].insert(r as u32);
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        order.push(v);
        let nbrs: Vec<u32> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u as usize].remove(&(v as u32));
        }
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                adj[u as usize].insert(w);
                adj[w as usize].insert(u);
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u as usize].len(), u as usize)));
        }
    }
    order
}
