//! Pointwise waveform comparison.

use std::fmt;

use thiserror::Error;

use crate::engine::Waveforms;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("column sets differ: {a:?} vs {b:?}")]
    Columns { a: Vec<String>, b: Vec<String> },
    #[error("time grids differ (lengths {a} and {b}, first mismatch at row {row})")]
    Grid { a: usize, b: usize, row: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnError {
    pub column: String,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Time of the largest absolute deviation.
    pub worst_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub column: String,
    pub row: usize,
    pub time: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub columns: Vec<ColumnError>,
    pub reltol: f64,
    pub abstol: f64,
    /// First sample outside `abstol + reltol * max(|a|, |b|)`, scanning by row.
    pub first_violation: Option<Violation>,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn max_abs(&self) -> f64 {
        self.columns.iter().map(|c| c.max_abs).fold(0.0, f64::max)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "column\tmax_abs\tmax_rel\tworst_time")?;
        for c in &self.columns {
            writeln!(
                f,
                "{}\t{:e}\t{:e}\t{:e}",
                c.column, c.max_abs, c.max_rel, c.worst_time
            )?;
        }
        match &self.first_violation {
            None => write!(f, "PASS reltol={:e} abstol={:e}", self.reltol, self.abstol),
            Some(v) => write!(
                f,
                "FAIL reltol={:e} abstol={:e}: column {} row {} t={:e} a={:e} b={:e}",
                self.reltol, self.abstol, v.column, v.row, v.time, v.a, v.b
            ),
        }
    }
}

pub fn compare_waveforms(
    a: &Waveforms,
    b: &Waveforms,
    reltol: f64,
    abstol: f64,
) -> Result<CompareReport, CompareError> {
    if a.columns != b.columns {
        return Err(CompareError::Columns {
            a: a.columns.clone(),
            b: b.columns.clone(),
        });
    }
    if let Some(row) =
        (0..a.times.len().max(b.times.len())).find(|&i| a.times.get(i) != b.times.get(i))
    {
        return Err(CompareError::Grid {
            a: a.times.len(),
            b: b.times.len(),
            row,
        });
    }
    let mut columns: Vec<ColumnError> = a
        .columns
        .iter()
        .map(|c| ColumnError {
            column: c.clone(),
            max_abs: 0.0,
            max_rel: 0.0,
            worst_time: a.times.first().copied().unwrap_or(0.0),
        })
        .collect();
    let mut first_violation = None;
    for (row, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        for (k, (&va, &vb)) in ra.iter().zip(rb).enumerate() {
            let diff = (va - vb).abs();
            let scale = va.abs().max(vb.abs());
            let col = &mut columns[k];
            if diff > col.max_abs {
                col.max_abs = diff;
                col.worst_time = a.times[row];
            }
            if scale > 0.0 {
                col.max_rel = col.max_rel.max(diff / scale);
            }
            if first_violation.is_none() && !(diff <= abstol + reltol * scale) {
                first_violation = Some(Violation {
                    column: col.column.clone(),
                    row,
                    time: a.times[row],
                    a: va,
                    b: vb,
                });
            }
        }
    }
    Ok(CompareReport {
        columns,
        reltol,
        abstol,
        first_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn waves() -> Waveforms {
        let mut w = Waveforms::new(vec!["a".into(), "b".into()]);
        for k in 0..10 {
            let t = k as f64 * 1e-9;
            w.push(t, &[(t * 1e8).sin(), 1.8 - t * 1e8]);
        }
        w
    }

    #[test]
    fn self_comparison_passes_with_zero_error() {
        let w = waves();
        let r = compare_waveforms(&w, &w, 0.0, 0.0).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn perturbed_sample_is_located() {
        let w = waves();
        let mut p = w.clone();
        p.rows[6][1] += 1e-3;
        let r = compare_waveforms(&w, &p, 0.0, 1e-6).unwrap();
        assert!(!r.passed());
        let v = r.first_violation.unwrap();
        assert_eq!((v.column.as_str(), v.row), ("b", 6));
        assert!((r.columns[1].max_abs - 1e-3).abs() < 1e-12);
        assert_eq!(r.columns[1].worst_time, w.times[6]);
    }

    #[test]
    fn mismatches_are_errors() {
        let w = waves();
        let mut short = w.clone();
        short.times.pop();
        short.rows.pop();
        assert!(matches!(
            compare_waveforms(&w, &short, 0.0, 0.0),
            Err(CompareError::Grid { row: 9, .. })
        ));
        let mut renamed = w.clone();
        renamed.columns[0] = "z".into();
        assert!(matches!(
            compare_waveforms(&w, &renamed, 0.0, 0.0),
            Err(CompareError::Columns { .. })
        ));
    }
}
