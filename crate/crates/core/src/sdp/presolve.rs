//! Reduction of the linear equalities to an explicit parametrisation
//! `y = y_p + T w`.
//!
//! Rows are eliminated one at a time (Gauss-Jordan) with threshold
//! pivoting. Among the entries within a factor two of the largest one the
//! highest-order moment is chosen, so that low-degree moments tend to stay
//! free. Every pivot row remembers the combination of input rows it came
//! from, which is what turns solver output back into certificates.

use crate::moments::LinearRow;

// entries below this, relative to a row's scale, are treated as zero
const DROP_TOL: f64 = 1e-12;
const PIVOT_THRESHOLD: f64 = 0.5;

type Sparse = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub(crate) struct PivotRow {
    pub col: usize,
    /// Reduced row: 1 at `col`, zero at every other pivot column.
    pub entries: Sparse,
    pub rhs: f64,
    /// Coefficients over the input rows.
    pub combo: Sparse,
}

#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub num_moments: usize,
    pub y_p: Vec<f64>,
    /// Moment index of each free variable.
    pub free: Vec<usize>,
    /// Column `j` of `T` as `(moment, coefficient)` pairs.
    pub t_cols: Vec<Sparse>,
    pub pivots: Vec<PivotRow>,
    pub dropped: usize,
}

impl Reduction {
    /// `T w` as a moment vector.
    pub fn apply_t(&self, w: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.num_moments];
        for (col, &wj) in self.t_cols.iter().zip(w) {
            if wj != 0.0 {
                for &(i, c) in col {
                    y[i] += c * wj;
                }
            }
        }
        y
    }

    /// `T^T g`.
    pub fn apply_tt(&self, g: &[f64]) -> Vec<f64> {
        self.t_cols
            .iter()
            .map(|col| col.iter().map(|&(i, c)| c * g[i]).sum())
            .collect()
    }

    /// Multipliers on the input rows whose combination matches `g` on the
    /// pivot columns: `lambda = sum_i g[pivot_i] combo_i`.
    pub fn multipliers_for(&self, g: &[f64], num_rows: usize) -> Vec<f64> {
        let mut lambda = vec![0.0; num_rows];
        for p in &self.pivots {
            let mu = g[p.col];
            if mu != 0.0 {
                for &(r, c) in &p.combo {
                    lambda[r] += mu * c;
                }
            }
        }
        lambda
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Presolved {
    Reduced(Reduction),
    /// A combination of rows reads `0 = nonzero`; multipliers scaled so
    /// that `b . lambda = -1`.
    Inconsistent {
        multipliers: Vec<f64>,
        gap: f64,
    },
}

// out = a + s * b, both sorted by index
fn axpy(a: &Sparse, s: f64, b: &Sparse) -> Sparse {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push((b[j].0, s * b[j].1));
            j += 1;
        } else {
            out.push((a[i].0, a[i].1 + s * b[j].1));
            i += 1;
            j += 1;
        }
    }
    out
}

fn find(row: &Sparse, col: usize) -> Option<f64> {
    row.binary_search_by_key(&col, |e| e.0)
        .ok()
        .map(|k| row[k].1)
}

/// Eliminates `rows`; `rhs_tol` decides whether a dependent row is
/// consistent (relative to `max(1, |b|_inf)`).
pub(crate) fn presolve(rows: &[LinearRow], num_moments: usize, rhs_tol: f64) -> Presolved {
    let b_scale = rows.iter().fold(1.0f64, |m, r| m.max(r.rhs.abs()));
    let mut pivots: Vec<PivotRow> = Vec::new();
    let mut pivot_of: Vec<Option<usize>> = vec![None; num_moments];
    let mut dropped = 0;
    let mut scratch = vec![0.0; num_moments];
    let mut touched: Vec<usize> = Vec::new();

    for (r, row) in rows.iter().enumerate() {
        let scale = row.coeffs.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
        if scale == 0.0 {
            if row.rhs.abs() > rhs_tol * b_scale {
                return inconsistent(vec![(r, 1.0)], row.rhs, rows.len());
            }
            dropped += 1;
            continue;
        }
        // reduce against existing pivots in a dense scratch vector
        let mut rhs = row.rhs / scale;
        let mut combo: Sparse = vec![(r, 1.0 / scale)];
        touched.clear();
        for &(i, c) in &row.coeffs {
            if scratch[i] == 0.0 {
                touched.push(i);
            }
            scratch[i] += c / scale;
        }
        let hits: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .filter_map(|&(i, _)| pivot_of[i].map(|p| (p, scratch[i])))
            .collect();
        for (p, v) in hits {
            if v == 0.0 {
                continue;
            }
            let prow = &pivots[p];
            for &(i, c) in &prow.entries {
                if scratch[i] == 0.0 {
                    touched.push(i);
                }
                scratch[i] -= v * c;
            }
            rhs -= v * prow.rhs;
            combo = axpy(&combo, -v, &prow.combo);
        }
        touched.sort_unstable();
        touched.dedup();
        let mut entries: Sparse = Vec::with_capacity(touched.len());
        for &i in &touched {
            let v = scratch[i];
            scratch[i] = 0.0;
            if v.abs() > DROP_TOL && pivot_of[i].is_none() {
                entries.push((i, v));
            }
        }
        if entries.is_empty() {
            if rhs.abs() > rhs_tol * b_scale / scale {
                return inconsistent(combo, rhs, rows.len());
            }
            dropped += 1;
            continue;
        }
        let big = entries.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
        let &(col, pv) = entries
            .iter()
            .rev()
            .find(|e| e.1.abs() >= PIVOT_THRESHOLD * big)
            .expect("largest entry qualifies");
        for e in entries.iter_mut() {
            e.1 /= pv;
        }
        for e in combo.iter_mut() {
            e.1 /= pv;
        }
        let new = PivotRow {
            col,
            entries,
            rhs: rhs / pv,
            combo,
        };
        // keep earlier pivot rows free of the new pivot column
        for prow in pivots.iter_mut() {
            if let Some(v) = find(&prow.entries, col) {
                let mut e = axpy(&prow.entries, -v, &new.entries);
                e.retain(|&(i, c)| i != col && c.abs() > DROP_TOL);
                prow.entries = e;
                prow.rhs -= v * new.rhs;
                prow.combo = axpy(&prow.combo, -v, &new.combo);
            }
        }
        pivot_of[col] = Some(pivots.len());
        pivots.push(new);
    }

    let mut y_p = vec![0.0; num_moments];
    for p in &pivots {
        y_p[p.col] = p.rhs;
    }
    let free: Vec<usize> = (0..num_moments)
        .filter(|&i| pivot_of[i].is_none())
        .collect();
    let mut col_of = vec![usize::MAX; num_moments];
    for (j, &i) in free.iter().enumerate() {
        col_of[i] = j;
    }
    let mut t_cols: Vec<Sparse> = free.iter().map(|&i| vec![(i, 1.0)]).collect();
    for p in &pivots {
        for &(i, c) in &p.entries {
            if i != p.col {
                t_cols[col_of[i]].push((p.col, -c));
            }
        }
    }
    for col in t_cols.iter_mut() {
        col.sort_unstable_by_key(|e| e.0);
    }
    Presolved::Reduced(Reduction {
        num_moments,
        y_p,
        free,
        t_cols,
        pivots,
        dropped,
    })
}

fn inconsistent(combo: Sparse, rhs: f64, num_rows: usize) -> Presolved {
    let mut multipliers = vec![0.0; num_rows];
    for (r, c) in combo {
        multipliers[r] = -c / rhs;
    }
    Presolved::Inconsistent {
        multipliers,
        gap: rhs.abs(),
    }
}
