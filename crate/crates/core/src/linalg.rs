//! Small dense row reduction used by the recovery audit and the grouping gate.
//!
//! Matrices here are at most a few dozen rows and columns, so plain
//! Gauss-Jordan elimination with partial pivoting is enough.

/// Pivots with magnitude at or below this are treated as zero.
pub const PIVOT_TOL: f64 = 1e-10;

/// Reduced row echelon form of a matrix, possibly carrying augmented columns.
#[derive(Debug, Clone)]
pub struct Echelon {
    pub rows: Vec<Vec<f64>>,
    /// Pivot column of each of the first `rank` rows.
    pub pivots: Vec<usize>,
    /// Number of leading columns that were eligible as pivots.
    pub n_vars: usize,
}

impl Echelon {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// One basis vector per free column: `v[free] = 1`, pivots solved for.
    pub fn nullspace_basis(&self) -> Vec<Vec<f64>> {
        let mut is_pivot = vec![false; self.n_vars];
        for &p in &self.pivots {
            is_pivot[p] = true;
        }
        (0..self.n_vars)
            .filter(|&c| !is_pivot[c])
            .map(|free| {
                let mut v = vec![0.0; self.n_vars];
                v[free] = 1.0;
                for (r, &p) in self.pivots.iter().enumerate() {
                    v[p] = -self.rows[r][free];
                }
                v
            })
            .collect()
    }
}

/// Gauss-Jordan elimination; pivots are searched only in the first `n_vars` columns,
/// every column (including augmented ones) is eliminated.
pub fn rref(mut rows: Vec<Vec<f64>>, n_vars: usize, tol: f64) -> Echelon {
    let n_rows = rows.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..n_vars {
        if r == n_rows {
            break;
        }
        let (best, best_abs) = (r..n_rows)
            .map(|i| (i, rows[i][c].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_abs <= tol {
            for row in rows.iter_mut().skip(r) {
                row[c] = 0.0;
            }
            continue;
        }
        rows.swap(r, best);
        let inv = 1.0 / rows[r][c];
        for v in rows[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c];
            if factor != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    Echelon { rows, pivots, n_vars }
}

pub fn rank(rows: Vec<Vec<f64>>) -> usize {
    let n_vars = rows.first().map_or(0, |r| r.len());
    rref(rows, n_vars, PIVOT_TOL).rank()
}
