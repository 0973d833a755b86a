//! Executable security analysis.
//!
//! Two sides: the single-colluder reconstruction that breaks the per-participant
//! distance report of the original two-server scheme, and the audit showing that
//! group sums alone leave individual shares undetermined.

use crate::error::{DsflError, Result};
use crate::grouping::Pcm;
use crate::linalg::{rank, rref, PIVOT_TOL};
use crate::model::{check_dims, ModelVector};

/// Rebuilds participant `target`'s second share from the distance report and the
/// colluder's own second share: `w_t = 2(d_t − d_c) + w_c`.
pub fn reconstruct_share2(
    report: &[ModelVector],
    colluder_share2: &ModelVector,
    colluder: usize,
    target: usize,
) -> Result<ModelVector> {
    for idx in [colluder, target] {
        if idx >= report.len() {
            return Err(DsflError::invalid(format!(
                "participant index {idx} out of range for {} reports",
                report.len()
            )));
        }
    }
    check_dims(&report[colluder], colluder_share2)?;
    let diff = report[target].sub(&report[colluder])?;
    diff.scale(2.0).add(colluder_share2)
}

/// Second shares of every participant other than the colluder, in index order.
pub fn lsfl_reconstruct(
    report: &[ModelVector],
    colluder_share2: &ModelVector,
    colluder: usize,
) -> Result<Vec<ModelVector>> {
    if colluder >= report.len() {
        return Err(DsflError::invalid(format!(
            "colluder index {colluder} out of range for {} reports",
            report.len()
        )));
    }
    (0..report.len())
        .filter(|&i| i != colluder)
        .map(|i| reconstruct_share2(report, colluder_share2, colluder, i))
        .collect()
}

/// Full update from both shares, `½(w¹ + w²)`.
pub fn combine_shares(share1: &ModelVector, share2: &ModelVector) -> Result<ModelVector> {
    Ok(share1.add(share2)?.scale(0.5))
}

/// Rank of the group-sum system (`m` equations, `N` unknowns) and its nullspace dimension.
pub fn pcm_rank(pcm: &Pcm) -> (usize, usize) {
    let r = rank(pcm.group_system());
    (r, pcm.n_participants() - r)
}

/// Participants whose individual share is a linear combination of group sums,
/// i.e. whose unit vector lies in the row space of the group system.
pub fn exposed_participants(pcm: &Pcm) -> Vec<usize> {
    let system = pcm.group_system();
    let base = rank(system.clone());
    let n = pcm.n_participants();
    if base == n {
        return (0..n).collect();
    }
    (0..n)
        .filter(|&i| {
            let mut augmented = system.clone();
            let mut unit = vec![0.0; n];
            unit[i] = 1.0;
            augmented.push(unit);
            rank(augmented) == base
        })
        .collect()
}

/// Outcome of trying to recover individual shares from group sums.
#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryVerdict {
    /// Infinitely many share assignments fit; `witness` holds two of them.
    Ambiguous {
        nullspace_dim: usize,
        witness: (Vec<ModelVector>, Vec<ModelVector>),
    },
    /// The system pins down every share.
    Unique { recovered: Vec<ModelVector> },
}

impl RecoveryVerdict {
    pub fn is_ambiguous(&self) -> bool {
        matches!(self, RecoveryVerdict::Ambiguous { .. })
    }
}

/// Least-squares recovery of per-participant shares from group sums.
///
/// Solves the normal equations `AᵀA X = AᵀS`. With a nontrivial nullspace the
/// particular solution and that solution shifted along a unit-max-norm nullspace
/// vector are returned as the witness pair.
pub fn recovery_audit(pcm: &Pcm, group_sums: &[ModelVector]) -> Result<RecoveryVerdict> {
    let m = pcm.n_groups();
    let n = pcm.n_participants();
    if group_sums.len() != m {
        return Err(DsflError::Shape {
            expected: m,
            actual: group_sums.len(),
        });
    }
    let dim = group_sums[0].dim();
    for s in group_sums {
        check_dims(&group_sums[0], s)?;
    }
    let a = pcm.group_system();

    // [AᵀA | AᵀS], n rows.
    let normal: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n + dim];
            for g in 0..m {
                if a[g][i] == 0.0 {
                    continue;
                }
                for (j, cell) in row.iter_mut().enumerate().take(n) {
                    *cell += a[g][i] * a[g][j];
                }
                for (c, &s) in group_sums[g].as_slice().iter().enumerate() {
                    row[n + c] += a[g][i] * s;
                }
            }
            row
        })
        .collect();
    let ech = rref(normal, n, PIVOT_TOL);

    let mut solution = vec![vec![0.0; dim]; n];
    for (r, &p) in ech.pivots.iter().enumerate() {
        solution[p].copy_from_slice(&ech.rows[r][n..]);
    }
    let particular = solution
        .into_iter()
        .map(ModelVector::new)
        .collect::<Result<Vec<_>>>()?;

    let basis = ech.nullspace_basis();
    if basis.is_empty() {
        return Ok(RecoveryVerdict::Unique { recovered: particular });
    }
    let v = &basis[0];
    let max = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let shifted = particular
        .iter()
        .zip(v)
        .map(|(x, &vi)| {
            let delta = vi / max;
            ModelVector::new(x.as_slice().iter().map(|xc| xc + delta).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryVerdict::Ambiguous {
        nullspace_dim: basis.len(),
        witness: (particular, shifted),
    })
}

/// Largest absolute mismatch between the group sums implied by `assignment`
/// and the observed `group_sums`.
pub fn group_sum_residual(pcm: &Pcm, assignment: &[ModelVector], group_sums: &[ModelVector]) -> Result<f64> {
    let implied = crate::grouping::group_share_sums(pcm, assignment)?;
    let mut worst = 0.0f64;
    for (a, b) in implied.iter().zip(group_sums) {
        worst = worst.max(a.sub(b)?.norm_inf());
    }
    Ok(worst)
}
