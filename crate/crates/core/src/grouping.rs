//! Participant grouping and group-based deviation scoring.
//!
//! The trusted provider assigns participants to overlapping random groups
//! (the participant combination matrix, PCM). Group sums of both shares let
//! the service provider measure how far each group mean sits from the global
//! mean without seeing any individual update. Spreading those group distances
//! back over the members (the contributed participant group matrix, CPG)
//! gives every participant a score; the `k` participants whose score is
//! closest to the median are kept.

use rand::seq::index::sample;
use rand::Rng;

use crate::analysis::exposed_participants;
use crate::error::{DsflError, Result};
use crate::model::{l2_dist_sq, sum_vectors, ModelVector};

/// Draws a fresh matrix this many times before giving up on the privacy gate.
pub const PCM_MAX_ATTEMPTS: usize = 64;

/// Default number of members in every group except the all-participants group.
pub const DEFAULT_GROUP_SIZE: usize = 3;

/// Participant combination matrix, stored column-wise as member lists.
///
/// Group 0 always contains every participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pcm {
    n_participants: usize,
    group_size: usize,
    groups: Vec<Vec<usize>>,
}

impl Pcm {
    /// Builds a matrix from explicit proper groups (the all-participants group is
    /// prepended). Validates distinct in-range members, the group size and row coverage.
    pub fn from_groups(n_participants: usize, group_size: usize, proper_groups: Vec<Vec<usize>>) -> Result<Self> {
        if n_participants == 0 {
            return Err(DsflError::invalid("PCM needs at least one participant"));
        }
        if group_size == 0 || group_size > n_participants {
            return Err(DsflError::invalid(format!(
                "group size {group_size} outside 1..={n_participants}"
            )));
        }
        if proper_groups.is_empty() {
            return Err(DsflError::invalid("PCM needs at least one proper group"));
        }
        let mut covered = vec![false; n_participants];
        let mut groups = Vec::with_capacity(proper_groups.len() + 1);
        groups.push((0..n_participants).collect());
        for (j, mut members) in proper_groups.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            if members.len() != group_size {
                return Err(DsflError::invalid(format!(
                    "group {} has {} distinct members, expected {group_size}",
                    j + 1,
                    members.len()
                )));
            }
            if let Some(&bad) = members.iter().find(|&&p| p >= n_participants) {
                return Err(DsflError::invalid(format!("participant {bad} out of range")));
            }
            for &p in &members {
                covered[p] = true;
            }
            groups.push(members);
        }
        if let Some(p) = covered.iter().position(|c| !c) {
            return Err(DsflError::invalid(format!("participant {p} belongs to no proper group")));
        }
        Ok(Pcm {
            n_participants,
            group_size,
            groups,
        })
    }

    pub fn n_participants(&self) -> usize {
        self.n_participants
    }

    /// Total number of groups `m`, the all-participants group included.
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Sorted member list of group `j`.
    pub fn members(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn is_member(&self, participant: usize, group: usize) -> bool {
        self.groups[group].binary_search(&participant).is_ok()
    }

    /// Dense `N × m` 0/1 matrix.
    pub fn membership(&self) -> Vec<Vec<u8>> {
        let mut rows = vec![vec![0u8; self.n_groups()]; self.n_participants];
        for (j, members) in self.groups.iter().enumerate() {
            for &p in members {
                rows[p][j] = 1;
            }
        }
        rows
    }

    /// The group-sum linear system: one row per group, one column per participant.
    pub fn group_system(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|members| {
                let mut row = vec![0.0; self.n_participants];
                for &p in members {
                    row[p] = 1.0;
                }
                row
            })
            .collect()
    }
}

/// Contributed participant group matrix: group distances spread over members,
/// the all-participants group left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpg {
    /// `N × (m − 1)`; column `j` corresponds to group `j + 1`.
    pub entries: Vec<Vec<f64>>,
    pub row_sums: Vec<f64>,
}

/// Per-participant deviation scores and the chosen participants.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// `|row_sum − median|` for every participant.
    pub scores: Vec<f64>,
    pub median: f64,
    /// The `k` lowest scores, ordered by score then index.
    pub selected: Vec<usize>,
}

/// Group count from the expected share of Byzantine participants, in percent.
///
/// `m = ⌊(100 − byz_pct) / 10⌋ − 1`, never below 2.
pub fn group_count(byz_pct: f64) -> Result<usize> {
    if !(0.0..100.0).contains(&byz_pct) {
        return Err(DsflError::invalid(format!(
            "Byzantine percentage must lie in [0, 100), got {byz_pct}"
        )));
    }
    // Nudge up so that e.g. 100 − 30.000000000000004 still floors to 6.
    let tens = ((100.0 - byz_pct) / 10.0 + 1e-9).floor() as i64;
    Ok((tens - 1).max(2) as usize)
}

/// `k = ⌊(1 − β)·N⌋`, at least 1.
pub fn choose_k(n: usize, beta: f64) -> usize {
    let k = ((1.0 - beta) * n as f64 + 1e-9).floor() as usize;
    k.clamp(1, n.max(1))
}

/// Samples a random PCM with `m − 1` proper groups of `group_size` members.
///
/// Columns are drawn uniformly; any participant left uncovered is swapped in
/// for a member that appears in more than one group. Draws that expose an
/// individual participant to linear recovery are rejected and redrawn.
pub fn build_pcm<R: Rng + ?Sized>(n: usize, m: usize, group_size: usize, rng: &mut R) -> Result<Pcm> {
    if group_size == 0 || group_size > n {
        return Err(DsflError::invalid(format!(
            "group size {group_size} must lie in 1..={n}"
        )));
    }
    if m < 2 {
        return Err(DsflError::invalid(format!("need at least 2 groups, got {m}")));
    }
    if (m - 1) * group_size < n {
        return Err(DsflError::invalid(format!(
            "{} groups of {group_size} cannot cover {n} participants",
            m - 1
        )));
    }
    for _ in 0..PCM_MAX_ATTEMPTS {
        let mut columns: Vec<Vec<usize>> = (1..m).map(|_| sample(rng, n, group_size).into_vec()).collect();
        repair_coverage(n, &mut columns, rng);
        let pcm = Pcm::from_groups(n, group_size, columns)?;
        if exposed_participants(&pcm).is_empty() {
            return Ok(pcm);
        }
    }
    Err(DsflError::invalid(format!(
        "no grouping of {n} participants into {m} groups of {group_size} hides every individual share"
    )))
}

fn repair_coverage<R: Rng + ?Sized>(n: usize, columns: &mut [Vec<usize>], rng: &mut R) {
    let mut counts = vec![0usize; n];
    for col in columns.iter() {
        for &p in col {
            counts[p] += 1;
        }
    }
    for r in 0..n {
        if counts[r] > 0 {
            continue;
        }
        let candidates: Vec<(usize, usize)> = columns
            .iter()
            .enumerate()
            .flat_map(|(j, col)| col.iter().enumerate().map(move |(pos, &p)| (j, pos, p)))
            .filter(|&(_, _, p)| counts[p] >= 2)
            .map(|(j, pos, _)| (j, pos))
            .collect();
        // Enough slots for everyone means some member is counted twice.
        let (j, pos) = candidates[rng.gen_range(0..candidates.len())];
        counts[columns[j][pos]] -= 1;
        columns[j][pos] = r;
        counts[r] = 1;
    }
}

/// Sums the given per-participant shares over every group.
pub fn group_share_sums(pcm: &Pcm, shares: &[ModelVector]) -> Result<Vec<ModelVector>> {
    if shares.len() != pcm.n_participants() {
        return Err(DsflError::Shape {
            expected: pcm.n_participants(),
            actual: shares.len(),
        });
    }
    (0..pcm.n_groups())
        .map(|j| sum_vectors(pcm.members(j).iter().map(|&p| &shares[p])))
        .collect()
}

/// Squared distance from the global mean to each group mean, the group mean
/// being reconstructed from both share sums: `(S¹ + S²) / (2|G|)`.
pub fn group_distances(
    global_mean: &ModelVector,
    group_sums1: &[ModelVector],
    group_sums2: &[ModelVector],
    group_sizes: &[usize],
) -> Result<Vec<f64>> {
    let m = group_sums1.len();
    for len in [group_sums2.len(), group_sizes.len()] {
        if len != m {
            return Err(DsflError::Shape { expected: m, actual: len });
        }
    }
    group_sums1
        .iter()
        .zip(group_sums2)
        .zip(group_sizes)
        .map(|((s1, s2), &size)| {
            if size == 0 {
                return Err(DsflError::invalid("group of size zero"));
            }
            let mean = s1.add(s2)?.scale(1.0 / (2.0 * size as f64));
            l2_dist_sq(global_mean, &mean)
        })
        .collect()
}

/// Fills every proper-group membership cell with that group's distance.
pub fn build_cpg(pcm: &Pcm, dists: &[f64]) -> Result<Cpg> {
    if dists.len() != pcm.n_groups() {
        return Err(DsflError::Shape {
            expected: pcm.n_groups(),
            actual: dists.len(),
        });
    }
    let mut entries = vec![vec![0.0; pcm.n_groups() - 1]; pcm.n_participants()];
    for (j, &d) in dists.iter().enumerate().skip(1) {
        for &p in pcm.members(j) {
            entries[p][j - 1] = d;
        }
    }
    let row_sums = entries.iter().map(|row| row.iter().sum()).collect();
    Ok(Cpg { entries, row_sums })
}

/// Median of a non-empty slice; the mean of the two middle values for even length.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Keeps the `k` participants whose CPG row sum is closest to the median row sum.
pub fn select_participants(cpg: &Cpg, k: usize) -> Result<SelectionResult> {
    let n = cpg.row_sums.len();
    if k == 0 || k > n {
        return Err(DsflError::invalid(format!("k = {k} outside 1..={n}")));
    }
    let median = median(&cpg.row_sums);
    let scores: Vec<f64> = cpg.row_sums.iter().map(|s| (s - median).abs()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(SelectionResult {
        scores,
        median,
        selected: order,
    })
}
