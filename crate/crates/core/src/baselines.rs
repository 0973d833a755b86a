//! Comparison aggregators and the original two-server (LSFL) round whose
//! per-participant distance report the attack in `analysis` consumes.

use rand::Rng;

use crate::error::{DsflError, Result};
use crate::grouping::median;
use crate::model::{check_dims, l2_dist_sq, mean_vectors, split_update, sum_vectors, ModelVector, SharePair};

fn check_batch(updates: &[ModelVector]) -> Result<()> {
    let first = updates
        .first()
        .ok_or_else(|| DsflError::invalid("no updates to aggregate"))?;
    for u in updates {
        check_dims(first, u)?;
    }
    Ok(())
}

/// Applies `f` to the column of values at each coordinate.
fn per_coordinate(updates: &[ModelVector], mut f: impl FnMut(&mut [f64]) -> f64) -> Result<ModelVector> {
    check_batch(updates)?;
    let dim = updates[0].dim();
    let mut column = vec![0.0; updates.len()];
    let out = (0..dim)
        .map(|c| {
            for (slot, u) in column.iter_mut().zip(updates) {
                *slot = u.as_slice()[c];
            }
            f(&mut column)
        })
        .collect();
    Ok(ModelVector::from_raw(out))
}

pub fn fedavg(updates: &[ModelVector]) -> Result<ModelVector> {
    check_batch(updates)?;
    mean_vectors(updates)
}

pub fn coord_median(updates: &[ModelVector]) -> Result<ModelVector> {
    per_coordinate(updates, |col| median(col))
}

/// Per-coordinate mean after dropping `⌊trim_frac·n⌋` values from each tail.
pub fn trimmed_mean(updates: &[ModelVector], trim_frac: f64) -> Result<ModelVector> {
    if !(0.0..0.5).contains(&trim_frac) {
        return Err(DsflError::invalid(format!("trim fraction must be in [0, 0.5), got {trim_frac}")));
    }
    let n = updates.len();
    let cut = (trim_frac * n as f64 + 1e-9).floor() as usize;
    if n <= 2 * cut {
        return Err(DsflError::invalid(format!("trimming {cut} from each tail leaves nothing of {n}")));
    }
    per_coordinate(updates, |col| {
        col.sort_by(f64::total_cmp);
        let kept = &col[cut..n - cut];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

/// Index chosen by Krum: smallest sum of squared distances to the `n − f − 2`
/// nearest other updates, lowest index on ties.
pub fn krum_select(updates: &[ModelVector], f: usize) -> Result<usize> {
    check_batch(updates)?;
    let n = updates.len();
    if n < 2 * f + 3 {
        return Err(DsflError::invalid(format!("krum with f = {f} needs at least {} updates, got {n}", 2 * f + 3)));
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = l2_dist_sq(&updates[i], &updates[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let neighbours = n - f - 2;
    let mut best = (0, f64::INFINITY);
    for (i, row) in dist.iter().enumerate() {
        let mut others: Vec<f64> = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).collect();
        others.sort_by(f64::total_cmp);
        let score: f64 = others[..neighbours].iter().sum();
        if score < best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

pub fn krum(updates: &[ModelVector], f: usize) -> Result<ModelVector> {
    Ok(updates[krum_select(updates, f)?].clone())
}

/// Everything one LSFL round exposes.
#[derive(Debug, Clone)]
pub struct LsflRound {
    pub global: ModelVector,
    /// `d_i = ½w_i² − w̄`, one vector per participant, sent from SP to TP.
    pub report: Vec<ModelVector>,
    pub shares: Vec<SharePair>,
}

/// Original two-server round: shares to TP and SP, `z₁ = Σw¹`, `z₂ = Σw²`,
/// `w̄ = (z₁ + z₂)/2N`, and the vector-valued distance report.
pub fn lsfl_round<R: Rng + ?Sized>(updates: &[ModelVector], noise_std: f64, rng: &mut R) -> Result<LsflRound> {
    check_batch(updates)?;
    let shares = updates
        .iter()
        .map(|w| split_update(w, noise_std, rng))
        .collect::<Result<Vec<_>>>()?;
    let z1 = sum_vectors(shares.iter().map(|p| &p.share1))?;
    let z2 = sum_vectors(shares.iter().map(|p| &p.share2))?;
    let global = z1.add(&z2)?.scale(0.5 / updates.len() as f64);
    let report = shares
        .iter()
        .map(|p| p.share2.scale(0.5).sub(&global))
        .collect::<Result<Vec<_>>>()?;
    Ok(LsflRound { global, report, shares })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    fn scalars(xs: &[f64]) -> Vec<ModelVector> {
        xs.iter().map(|&x| mv(&[x])).collect()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<ModelVector> {
        (0..n)
            .map(|_| mv(&(0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg(&scalars(&[1.0, 3.0])).unwrap(), mv(&[2.0]));
        assert_eq!(fedavg(&scalars(&[4.5])).unwrap(), mv(&[4.5]));
        assert!(fedavg(&[]).is_err());
        assert!(fedavg(&[mv(&[1.0]), mv(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn fedavg_matches_naive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = random_set(&mut rng, 7, 5);
        let got = fedavg(&set).unwrap();
        for c in 0..5 {
            let mut s = 0.0;
            for u in &set {
                s += u.as_slice()[c];
            }
            assert_eq!(got.as_slice()[c], s * (1.0 / 7.0));
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(coord_median(&scalars(&[1.0, 2.0, 100.0])).unwrap(), mv(&[2.0]));
        assert_eq!(coord_median(&scalars(&[5.0, 5.0, 5.0, 5.0])).unwrap(), mv(&[5.0]));
        assert_eq!(coord_median(&scalars(&[4.0, 1.0, 3.0, 2.0])).unwrap(), mv(&[2.5]));
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..12 {
            let set = random_set(&mut rng, n, 3);
            let got = coord_median(&set).unwrap();
            for c in 0..3 {
                let mut col: Vec<f64> = set.iter().map(|u| u.as_slice()[c]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let want = if n % 2 == 1 { col[n / 2] } else { (col[n / 2 - 1] + col[n / 2]) / 2.0 };
                assert_eq!(got.as_slice()[c], want);
            }
        }
    }

    #[test]
    fn trimmed_mean_examples() {
        let set = scalars(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(trimmed_mean(&set, 0.2).unwrap(), mv(&[3.0]));
        assert_eq!(trimmed_mean(&set, 0.0).unwrap(), fedavg(&set).unwrap());
        assert!(trimmed_mean(&set, 0.5).is_err());
        assert!(trimmed_mean(&scalars(&[1.0, 2.0]), 0.49).is_ok());
    }

    #[test]
    fn krum_picks_cluster_member() {
        let set = scalars(&[0.0, 0.1, -0.1, 0.05, 50.0]);
        let chosen = krum_select(&set, 1).unwrap();
        assert!(chosen < 4);

        // Brute-force scores with n − f − 2 = 2 neighbours.
        let score = |i: usize| {
            let mut d: Vec<f64> = (0..5)
                .filter(|&j| j != i)
                .map(|j| (set[i].as_slice()[0] - set[j].as_slice()[0]).powi(2))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[0] + d[1]
        };
        let oracle = (0..5).min_by(|&a, &b| score(a).partial_cmp(&score(b)).unwrap()).unwrap();
        assert_eq!(chosen, oracle);
    }

    #[test]
    fn krum_ties_and_bounds() {
        let same = scalars(&[2.0; 5]);
        assert_eq!(krum_select(&same, 1).unwrap(), 0);
        assert!(krum(&scalars(&[1.0; 4]), 1).is_err());
    }

    #[test]
    fn krum_never_selects_far_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut set: Vec<_> = (0..6)
                .map(|_| mv(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let at = rng.gen_range(0..7);
            set.insert(at, mv(&[100.0; 4]));
            assert_ne!(krum_select(&set, 2).unwrap(), at);
        }
    }

    #[test]
    fn lsfl_honest_mean_and_report_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let updates = random_set(&mut rng, 10, 32);
        let round = lsfl_round(&updates, 20.0, &mut rng).unwrap();
        let mean = fedavg(&updates).unwrap();
        assert!(round.global.sub(&mean).unwrap().norm_inf() <= 1e-9 * (1.0 + mean.norm_inf()));
        for i in 1..10 {
            let lhs = round.report[i].sub(&round.report[0]).unwrap();
            let rhs = round.shares[i].share2.sub(&round.shares[0].share2).unwrap().scale(0.5);
            assert!(lhs.sub(&rhs).unwrap().norm_inf() <= 1e-12 * (1.0 + rhs.norm_inf()));
        }
    }
}
