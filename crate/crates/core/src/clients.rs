//! Participants: the honest local trainer and the adversary models.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DsflError, Result};
use crate::model::ModelVector;
use crate::tasks::{Dataset, Objective, Targets};

/// Fixed-point-free relabelling of class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipMap(Vec<usize>);

impl FlipMap {
    /// `map[c]` is the label written in place of `c`.
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        if n < 2 {
            return Err(DsflError::invalid("flip map needs at least two labels"));
        }
        let mut seen = vec![false; n];
        for (c, &t) in map.iter().enumerate() {
            if t >= n || seen[t] {
                return Err(DsflError::invalid("flip map is not a permutation"));
            }
            if t == c {
                return Err(DsflError::invalid(format!("flip map leaves label {c} unchanged")));
            }
            seen[t] = true;
        }
        Ok(FlipMap(map))
    }

    /// `y → (y + 1) mod classes`.
    pub fn cyclic(classes: usize) -> Result<Self> {
        FlipMap::new((0..classes).map(|c| (c + 1) % classes).collect())
    }

    pub fn apply(&self, label: usize) -> Option<usize> {
        self.0.get(label).copied()
    }

    pub fn n_labels(&self) -> usize {
        self.0.len()
    }
}

/// What a Byzantine participant does to its update.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryKind {
    Honest,
    /// Submits `q·w` for the honestly trained `w`, `q < 0`.
    Inversion { q: f64 },
    /// Skips training and submits pure `N(0, noise_std²)` noise.
    FreeRider { noise_std: f64 },
    /// Trains on relabelled data. `scale`, when set, multiplies the trained
    /// model before submission.
    LabelFlip { flip_map: FlipMap, scale: Option<f64> },
}

/// Adversary behaviour and the participant ids that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarySpec {
    pub kind: AdversaryKind,
    pub members: BTreeSet<usize>,
    /// Redraw the adversarial subset among active participants every round.
    pub resample_each_round: bool,
}

impl AdversarySpec {
    pub fn honest() -> Self {
        AdversarySpec {
            kind: AdversaryKind::Honest,
            members: BTreeSet::new(),
            resample_each_round: false,
        }
    }

    pub fn new(kind: AdversaryKind, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let spec = AdversarySpec {
            kind,
            members: members.into_iter().collect(),
            resample_each_round: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            AdversaryKind::Inversion { q } if !(q.is_finite() && *q < 0.0) => {
                Err(DsflError::invalid(format!("inversion factor must be negative, got {q}")))
            }
            AdversaryKind::FreeRider { noise_std } if !(noise_std.is_finite() && *noise_std >= 0.0) => Err(
                DsflError::invalid(format!("free-rider noise must be nonnegative, got {noise_std}")),
            ),
            AdversaryKind::LabelFlip { scale: Some(s), .. } if !s.is_finite() => {
                Err(DsflError::invalid("label-flip scale must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_adversary(&self, id: usize) -> bool {
        !matches!(self.kind, AdversaryKind::Honest) && self.members.contains(&id)
    }
}

/// Mini-batch SGD from `w0` over `shard`: `w ← w − η∇L(w, batch)`, reshuffling every epoch.
pub fn local_train<R: Rng + ?Sized>(
    objective: &Objective,
    shard: &Dataset,
    w0: &ModelVector,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<ModelVector> {
    if shard.is_empty() {
        return Err(DsflError::invalid("cannot train on an empty shard"));
    }
    if epochs == 0 || batch_size == 0 {
        return Err(DsflError::invalid("epochs and batch size must be at least 1"));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(DsflError::invalid(format!("learning rate must be nonnegative, got {lr}")));
    }
    let mut w = w0.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(batch_size) {
            let (_, grad) = objective.loss_and_grad(shard, &w, batch)?;
            let stepped: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(grad.as_slice())
                .map(|(wi, gi)| wi - lr * gi)
                .collect();
            w = ModelVector::new(stepped)
                .map_err(|_| DsflError::invalid("local training diverged to a non-finite model"))?;
        }
    }
    Ok(w)
}

/// Applies the adversary's transformation to an honestly trained model.
/// Label flipping acts on the training data, so only its optional scale applies here.
pub fn corrupt_update<R: Rng + ?Sized>(w_honest: &ModelVector, kind: &AdversaryKind, rng: &mut R) -> Result<ModelVector> {
    match kind {
        AdversaryKind::Honest => Ok(w_honest.clone()),
        AdversaryKind::Inversion { q } => Ok(w_honest.scale(*q)),
        AdversaryKind::FreeRider { noise_std } => {
            let normal = Normal::new(0.0, *noise_std).map_err(|e| DsflError::invalid(e.to_string()))?;
            ModelVector::new((0..w_honest.dim()).map(|_| normal.sample(rng)).collect())
        }
        AdversaryKind::LabelFlip { scale, .. } => Ok(match scale {
            Some(s) => w_honest.scale(*s),
            None => w_honest.clone(),
        }),
    }
}

/// Replaces every label through `flip_map`; features are untouched.
pub fn flip_labels(shard: &Dataset, flip_map: &FlipMap) -> Result<Dataset> {
    let labels = shard
        .labels()
        .ok_or_else(|| DsflError::invalid("label flipping needs a classification shard"))?;
    let flipped = labels
        .iter()
        .map(|&l| {
            flip_map
                .apply(l)
                .ok_or_else(|| DsflError::invalid(format!("label {l} outside the flip map")))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(shard.features.clone(), Targets::Class(flipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_task, TaskSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    fn one_d_quadratic() -> (Objective, Dataset) {
        // F(w) = ½(w − 3)².
        let data = Dataset::new(vec![vec![1.0]], Targets::Real(vec![3.0])).unwrap();
        (Objective::LeastSquares { n_features: 1 }, data)
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (obj, data) = one_d_quadratic();
        let w0 = mv(&[1.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(local_train(&obj, &data, &w0, 3, 1, 0.0, &mut rng).unwrap(), w0);
    }

    #[test]
    fn single_step_on_one_d_quadratic() {
        let (obj, data) = one_d_quadratic();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = local_train(&obj, &data, &mv(&[0.0]), 1, 1, 0.1, &mut rng).unwrap();
        assert!((w.as_slice()[0] - 0.3).abs() < 1e-15);

        // Same step from a central-difference gradient.
        let f = |w: f64| 0.5 * (w - 3.0) * (w - 3.0);
        let h = 1e-6;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!((w.as_slice()[0] - (0.0 - 0.1 * fd)).abs() < 1e-8);
    }

    #[test]
    fn bad_training_arguments() {
        let (obj, data) = one_d_quadratic();
        let empty = Dataset::new(vec![], Targets::Real(vec![])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w0 = mv(&[0.0]);
        assert!(local_train(&obj, &empty, &w0, 1, 1, 0.1, &mut rng).is_err());
        assert!(local_train(&obj, &data, &w0, 0, 1, 0.1, &mut rng).is_err());
        assert!(local_train(&obj, &data, &w0, 1, 0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn identical_shards_and_seeds_give_identical_models() {
        let spec = TaskSpec::Quadratic {
            dim: 3,
            samples: 60,
            noise: 0.2,
        };
        let task = make_task(&spec, 3, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let w0 = ModelVector::zeros(3);
        let a = local_train(&task.objective, &task.shards[0], &w0, 2, 4, 0.05, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = local_train(&task.objective, &task.shards[0], &w0, 2, 4, 0.05, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inversion_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kind = AdversaryKind::Inversion { q: -1.0 };
        let w = mv(&[1.0, -2.0]);
        let once = corrupt_update(&w, &kind, &mut rng).unwrap();
        assert_eq!(once, mv(&[-1.0, 2.0]));
        assert_eq!(corrupt_update(&once, &kind, &mut rng).unwrap(), w);

        let scaled = corrupt_update(&w, &AdversaryKind::Inversion { q: -2.5 }, &mut rng).unwrap();
        assert_eq!(scaled.norm_l2(), 2.5 * w.norm_l2());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(AdversarySpec::new(AdversaryKind::Inversion { q: 1.0 }, [0]).is_err());
        assert!(AdversarySpec::new(AdversaryKind::FreeRider { noise_std: -1.0 }, [0]).is_err());
        assert!(FlipMap::new(vec![0, 1]).is_err());
        assert!(FlipMap::new(vec![1, 1]).is_err());
        assert!(FlipMap::new(vec![1, 0]).is_ok());
    }

    #[test]
    fn free_rider_ignores_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let kind = AdversaryKind::FreeRider { noise_std: 1.0 };
        let draws = 1000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut n = 0.0;
        for _ in 0..draws {
            let honest = mv(&(0..4).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>());
            let out = corrupt_update(&honest, &kind, &mut rng).unwrap();
            for (x, y) in honest.as_slice().iter().zip(out.as_slice()) {
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
                n += 1.0;
            }
        }
        let cov = sxy / n - (sx / n) * (sy / n);
        let rho = cov / ((sxx / n - (sx / n).powi(2)).sqrt() * (syy / n - (sy / n).powi(2)).sqrt());
        assert!(rho.abs() < 0.1, "correlation {rho}");
        let mean = sy / n;
        assert!(mean.abs() < 3.0 * 1.0 / n.sqrt(), "mean {mean}");
        let var = syy / n - mean * mean;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn binary_flip_swaps_counts_and_is_involution() {
        let data = Dataset::new(vec![vec![0.0]; 5], Targets::Class(vec![0, 0, 0, 1, 1])).unwrap();
        let map = FlipMap::new(vec![1, 0]).unwrap();
        let flipped = flip_labels(&data, &map).unwrap();
        let ones = flipped.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 3);
        assert_eq!(flipped.features, data.features);
        assert_eq!(flip_labels(&flipped, &map).unwrap(), data);
    }

    #[test]
    fn flip_rejects_unknown_labels() {
        let data = Dataset::new(vec![vec![0.0]], Targets::Class(vec![2])).unwrap();
        assert!(flip_labels(&data, &FlipMap::cyclic(2).unwrap()).is_err());
        let reg = Dataset::new(vec![vec![0.0]], Targets::Real(vec![1.0])).unwrap();
        assert!(flip_labels(&reg, &FlipMap::cyclic(2).unwrap()).is_err());
    }

    #[test]
    fn flipped_training_opposes_honest_update() {
        let spec = TaskSpec::Logistic {
            dim: 6,
            classes: 2,
            samples: 400,
            separation: 3.0,
            l2_reg: 1e-3,
        };
        let task = make_task(&spec, 4, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let shard = &task.shards[0];
        let flipped = flip_labels(shard, &FlipMap::cyclic(2).unwrap()).unwrap();
        let w0 = ModelVector::zeros(task.param_dim());
        let honest = local_train(&task.objective, shard, &w0, 5, 10, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let poisoned = local_train(&task.objective, &flipped, &w0, 5, 10, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cos = honest.dot(&poisoned).unwrap() / (honest.norm_l2() * poisoned.norm_l2());
        assert!(cos < -0.5, "cosine {cos}");
    }
}
