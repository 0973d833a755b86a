//! Desk-scale learning tasks with known structure.
//!
//! * `Quadratic`: least squares on synthetic linear data. The objective is the
//!   quadratic `½wᵀAw − bᵀw + c` with `A = XᵀX/n`, so `w* = A⁻¹b` and the
//!   strong-convexity and smoothness constants are the extreme eigenvalues of `A`.
//! * `Logistic`: softmax regression on Gaussian class clusters with a ridge term.
//! * `TinyDigits`: softmax regression on procedurally drawn 8×8 digit glyphs.
//!
//! Shards are disjoint slices of the training set: shuffled for IID, sorted by
//! label (or target value) for non-IID.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DsflError, Result};
use crate::model::{l2_dist_sq, ModelVector};

/// Ridge strength used by classification tasks unless configured otherwise.
pub const DEFAULT_L2_REG: f64 = 1e-3;

/// Supervision attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major samples with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(DsflError::Shape {
                expected: features.len(),
                actual: targets.len(),
            });
        }
        if let Some(first) = features.first() {
            if let Some(bad) = features.iter().find(|r| r.len() != first.len()) {
                return Err(DsflError::Shape {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Dataset { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Class(v) => Some(v),
            Targets::Real(_) => None,
        }
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Real(v) => Targets::Real(indices.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(indices.iter().map(|&i| v[i]).collect()),
        };
        Dataset { features, targets }
    }

    /// Reads `feature,…,feature,label` rows. A first row that does not parse
    /// as numbers is taken as a header.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(DsflError::invalid(format!("csv row {}: {e}", line + 1)));
                }
            };
            if values.len() < 2 {
                return Err(DsflError::invalid(format!(
                    "csv row {} needs at least one feature and a label",
                    line + 1
                )));
            }
            let label = values[values.len() - 1];
            if label < 0.0 || label.fract() != 0.0 {
                return Err(DsflError::invalid(format!(
                    "csv row {}: label {label} is not a class index",
                    line + 1
                )));
            }
            labels.push(label as usize);
            features.push(values[..values.len() - 1].to_vec());
        }
        if features.is_empty() {
            return Err(DsflError::invalid("csv file holds no samples"));
        }
        Dataset::new(features, Targets::Class(labels))
    }
}

/// Per-sample loss family.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `½(xᵀw − y)²`.
    LeastSquares { n_features: usize },
    /// Cross-entropy of a softmax over `classes` affine scores, plus `½λ‖w‖²`.
    /// Parameters are laid out class by class: `d` weights then one bias.
    Softmax {
        n_features: usize,
        classes: usize,
        l2_reg: f64,
    },
}

impl Objective {
    pub fn param_dim(&self) -> usize {
        match *self {
            Objective::LeastSquares { n_features } => n_features,
            Objective::Softmax { n_features, classes, .. } => classes * (n_features + 1),
        }
    }

    /// Mean loss and exact gradient over `batch` (indices into `data`).
    pub fn loss_and_grad(&self, data: &Dataset, w: &ModelVector, batch: &[usize]) -> Result<(f64, ModelVector)> {
        if w.dim() != self.param_dim() {
            return Err(DsflError::Shape {
                expected: self.param_dim(),
                actual: w.dim(),
            });
        }
        if batch.is_empty() {
            return Err(DsflError::invalid("empty batch"));
        }
        let w = w.as_slice();
        let mut grad = vec![0.0; w.len()];
        let mut loss = 0.0;
        let inv = 1.0 / batch.len() as f64;
        match (self, &data.targets) {
            (Objective::LeastSquares { .. }, Targets::Real(y)) => {
                for &i in batch {
                    let x = &data.features[i];
                    let r = dot(x, w) - y[i];
                    loss += 0.5 * r * r;
                    for (g, xv) in grad.iter_mut().zip(x) {
                        *g += r * xv;
                    }
                }
                loss *= inv;
                grad.iter_mut().for_each(|g| *g *= inv);
            }
            (
                Objective::Softmax {
                    n_features,
                    classes,
                    l2_reg,
                },
                Targets::Class(labels),
            ) => {
                let stride = n_features + 1;
                let mut probs = vec![0.0; *classes];
                for &i in batch {
                    let x = &data.features[i];
                    let y = labels[i];
                    if y >= *classes {
                        return Err(DsflError::invalid(format!("label {y} outside {classes} classes")));
                    }
                    softmax_scores(w, x, *classes, &mut probs);
                    let z_y = probs[y];
                    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut norm = 0.0;
                    for p in probs.iter_mut() {
                        *p = (*p - max).exp();
                        norm += *p;
                    }
                    loss += norm.ln() + max - z_y;
                    for (c, p) in probs.iter().enumerate() {
                        let coeff = p / norm - if c == y { 1.0 } else { 0.0 };
                        let row = &mut grad[c * stride..(c + 1) * stride];
                        for (g, xv) in row.iter_mut().zip(x) {
                            *g += coeff * xv;
                        }
                        row[*n_features] += coeff;
                    }
                }
                loss *= inv;
                grad.iter_mut().for_each(|g| *g *= inv);
                loss += 0.5 * l2_reg * dot(w, w);
                for (g, wv) in grad.iter_mut().zip(w) {
                    *g += l2_reg * wv;
                }
            }
            _ => return Err(DsflError::invalid("objective does not match dataset targets")),
        }
        Ok((loss, ModelVector::new(grad)?))
    }

    /// Predicted class for each sample; `None` for regression.
    pub fn predict(&self, data: &Dataset, w: &ModelVector) -> Option<Vec<usize>> {
        match *self {
            Objective::LeastSquares { .. } => None,
            Objective::Softmax { classes, .. } => {
                let mut scores = vec![0.0; classes];
                Some(
                    data.features
                        .iter()
                        .map(|x| {
                            softmax_scores(w.as_slice(), x, classes, &mut scores);
                            argmax(&scores)
                        })
                        .collect(),
                )
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_scores(w: &[f64], x: &[f64], classes: usize, out: &mut [f64]) {
    let stride = x.len() + 1;
    for (c, o) in out.iter_mut().enumerate().take(classes) {
        let row = &w[c * stride..(c + 1) * stride];
        *o = dot(&row[..x.len()], x) + row[x.len()];
    }
}

/// First index of the largest score.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Which synthetic task to generate.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    /// Linear data `y = xᵀw_true + noise·ε` with feature scales spread over `[√0.5, √2]`.
    Quadratic { dim: usize, samples: usize, noise: f64 },
    /// Gaussian clusters, one per class, centres drawn with spread `separation`.
    Logistic {
        dim: usize,
        classes: usize,
        samples: usize,
        separation: f64,
        l2_reg: f64,
    },
    TinyDigits {
        samples: usize,
        pixel_noise: f64,
        l2_reg: f64,
    },
    /// User-supplied `features…,label` file; a quarter is held out for testing.
    Csv { path: String, l2_reg: f64 },
}

impl TaskSpec {
    /// Model dimension, when it is known without loading data.
    pub fn param_dim(&self) -> Option<usize> {
        match *self {
            TaskSpec::Quadratic { dim, .. } => Some(dim),
            TaskSpec::Logistic { dim, classes, .. } => Some(classes * (dim + 1)),
            TaskSpec::TinyDigits { .. } => Some(10 * 65),
            TaskSpec::Csv { .. } => None,
        }
    }
}

/// Evaluation of a model on a task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// `‖w − w*‖²` where the optimum is known.
    pub dist_to_opt: Option<f64>,
}

/// A sharded learning problem.
#[derive(Debug, Clone)]
pub struct Task {
    pub spec: TaskSpec,
    pub objective: Objective,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<Dataset>,
    pub w_star: Option<ModelVector>,
    /// Objective value at `w_star`.
    pub f_star: Option<f64>,
    /// Strong-convexity constant (exact for least squares, the ridge for softmax).
    pub mu: f64,
    /// Smoothness constant (exact for least squares, an upper bound for softmax).
    pub lip: f64,
}

/// Generates the task and splits its training set into `n_shards` shards.
pub fn make_task<R: Rng + ?Sized>(spec: &TaskSpec, n_shards: usize, iid: bool, rng: &mut R) -> Result<Task> {
    let (objective, train, test) = match spec {
        TaskSpec::Quadratic { dim, samples, noise } => {
            if *dim == 0 {
                return Err(DsflError::invalid("quadratic task needs dim ≥ 1"));
            }
            let scales: Vec<f64> = (0..*dim)
                .map(|j| {
                    let t = if *dim > 1 { j as f64 / (*dim - 1) as f64 } else { 0.5 };
                    (0.5 + 1.5 * t).sqrt()
                })
                .collect();
            let w_true: Vec<f64> = (0..*dim).map(|_| rng.sample(StandardNormal)).collect();
            let draw = |count: usize, rng: &mut R| {
                let mut xs = Vec::with_capacity(count);
                let mut ys = Vec::with_capacity(count);
                for _ in 0..count {
                    let x: Vec<f64> = scales.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
                    let eps: f64 = rng.sample(StandardNormal);
                    ys.push(dot(&x, &w_true) + noise * eps);
                    xs.push(x);
                }
                Dataset {
                    features: xs,
                    targets: Targets::Real(ys),
                }
            };
            let train = draw(*samples, rng);
            let test = draw((*samples / 4).max(1), rng);
            (Objective::LeastSquares { n_features: *dim }, train, test)
        }
        TaskSpec::Logistic {
            dim,
            classes,
            samples,
            separation,
            l2_reg,
        } => {
            if *classes < 2 || *dim == 0 {
                return Err(DsflError::invalid("logistic task needs dim ≥ 1 and at least 2 classes"));
            }
            let spread = separation / (*dim as f64).sqrt();
            let centres: Vec<Vec<f64>> = (0..*classes)
                .map(|_| (0..*dim).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let draw = |count: usize, rng: &mut R| {
                let mut labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
                labels.shuffle(rng);
                let features = labels
                    .iter()
                    .map(|&c| {
                        centres[c]
                            .iter()
                            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                Dataset {
                    features,
                    targets: Targets::Class(labels),
                }
            };
            let train = draw(*samples, rng);
            let test = draw((*samples / 4).max(*classes), rng);
            (
                Objective::Softmax {
                    n_features: *dim,
                    classes: *classes,
                    l2_reg: *l2_reg,
                },
                train,
                test,
            )
        }
        TaskSpec::TinyDigits {
            samples,
            pixel_noise,
            l2_reg,
        } => {
            let train = tiny_digits(*samples, *pixel_noise, rng);
            let test = tiny_digits((*samples / 4).max(10), *pixel_noise, rng);
            (
                Objective::Softmax {
                    n_features: 64,
                    classes: 10,
                    l2_reg: *l2_reg,
                },
                train,
                test,
            )
        }
        TaskSpec::Csv { path, l2_reg } => {
            let mut data = Dataset::from_csv_path(path)?;
            let classes = data.labels().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1)).max(2);
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(rng);
            let n_test = data.len() / 4;
            let test = data.subset(&order[..n_test]);
            data = data.subset(&order[n_test..]);
            (
                Objective::Softmax {
                    n_features: data.n_features(),
                    classes,
                    l2_reg: *l2_reg,
                },
                data,
                test,
            )
        }
    };
    build_task(spec.clone(), objective, train, test, n_shards, iid, rng)
}

fn build_task<R: Rng + ?Sized>(
    spec: TaskSpec,
    objective: Objective,
    train: Dataset,
    test: Dataset,
    n_shards: usize,
    iid: bool,
    rng: &mut R,
) -> Result<Task> {
    if n_shards == 0 || train.len() < n_shards {
        return Err(DsflError::invalid(format!(
            "{} training samples cannot fill {n_shards} shards",
            train.len()
        )));
    }
    let shards = split_shards(&train, n_shards, iid, rng);
    let (w_star, f_star, mu, lip) = match &objective {
        Objective::LeastSquares { n_features } => {
            let (a, b, c) = normal_equations(&train, *n_features);
            let chol = a
                .clone()
                .cholesky()
                .ok_or_else(|| DsflError::invalid("least-squares design is not positive definite"))?;
            let w = chol.solve(&b);
            let eig = a.clone().symmetric_eigen();
            let mu = eig.eigenvalues.min();
            let lip = eig.eigenvalues.max();
            let f = 0.5 * w.dot(&(&a * &w)) - b.dot(&w) + c;
            (Some(ModelVector::new(w.iter().copied().collect())?), Some(f), mu, lip)
        }
        Objective::Softmax { l2_reg, .. } => {
            let max_sq = train
                .features
                .iter()
                .map(|x| dot(x, x) + 1.0)
                .fold(0.0, f64::max);
            (None, None, *l2_reg, l2_reg + 0.5 * max_sq)
        }
    };
    Ok(Task {
        spec,
        objective,
        train,
        test,
        shards,
        w_star,
        f_star,
        mu,
        lip,
    })
}

/// `A = XᵀX/n`, `b = Xᵀy/n`, `c = ½·mean(y²)`.
fn normal_equations(data: &Dataset, d: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = data.len() as f64;
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    let mut c = 0.0;
    if let Targets::Real(y) = &data.targets {
        for (x, &yi) in data.features.iter().zip(y) {
            let xv = DVector::from_column_slice(x);
            a += &xv * xv.transpose();
            b += &xv * yi;
            c += 0.5 * yi * yi;
        }
    }
    (a / n, b / n, c / n)
}

fn split_shards<R: Rng + ?Sized>(data: &Dataset, n_shards: usize, iid: bool, rng: &mut R) -> Vec<Dataset> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    if !iid {
        match &data.targets {
            Targets::Class(l) => order.sort_by_key(|&i| l[i]),
            Targets::Real(y) => order.sort_by(|&a, &b| y[a].total_cmp(&y[b])),
        }
    }
    let base = data.len() / n_shards;
    let extra = data.len() % n_shards;
    let mut start = 0;
    (0..n_shards)
        .map(|s| {
            let len = base + usize::from(s < extra);
            let shard = data.subset(&order[start..start + len]);
            start += len;
            shard
        })
        .collect()
}

impl Task {
    pub fn param_dim(&self) -> usize {
        self.objective.param_dim()
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    /// Batch loss and gradient on one shard.
    pub fn loss_and_grad(&self, shard: usize, w: &ModelVector, batch: &[usize]) -> Result<(f64, ModelVector)> {
        let data = self
            .shards
            .get(shard)
            .ok_or_else(|| DsflError::invalid(format!("no shard {shard}")))?;
        self.objective.loss_and_grad(data, w, batch)
    }

    /// Full training objective `F(w)`.
    pub fn objective_value(&self, w: &ModelVector) -> Result<f64> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        Ok(self.objective.loss_and_grad(&self.train, w, &all)?.0)
    }

    /// Least squares reports the training objective and distance to the optimum;
    /// classification reports held-out loss and accuracy.
    pub fn evaluate(&self, w: &ModelVector) -> Result<Metrics> {
        match &self.objective {
            Objective::LeastSquares { .. } => {
                let loss = self.objective_value(w)?;
                let dist = match &self.w_star {
                    Some(ws) => Some(l2_dist_sq(w, ws)?),
                    None => None,
                };
                Ok(Metrics {
                    loss,
                    accuracy: None,
                    dist_to_opt: dist,
                })
            }
            Objective::Softmax { .. } => {
                let all: Vec<usize> = (0..self.test.len()).collect();
                let (loss, _) = self.objective.loss_and_grad(&self.test, w, &all)?;
                let preds = self.objective.predict(&self.test, w).unwrap_or_default();
                let labels = self.test.labels().unwrap_or_default();
                let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
                Ok(Metrics {
                    loss,
                    accuracy: Some(correct as f64 / labels.len().max(1) as f64),
                    dist_to_opt: None,
                })
            }
        }
    }
}

const GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..",
    ],
    [
        "...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...", ".######.",
    ],
    [
        "..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".##.....", ".######.",
    ],
    [
        "..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".....##.", ".##..##.", "..####..",
    ],
    [
        "....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..", "....##..",
    ],
    [
        ".######.", ".##.....", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..",
    ],
    [
        "..####..", ".##.....", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..",
    ],
    [
        ".######.", ".....##.", "....##..", "....##..", "...##...", "...##...", "..##....", "..##....",
    ],
    [
        "..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", ".##..##.", "..####..",
    ],
    [
        "..####..", ".##..##.", ".##..##.", ".##..##.", "..#####.", ".....##.", ".....##.", "..####..",
    ],
];

/// Balanced samples of the ten glyphs, each shifted by up to one pixel and
/// overlaid with Gaussian pixel noise.
fn tiny_digits<R: Rng + ?Sized>(samples: usize, pixel_noise: f64, rng: &mut R) -> Dataset {
    let mut labels: Vec<usize> = (0..samples).map(|i| i % 10).collect();
    labels.shuffle(rng);
    let features = labels
        .iter()
        .map(|&c| {
            let dx: i32 = rng.gen_range(-1..=1);
            let dy: i32 = rng.gen_range(-1..=1);
            let mut img = vec![0.0; 64];
            for (r, row) in GLYPHS[c].iter().enumerate() {
                for (col, ch) in row.bytes().enumerate() {
                    let (tr, tc) = (r as i32 + dy, col as i32 + dx);
                    if ch == b'#' && (0..8).contains(&tr) && (0..8).contains(&tc) {
                        img[(tr * 8 + tc) as usize] = 1.0;
                    }
                }
            }
            for px in img.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *px += pixel_noise * e;
            }
            img
        })
        .collect();
    Dataset {
        features,
        targets: Targets::Class(labels),
    }
}
