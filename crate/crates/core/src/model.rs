//! Model vectors, two-server additive shares and distance primitives.
//!
//! A participant splits its update `w` into `w + ζ` and `w − ζ` with Gaussian
//! noise `ζ`. Either share alone is `w` buried under noise; the average of the
//! two recovers `w`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DsflError, Result};

/// Relative tolerance for share reconstruction, scaled by `1 + ‖w‖∞`.
pub const RECONSTRUCTION_RTOL: f64 = 1e-9;

/// Default standard deviation of the masking noise.
pub const DEFAULT_NOISE_STD: f64 = 20.0;

/// A flat, finite, non-empty parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    /// Wraps `values`, rejecting empty input and any NaN or infinite entry.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DsflError::invalid("model vector must have positive dimension"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DsflError::invalid(format!(
                "model vector entry {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(ModelVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "model vector must have positive dimension");
        ModelVector(vec![0.0; dim])
    }

    /// Internal constructor for results of arithmetic on finite inputs.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        ModelVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ModelVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &ModelVector) -> Result<ModelVector> {
        check_dims(self, other)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &ModelVector) -> Result<ModelVector> {
        check_dims(self, other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    pub fn scale(&self, factor: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &ModelVector) -> Result<()> {
        check_dims(self, other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    /// True when every coordinate agrees within `RECONSTRUCTION_RTOL·(1 + ‖other‖∞)`.
    pub fn approx_eq(&self, other: &ModelVector) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        let tol = RECONSTRUCTION_RTOL * (1.0 + other.norm_inf());
        self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= tol)
    }

    fn zip_with(&self, other: &ModelVector, f: impl Fn(f64, f64) -> f64) -> ModelVector {
        ModelVector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl TryFrom<Vec<f64>> for ModelVector {
    type Error = DsflError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ModelVector::new(values)
    }
}

pub(crate) fn check_dims(a: &ModelVector, b: &ModelVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DsflError::Shape {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// The two additive shares of one update and the noise scale that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SharePair {
    /// `w + ζ`, routed to the trusted provider.
    pub share1: ModelVector,
    /// `w − ζ`, routed to the service provider.
    pub share2: ModelVector,
    pub noise_std: f64,
}

/// Splits `w` into `(w + ζ, w − ζ)` with `ζ ~ N(0, noise_std²)` drawn per coordinate.
pub fn split_update<R: Rng + ?Sized>(w: &ModelVector, noise_std: f64, rng: &mut R) -> Result<SharePair> {
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(DsflError::invalid(format!(
            "noise_std must be finite and nonnegative, got {noise_std}"
        )));
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| DsflError::invalid(e.to_string()))?;
    let mut share1 = Vec::with_capacity(w.dim());
    let mut share2 = Vec::with_capacity(w.dim());
    for &v in w.as_slice() {
        let zeta = normal.sample(rng);
        share1.push(v + zeta);
        share2.push(v - zeta);
    }
    Ok(SharePair {
        share1: ModelVector::new(share1)?,
        share2: ModelVector::new(share2)?,
        noise_std,
    })
}

/// Recovers `½(share1 + share2)`.
pub fn reconstruct(pair: &SharePair) -> Result<ModelVector> {
    check_dims(&pair.share1, &pair.share2)?;
    Ok(pair.share1.zip_with(&pair.share2, |a, b| 0.5 * (a + b)))
}

/// Squared Euclidean distance.
pub fn l2_dist_sq(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum())
}

/// Coordinate-wise sum of a non-empty list of equal-dimension vectors.
pub fn sum_vectors<'a, I>(vs: I) -> Result<ModelVector>
where
    I: IntoIterator<Item = &'a ModelVector>,
{
    let mut iter = vs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| DsflError::invalid("cannot sum an empty list of vectors"))?;
    let mut acc = first.clone();
    for v in iter {
        acc.add_assign(v)?;
    }
    Ok(acc)
}

/// Coordinate-wise arithmetic mean.
pub fn mean_vectors(vs: &[ModelVector]) -> Result<ModelVector> {
    let sum = sum_vectors(vs)?;
    Ok(sum.scale(1.0 / vs.len() as f64))
}
