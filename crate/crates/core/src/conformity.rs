//! Conformity measures: the scoring interface and the Gaussian-kernel measure.
//!
//! The kernel measure scores an observation (x, y) against a reference bag by
//! the kernel-weighted frequency of its own label among the reference labels,
//! with weights exp(-rho * ||x - x'||^2). Large rho makes the measure local
//! (nearest-neighbor-like), rho = 0 degenerates to the raw label frequency.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::dataset::{Dataset, Observation, ObjectVector};

/// Errors from conformity scoring.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum ConformityError {
    /// The reference dataset is empty, so no weight can be accumulated.
    #[error("conformity reference dataset is empty")]
    EmptyReference,
    /// The bandwidth parameter is negative, NaN, or infinite.
    #[error("kernel parameter rho = {rho} is not a finite nonnegative number")]
    InvalidRho { rho: f64 },
}

/// A scoring rule mapping (observation, reference bag) to a real conformity
/// score. Implementations must be pure: same inputs, same output.
pub trait ConformityMeasure {
    fn score(&self, obs: &Observation, reference: &Dataset) -> Result<f64, ConformityError>;
}

/// Squared Euclidean distance between two unit vectors, computed as
/// 2 - 2 * <a, b> and clamped below at 0 against rounding.
pub fn squared_distance(a: &ObjectVector, b: &ObjectVector) -> f64 {
    (2.0 - 2.0 * a.dot(b)).max(0.0)
}

/// Precomputed pairwise squared distances between a pool of object vectors.
///
/// Distances do not depend on rho, so one cache serves every grid point and
/// every criterion of a replication. Vectors are keyed by their shared
/// storage address; the cache holds a clone of each vector, which keeps the
/// keys stable for its whole lifetime. Lookups for unknown vectors miss and
/// the caller falls back to direct computation.
#[derive(Debug)]
pub struct DistanceCache {
    index: HashMap<usize, usize>,
    distances: Vec<f64>,
    n: usize,
    // Holds the keyed allocations alive; never read after construction.
    _pool: Vec<ObjectVector>,
}

impl DistanceCache {
    /// Builds the full pairwise matrix over the distinct vectors of `objects`
    /// (distinct by storage address; clones collapse to one entry).
    pub fn build(objects: &[ObjectVector]) -> Self {
        let mut pool: Vec<ObjectVector> = Vec::new();
        let mut index = HashMap::new();
        for object in objects {
            index.entry(object.ptr_id()).or_insert_with(|| {
                pool.push(object.clone());
                pool.len() - 1
            });
        }
        let n = pool.len();
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            distances[i * n + i] = squared_distance(&pool[i], &pool[i]);
            for j in (i + 1)..n {
                let d = squared_distance(&pool[i], &pool[j]);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Self {
            index,
            distances,
            n,
            _pool: pool,
        }
    }

    /// Number of distinct vectors in the cache.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn get(&self, a: &ObjectVector, b: &ObjectVector) -> Option<f64> {
        let i = *self.index.get(&a.ptr_id())?;
        let j = *self.index.get(&b.ptr_id())?;
        Some(self.distances[i * self.n + j])
    }
}

/// The Gaussian-kernel conformity measure Q_rho.
#[derive(Debug, Clone)]
pub struct KernelConformity {
    rho: f64,
    cache: Option<Arc<DistanceCache>>,
}

impl KernelConformity {
    /// A measure without a distance cache; distances are computed on the fly.
    pub fn new(rho: f64) -> Result<Self, ConformityError> {
        Self::with_optional_cache(rho, None)
    }

    /// A measure backed by a shared distance cache.
    pub fn with_cache(rho: f64, cache: Arc<DistanceCache>) -> Result<Self, ConformityError> {
        Self::with_optional_cache(rho, Some(cache))
    }

    fn with_optional_cache(
        rho: f64,
        cache: Option<Arc<DistanceCache>>,
    ) -> Result<Self, ConformityError> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(ConformityError::InvalidRho { rho });
        }
        Ok(Self { rho, cache })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn distance(&self, a: &ObjectVector, b: &ObjectVector) -> f64 {
        match &self.cache {
            Some(cache) => cache.get(a, b).unwrap_or_else(|| squared_distance(a, b)),
            None => squared_distance(a, b),
        }
    }

    /// Kernel-weighted frequency of `obs.label()` in `reference`.
    ///
    /// Weights are stabilized by shifting all squared distances by their
    /// minimum over the reference before exponentiation. The shift rescales
    /// numerator and denominator by the same positive factor, so the ratio
    /// is unchanged, while the maximal weight becomes exactly 1. This keeps
    /// the denominator >= 1 even at rho = e^8.5, where raw weights underflow
    /// to zero and the direct formula degenerates to 0/0.
    pub fn kernel_score(
        &self,
        obs: &Observation,
        reference: &Dataset,
    ) -> Result<f64, ConformityError> {
        if reference.is_empty() {
            return Err(ConformityError::EmptyReference);
        }
        let x = obs.object();
        let mut dists = Vec::with_capacity(reference.size());
        let mut d_min = f64::INFINITY;
        for z in reference.iter() {
            let d = self.distance(x, z.object());
            if d < d_min {
                d_min = d;
            }
            dists.push(d);
        }
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for (z, d) in reference.iter().zip(&dists) {
            let w = (-self.rho * (d - d_min)).exp();
            denominator += w;
            if z.label() == obs.label() {
                numerator += w;
            }
        }
        Ok(numerator / denominator)
    }
}

impl ConformityMeasure for KernelConformity {
    fn score(&self, obs: &Observation, reference: &Dataset) -> Result<f64, ConformityError> {
        self.kernel_score(obs, reference)
    }
}

/// The one-parameter family rho -> Q_rho, optionally sharing a distance
/// cache across all measures it produces.
#[derive(Debug, Clone, Default)]
pub struct KernelFamily {
    cache: Option<Arc<DistanceCache>>,
}

impl KernelFamily {
    /// A family without caching.
    pub fn new() -> Self {
        Self::default()
    }

    /// A family whose measures share `cache`.
    pub fn with_cache(cache: Arc<DistanceCache>) -> Self {
        Self { cache: Some(cache) }
    }

    /// The measure at a given bandwidth parameter.
    pub fn measure(&self, rho: f64) -> Result<KernelConformity, ConformityError> {
        KernelConformity::with_optional_cache(rho, self.cache.clone())
    }
}
