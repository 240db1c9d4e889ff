//! Shared test support: a brute-force oracle for every criterion, written
//! along an independent computational route, plus seeded random generators.
//!
//! The oracle evaluates the displayed formulas literally: squared distances
//! as explicit coordinate sums (not the inner-product identity), kernel
//! ratios over exponents taken relative to their maximum, leave-one-out by
//! materializing the reduced bag (not by skipping an index), and every
//! p-value by a fresh pass over the calibration scores with no caching.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conformal_train::conformity::squared_distance;
use conformal_train::dataset::{Dataset, Label, Observation, ObjectVector, SplitQuadruple, OBJECT_DIM};
use conformal_train::training::TrainingRegime;

/// Paths of the vendored MNIST training files, overridable via environment.
pub fn mnist_paths() -> (PathBuf, PathBuf) {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let images = std::env::var_os("MNIST_IMAGES")
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("train-images-idx3-ubyte.gz"));
    let labels = std::env::var_os("MNIST_LABELS")
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("train-labels-idx1-ubyte.gz"));
    (images, labels)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random point on the unit sphere (direction from the uniform cube).
pub fn random_unit_vector(rng: &mut ChaCha8Rng) -> ObjectVector {
    loop {
        let components: Vec<f64> = (0..OBJECT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if components.iter().map(|c| c * c).sum::<f64>() > 1e-6 {
            return ObjectVector::normalized(components).expect("nonzero vector normalizes");
        }
    }
}

pub fn random_label(rng: &mut ChaCha8Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::One
    } else {
        Label::Zero
    }
}

/// A pool of distinct vectors; datasets drawn from a shared pool contain
/// duplicate objects, which exercises the tie paths.
pub fn object_pool(rng: &mut ChaCha8Rng, count: usize) -> Vec<ObjectVector> {
    (0..count).map(|_| random_unit_vector(rng)).collect()
}

pub fn dataset_from_pool(rng: &mut ChaCha8Rng, pool: &[ObjectVector], size: usize) -> Dataset {
    (0..size)
        .map(|_| {
            let object = pool[rng.gen_range(0..pool.len())].clone();
            Observation::new(object, random_label(rng))
        })
        .collect()
}

/// A balanced part: `half` observations of each label.
pub fn balanced_part(rng: &mut ChaCha8Rng, pool: &[ObjectVector], half: usize) -> Dataset {
    let mut items = Vec::with_capacity(2 * half);
    for _ in 0..half {
        items.push(Observation::new(
            pool[rng.gen_range(0..pool.len())].clone(),
            Label::One,
        ));
        items.push(Observation::new(
            pool[rng.gen_range(0..pool.len())].clone(),
            Label::Zero,
        ));
    }
    Dataset::new(items)
}

/// A synthetic split with `half` positives and negatives per part, drawn
/// from a fresh pool with mild class structure so objectives vary over the
/// grid.
pub fn random_split(rng: &mut ChaCha8Rng, half: usize) -> SplitQuadruple {
    let pool = object_pool(rng, 4 * half);
    SplitQuadruple::new(
        balanced_part(rng, &pool, half),
        balanced_part(rng, &pool, half),
        balanced_part(rng, &pool, half),
        balanced_part(rng, &pool, half),
    )
    .expect("parts are nonempty")
}

/// Coordinate-sum squared distance, the oracle's route.
pub fn naive_squared_distance(a: &ObjectVector, b: &ObjectVector) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Kernel conformity over log weights taken relative to their maximum.
///
/// Exponents must stay relative: carrying absolute log levels of order
/// -rho * d through exp costs about rho * ulp of precision, which at large
/// rho is enough to flip rank comparisons on near-tied scores.
pub fn naive_kernel_score(rho: f64, obs: &Observation, reference: &Dataset) -> f64 {
    let exponents: Vec<(f64, bool)> = reference
        .iter()
        .map(|z| {
            let log_weight = -rho * naive_squared_distance(obs.object(), z.object());
            (log_weight, z.label() == obs.label())
        })
        .collect();
    let max = exponents
        .iter()
        .map(|&(e, _)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for &(exponent, matches) in &exponents {
        let weight = (exponent - max).exp();
        denominator += weight;
        if matches {
            numerator += weight;
        }
    }
    numerator / denominator
}

/// The direct, unstabilized kernel formula over the crate's own distances:
/// raw weights exp(-rho * d) with no shift. Degenerates for large rho.
pub fn direct_kernel_score(rho: f64, obs: &Observation, reference: &Dataset) -> f64 {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for z in reference.iter() {
        let w = (-rho * squared_distance(obs.object(), z.object())).exp();
        denominator += w;
        if z.label() == obs.label() {
            numerator += w;
        }
    }
    numerator / denominator
}

/// Stabilized kernel score computed after shifting every squared distance
/// by a constant, which multiplies all raw weights by a common factor.
pub fn shifted_kernel_score(rho: f64, obs: &Observation, reference: &Dataset, shift: f64) -> f64 {
    let dists: Vec<f64> = reference
        .iter()
        .map(|z| squared_distance(obs.object(), z.object()) + shift)
        .collect();
    let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (z, d) in reference.iter().zip(&dists) {
        let w = (-rho * (d - d_min)).exp();
        denominator += w;
        if z.label() == obs.label() {
            numerator += w;
        }
    }
    numerator / denominator
}

/// Literal p-value: numerator and denominator as integer counts. Every
/// calibration object is rescored under the candidate's label `y`.
pub fn naive_p_value(
    x: &ObjectVector,
    y: Label,
    d: &Dataset,
    d_cal: &Dataset,
    rho: f64,
) -> (usize, usize) {
    let test_score = naive_kernel_score(rho, &Observation::new(x.clone(), y), d);
    let mut count = 0;
    for z in d_cal.iter() {
        let relabeled = Observation::new(z.object().clone(), y);
        if test_score >= naive_kernel_score(rho, &relabeled, d) {
            count += 1;
        }
    }
    (1 + count, 1 + d_cal.size())
}

/// Literal observed fuzziness: in the binary case the false-label sum has
/// exactly one term per evaluation observation.
pub fn naive_of(d: &Dataset, d_cal: &Dataset, d_eval: &Dataset, rho: f64) -> f64 {
    let mut sum = 0.0;
    for z in d_eval.iter() {
        let (num, den) = naive_p_value(z.object(), z.label().other(), d, d_cal, rho);
        sum += num as f64 / den as f64;
    }
    sum / d_eval.size() as f64
}

/// Literal leave-one-out observed fuzziness: the reduced calibration bag is
/// materialized for every evaluation observation.
pub fn naive_of_loo(d: &Dataset, d_cal: &Dataset, rho: f64) -> f64 {
    let items: Vec<&Observation> = d_cal.iter().collect();
    let mut sum = 0.0;
    for i in 0..items.len() {
        let reduced: Dataset = items
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, z)| (*z).clone())
            .collect();
        let (num, den) = naive_p_value(items[i].object(), items[i].label().other(), d, &reduced, rho);
        sum += num as f64 / den as f64;
    }
    sum / items.len() as f64
}

/// Literal prediction error with the same tie-break rule (ties go to Zero).
pub fn naive_pe(d: &Dataset, d_eval: &Dataset, rho: f64) -> f64 {
    let mut wrong = 0;
    for z in d_eval.iter() {
        let s_one = naive_kernel_score(rho, &Observation::new(z.object().clone(), Label::One), d);
        let s_zero = naive_kernel_score(rho, &Observation::new(z.object().clone(), Label::Zero), d);
        let predicted = if s_one > s_zero { Label::One } else { Label::Zero };
        if predicted != z.label() {
            wrong += 1;
        }
    }
    wrong as f64 / d_eval.size() as f64
}

/// The training objective of a regime, evaluated along the oracle route.
pub fn naive_objective(regime: TrainingRegime, split: &SplitQuadruple, rho: f64) -> f64 {
    match regime {
        TrainingRegime::Pe => naive_pe(split.pre_train(), split.pre_test(), rho),
        TrainingRegime::PrePe => naive_pe(split.pre_pre_train(), split.pre_pre_test(), rho),
        TrainingRegime::Of => naive_of_loo(split.pre_train(), split.pre_test(), rho),
        TrainingRegime::PreOf => naive_of_loo(split.pre_pre_train(), split.pre_pre_test(), rho),
    }
}

/// The test score of a regime, evaluated along the oracle route.
pub fn naive_test_score(regime: TrainingRegime, split: &SplitQuadruple, rho: f64) -> f64 {
    match regime {
        TrainingRegime::Pe | TrainingRegime::Of => naive_pe(split.train(), split.test(), rho),
        TrainingRegime::PrePe | TrainingRegime::PreOf => {
            naive_of(split.pre_train(), split.pre_test(), split.test(), rho)
        }
    }
}

/// Last index attaining the minimum.
pub fn naive_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (index, &value) in values.iter().enumerate().skip(1) {
        if value <= values[best] {
            best = index;
        }
    }
    best
}

/// Grid search along the oracle route: the winning rho for a regime.
pub fn naive_train_rho(regime: TrainingRegime, split: &SplitQuadruple, grid: &[f64]) -> f64 {
    let curve: Vec<f64> = grid
        .iter()
        .map(|&rho| naive_objective(regime, split, rho))
        .collect();
    grid[naive_argmin(&curve)]
}
