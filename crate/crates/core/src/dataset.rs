//! Labels, object vectors, bag-semantics datasets, and the nested splits.
//!
//! Datasets are bags (multisets): the same observation may occur several
//! times and every copy counts. Internally every [`Dataset`] keeps its
//! observations in a canonical order, so two bags with equal contents are
//! represented identically no matter how they were assembled. All downstream
//! floating-point reductions iterate in that canonical order, which makes
//! every score bit-identical under permutation of the input.

use std::cmp::Ordering;
use std::sync::Arc;

use thiserror::Error;

/// Dimension of every object vector (28 x 28 grayscale image, flattened).
pub const OBJECT_DIM: usize = 784;

/// Tolerance for the unit-norm check in [`ObjectVector::new`].
const UNIT_NORM_TOL: f64 = 1e-9;

/// Errors from constructing objects and manipulating datasets.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CoreError {
    /// The component slice has the wrong length.
    #[error("object vector has {actual} components, expected {expected}")]
    WrongDimension { expected: usize, actual: usize },
    /// A component is NaN or infinite.
    #[error("object vector component {index} is not finite")]
    NonFinite { index: usize },
    /// The vector is not unit-length.
    #[error("object vector has norm {norm}, expected 1 within {tolerance}")]
    NotUnitNorm { norm: f64, tolerance: f64 },
    /// A zero vector cannot be normalized.
    #[error("cannot normalize the zero vector")]
    ZeroNorm,
    /// `leave_one_out` was asked to remove an observation that is absent.
    #[error("observation not present in dataset")]
    MissingObservation,
    /// A split part that must be nonempty is empty.
    #[error("{name} dataset is empty")]
    EmptyDataset { name: &'static str },
}

/// Binary label. `One` marks the positive class (the chosen digit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Zero,
    One,
}

impl Label {
    /// Both labels, in a fixed order.
    pub const ALL: [Label; 2] = [Label::Zero, Label::One];

    /// The opposite label.
    pub fn other(self) -> Label {
        match self {
            Label::Zero => Label::One,
            Label::One => Label::Zero,
        }
    }

    /// 0 or 1, for output.
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }
}

/// A unit-norm point in 784-dimensional feature space.
///
/// The components are immutable and shared, so cloning is cheap and clones
/// of the same vector compare equal by pointer without touching the data.
#[derive(Debug, Clone)]
pub struct ObjectVector {
    components: Arc<[f64]>,
}

impl ObjectVector {
    /// Wraps a component vector, checking dimension, finiteness, and that
    /// the Euclidean norm is 1 within `1e-9`.
    pub fn new(components: Vec<f64>) -> Result<Self, CoreError> {
        Self::check_finite(&components)?;
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(CoreError::NotUnitNorm {
                norm,
                tolerance: UNIT_NORM_TOL,
            });
        }
        Ok(Self {
            components: components.into(),
        })
    }

    /// Scales a nonzero component vector to unit norm and wraps it.
    pub fn normalized(mut components: Vec<f64>) -> Result<Self, CoreError> {
        Self::check_finite(&components)?;
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CoreError::ZeroNorm);
        }
        for c in &mut components {
            *c /= norm;
        }
        Ok(Self {
            components: components.into(),
        })
    }

    fn check_finite(components: &[f64]) -> Result<(), CoreError> {
        if components.len() != OBJECT_DIM {
            return Err(CoreError::WrongDimension {
                expected: OBJECT_DIM,
                actual: components.len(),
            });
        }
        if let Some(index) = components.iter().position(|c| !c.is_finite()) {
            return Err(CoreError::NonFinite { index });
        }
        Ok(())
    }

    /// The components as a slice.
    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Euclidean inner product with another vector.
    pub fn dot(&self, other: &ObjectVector) -> f64 {
        self.components
            .iter()
            .zip(other.components.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Address of the shared component buffer, used as a cache key and as a
    /// fast path for equality. Stable for the lifetime of all clones.
    pub(crate) fn ptr_id(&self) -> usize {
        self.components.as_ptr() as usize
    }

    /// Total order on vectors: pointer-equal vectors are equal, otherwise
    /// componentwise by bit pattern. Any fixed total order works here; it
    /// only pins down the canonical dataset order.
    fn canonical_cmp(&self, other: &ObjectVector) -> Ordering {
        if self.ptr_id() == other.ptr_id() {
            return Ordering::Equal;
        }
        for (a, b) in self.components.iter().zip(other.components.iter()) {
            match a.to_bits().cmp(&b.to_bits()) {
                Ordering::Equal => continue,
                unequal => return unequal,
            }
        }
        Ordering::Equal
    }
}

impl PartialEq for ObjectVector {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_cmp(other) == Ordering::Equal
    }
}

impl Eq for ObjectVector {}

/// A labeled example: an object vector with its binary label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    object: ObjectVector,
    label: Label,
}

impl Observation {
    pub fn new(object: ObjectVector, label: Label) -> Self {
        Self { object, label }
    }

    pub fn object(&self) -> &ObjectVector {
        &self.object
    }

    pub fn label(&self) -> Label {
        self.label
    }

    fn canonical_cmp(&self, other: &Observation) -> Ordering {
        self.label
            .cmp(&other.label)
            .then_with(|| self.object.canonical_cmp(&other.object))
    }
}

/// A bag of observations in canonical order.
///
/// Equality is multiset equality. Iteration order is the canonical order,
/// which is a function of the bag contents alone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    items: Vec<Observation>,
}

impl Dataset {
    /// Builds a dataset from observations in any order.
    pub fn new(items: Vec<Observation>) -> Self {
        let mut items = items;
        items.sort_by(Observation::canonical_cmp);
        Self { items }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Number of observations, counting multiplicity.
    pub fn size(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Iterates in canonical order.
    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.items.iter()
    }

    /// Observation at a canonical-order index.
    pub fn get(&self, index: usize) -> Option<&Observation> {
        self.items.get(index)
    }

    /// How many copies of `z` the bag contains.
    pub fn multiplicity(&self, z: &Observation) -> usize {
        self.items.iter().filter(|item| *item == z).count()
    }

    /// Bag sum: multiplicities add.
    pub fn bag_sum(&self, other: &Dataset) -> Dataset {
        let mut items = Vec::with_capacity(self.items.len() + other.items.len());
        items.extend_from_slice(&self.items);
        items.extend_from_slice(&other.items);
        Dataset::new(items)
    }

    /// Removes exactly one copy of `z`.
    pub fn leave_one_out(&self, z: &Observation) -> Result<Dataset, CoreError> {
        let index = self
            .items
            .iter()
            .position(|item| item == z)
            .ok_or(CoreError::MissingObservation)?;
        let mut items = self.items.clone();
        items.remove(index);
        Ok(Dataset { items })
    }
}

impl FromIterator<Observation> for Dataset {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// The four disjoint parts of one experiment task, with the derived unions.
///
/// `pre_train` is the bag sum of `pre_pre_train` and `pre_pre_test`, and
/// `train` additionally absorbs `pre_test`. The unions are materialized once
/// at construction so repeated access is free.
#[derive(Debug, Clone)]
pub struct SplitQuadruple {
    pre_pre_train: Dataset,
    pre_pre_test: Dataset,
    pre_test: Dataset,
    test: Dataset,
    pre_train: Dataset,
    train: Dataset,
}

impl SplitQuadruple {
    /// Assembles a split; every part must be nonempty.
    pub fn new(
        pre_pre_train: Dataset,
        pre_pre_test: Dataset,
        pre_test: Dataset,
        test: Dataset,
    ) -> Result<Self, CoreError> {
        for (part, name) in [
            (&pre_pre_train, "pre-pre-training"),
            (&pre_pre_test, "pre-pre-test"),
            (&pre_test, "pre-test"),
            (&test, "test"),
        ] {
            if part.is_empty() {
                return Err(CoreError::EmptyDataset { name });
            }
        }
        let pre_train = pre_pre_train.bag_sum(&pre_pre_test);
        let train = pre_train.bag_sum(&pre_test);
        Ok(Self {
            pre_pre_train,
            pre_pre_test,
            pre_test,
            test,
            pre_train,
            train,
        })
    }

    pub fn pre_pre_train(&self) -> &Dataset {
        &self.pre_pre_train
    }

    pub fn pre_pre_test(&self) -> &Dataset {
        &self.pre_pre_test
    }

    pub fn pre_test(&self) -> &Dataset {
        &self.pre_test
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    /// Union of the two pre-pre parts.
    pub fn pre_train(&self) -> &Dataset {
        &self.pre_train
    }

    /// Union of everything except the test part.
    pub fn train(&self) -> &Dataset {
        &self.train
    }
}
