//! Training split-conformal predictors by minimizing efficiency criteria.
//!
//! A split-conformal predictor turns any conformity measure into set-valued
//! predictions with guaranteed coverage. Which conformity measure to use is
//! left open, and this crate picks one by exhaustive grid search over the
//! bandwidth of a Gaussian-kernel measure, minimizing either the observed
//! fuzziness of the resulting predictor or the prediction error of the
//! induced point classifier on held-out data.
//!
//! The crate also ships the experiment harness for the binary MNIST
//! benchmark that compares the two training objectives: IDX ingestion,
//! seeded task sampling, the four training regimes, and CSV reporting.

pub mod conformity;
pub mod criteria;
pub mod data;
pub mod dataset;
pub mod experiment;
pub mod training;
