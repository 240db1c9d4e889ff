//! Grid search over the kernel bandwidth: the four training regimes.
//!
//! A regime is a choice of training objective and of the data it may see.
//! The plain regimes (PE, OF) train on the full pre-training data against
//! the pre-test set; the pre-regimes (pre-PE, pre-OF) train one level
//! deeper, on the pre-pre split, so the pre-test set stays untouched and can
//! later serve as the calibration set of the final conformal predictor.
//!
//! Training is exhaustive minimization over a finite log-spaced grid. Ties
//! in the argmin are broken toward the largest rho: on the wide plateaus
//! that the coarse-grained PE objective produces, the selection runs to the
//! sharpest tied model instead of stopping at the smoothest one.

use thiserror::Error;

use crate::conformity::{ConformityError, KernelFamily};
use crate::criteria::{
    observed_fuzziness, observed_fuzziness_loo, prediction_error, CriteriaError, TieCounter,
};
use crate::dataset::SplitQuadruple;

/// Errors from grid construction, training, and evaluation.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum TrainError {
    /// The grid parameters do not describe a nonempty increasing grid.
    #[error("invalid grid: min_exp {min_exp}, max_exp {max_exp}, {points} points")]
    InvalidGrid {
        min_exp: f64,
        max_exp: f64,
        points: usize,
    },
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
    #[error(transparent)]
    Conformity(#[from] ConformityError),
}

/// Log-spaced parameter grid: rho_r = exp(min_exp + (max_exp - min_exp) * r / points)
/// for r = 0, ..., points - 1. Note the last exponent falls short of
/// max_exp by one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGrid {
    min_exp: f64,
    max_exp: f64,
    points: usize,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            min_exp: -5.0,
            max_exp: 10.0,
            points: 10,
        }
    }
}

impl ParamGrid {
    pub fn new(min_exp: f64, max_exp: f64, points: usize) -> Result<Self, TrainError> {
        if !min_exp.is_finite() || !max_exp.is_finite() || min_exp >= max_exp || points == 0 {
            return Err(TrainError::InvalidGrid {
                min_exp,
                max_exp,
                points,
            });
        }
        Ok(Self {
            min_exp,
            max_exp,
            points,
        })
    }

    pub fn min_exp(&self) -> f64 {
        self.min_exp
    }

    pub fn max_exp(&self) -> f64 {
        self.max_exp
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// The grid values, strictly increasing.
    pub fn values(&self) -> Vec<f64> {
        let span = self.max_exp - self.min_exp;
        (0..self.points)
            .map(|r| (self.min_exp + span * (r as f64 / self.points as f64)).exp())
            .collect()
    }
}

/// The four training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainingRegime {
    Pe,
    PrePe,
    Of,
    PreOf,
}

impl TrainingRegime {
    pub const ALL: [TrainingRegime; 4] = [
        TrainingRegime::Pe,
        TrainingRegime::PrePe,
        TrainingRegime::Of,
        TrainingRegime::PreOf,
    ];

    /// Stable name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            TrainingRegime::Pe => "PE",
            TrainingRegime::PrePe => "pre-PE",
            TrainingRegime::Of => "OF",
            TrainingRegime::PreOf => "pre-OF",
        }
    }

    /// The training objective at one grid point.
    ///
    /// The pre-regimes read only the pre-pre parts of the split; the plain
    /// regimes read pre-training data and the pre-test set.
    pub fn objective(
        self,
        split: &SplitQuadruple,
        family: &KernelFamily,
        rho: f64,
        ties: &TieCounter,
    ) -> Result<f64, TrainError> {
        let q = family.measure(rho)?;
        let value = match self {
            TrainingRegime::Pe => {
                prediction_error(split.pre_train(), split.pre_test(), &q, ties)?.value()
            }
            TrainingRegime::PrePe => {
                prediction_error(split.pre_pre_train(), split.pre_pre_test(), &q, ties)?.value()
            }
            TrainingRegime::Of => {
                observed_fuzziness_loo(split.pre_train(), split.pre_test(), &q)?.value()
            }
            TrainingRegime::PreOf => {
                observed_fuzziness_loo(split.pre_pre_train(), split.pre_pre_test(), &q)?.value()
            }
        };
        Ok(value)
    }

    /// The test score fed by this regime's trained parameter.
    ///
    /// PE and OF pick the parameter of the point classifier, so they are
    /// tested by classification error on the test set with the full
    /// training data as reference. The pre-regimes pick the parameter of
    /// the conformal predictor calibrated on the pre-test set, so they are
    /// tested by observed fuzziness on the test set.
    pub fn test_score(
        self,
        split: &SplitQuadruple,
        family: &KernelFamily,
        rho: f64,
        ties: &TieCounter,
    ) -> Result<f64, TrainError> {
        let q = family.measure(rho)?;
        let value = match self {
            TrainingRegime::Pe | TrainingRegime::Of => {
                prediction_error(split.train(), split.test(), &q, ties)?.value()
            }
            TrainingRegime::PrePe | TrainingRegime::PreOf => {
                observed_fuzziness(split.pre_train(), split.pre_test(), split.test(), &q)?.value()
            }
        };
        Ok(value)
    }
}

/// Result of grid search under one regime.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    regime: TrainingRegime,
    rho_star: f64,
    objective_curve: Vec<(f64, f64)>,
    ties: u64,
}

impl TrainedModel {
    pub fn regime(&self) -> TrainingRegime {
        self.regime
    }

    /// The grid value minimizing the objective (largest such value).
    pub fn rho_star(&self) -> f64 {
        self.rho_star
    }

    /// (rho, objective value) at every grid point, in grid order.
    pub fn objective_curve(&self) -> &[(f64, f64)] {
        &self.objective_curve
    }

    /// Exact argmax ties hit while computing PE objectives (0 for OF regimes).
    pub fn ties(&self) -> u64 {
        self.ties
    }
}

/// Trains one regime by evaluating its objective at every grid point and
/// taking the last minimum.
pub fn train(
    regime: TrainingRegime,
    split: &SplitQuadruple,
    grid: &ParamGrid,
    family: &KernelFamily,
) -> Result<TrainedModel, TrainError> {
    let ties = TieCounter::new();
    let mut curve = Vec::with_capacity(grid.points());
    for rho in grid.values() {
        let value = regime.objective(split, family, rho, &ties)?;
        curve.push((rho, value));
    }
    let mut best = 0;
    for (index, &(_, value)) in curve.iter().enumerate().skip(1) {
        if value <= curve[best].1 {
            best = index;
        }
    }
    Ok(TrainedModel {
        regime,
        rho_star: curve[best].0,
        objective_curve: curve,
        ties: ties.count(),
    })
}

/// The four trained models of one replication.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub pe: TrainedModel,
    pub pre_pe: TrainedModel,
    pub of: TrainedModel,
    pub pre_of: TrainedModel,
}

/// Trains all four regimes on one split.
pub fn train_all(
    split: &SplitQuadruple,
    grid: &ParamGrid,
    family: &KernelFamily,
) -> Result<TrainedModels, TrainError> {
    Ok(TrainedModels {
        pe: train(TrainingRegime::Pe, split, grid, family)?,
        pre_pe: train(TrainingRegime::PrePe, split, grid, family)?,
        of: train(TrainingRegime::Of, split, grid, family)?,
        pre_of: train(TrainingRegime::PreOf, split, grid, family)?,
    })
}

/// The four test scores of one replication, with the parameters that
/// produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    /// PE on the test set under the PE-trained parameter.
    pub pe_test_pe_train: f64,
    /// PE on the test set under the OF-trained parameter.
    pub pe_test_of_train: f64,
    /// OF on the test set under the pre-PE-trained parameter.
    pub of_test_pe_train: f64,
    /// OF on the test set under the pre-OF-trained parameter.
    pub of_test_of_train: f64,
    pub rho_pe: f64,
    pub rho_pre_pe: f64,
    pub rho_of: f64,
    pub rho_pre_of: f64,
    /// Argmax ties over the whole replication: training plus evaluation.
    pub ties: u64,
}

/// Computes the four test scores from the trained models.
///
/// PE-testing pairs the test set with the full training set as conformity
/// reference and uses the parameters of the plain regimes. OF-testing uses
/// the pre-models: the conformal predictor is calibrated on the pre-test
/// set, which pre-training never saw.
pub fn evaluate(
    models: &TrainedModels,
    split: &SplitQuadruple,
    family: &KernelFamily,
) -> Result<ScoreReport, TrainError> {
    let ties = TieCounter::new();
    let pe_test_pe_train =
        TrainingRegime::Pe.test_score(split, family, models.pe.rho_star(), &ties)?;
    let pe_test_of_train =
        TrainingRegime::Of.test_score(split, family, models.of.rho_star(), &ties)?;
    let of_test_pe_train =
        TrainingRegime::PrePe.test_score(split, family, models.pre_pe.rho_star(), &ties)?;
    let of_test_of_train =
        TrainingRegime::PreOf.test_score(split, family, models.pre_of.rho_star(), &ties)?;
    let training_ties =
        models.pe.ties() + models.pre_pe.ties() + models.of.ties() + models.pre_of.ties();
    Ok(ScoreReport {
        pe_test_pe_train,
        pe_test_of_train,
        of_test_pe_train,
        of_test_of_train,
        rho_pe: models.pe.rho_star(),
        rho_pre_pe: models.pre_pe.rho_star(),
        rho_of: models.of.rho_star(),
        rho_pre_of: models.pre_of.rho_star(),
        ties: ties.count() + training_ties,
    })
}
