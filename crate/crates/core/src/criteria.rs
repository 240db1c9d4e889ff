//! Conformal p-values, the point predictor, and the evaluation criteria.
//!
//! The p-value of a candidate observation (x, y) is its inclusive rank among
//! the calibration scores, where every calibration object is scored under
//! the candidate's label y: the rank measures how x's conformity under y
//! compares with the other objects' conformity under that same label.
//! Observed fuzziness (OF) averages the p-values of false labels over an
//! evaluation set: smaller means the predictor is more efficient at refuting
//! wrong labels. Prediction error (PE) is the misclassification rate of the
//! argmax-conformity predictor.
//!
//! All comparisons between scores are exact floating-point comparisons with
//! no tolerance: the step function is defined on the sign of the difference,
//! and a tolerance would break exact rank counting.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::conformity::{ConformityError, ConformityMeasure};
use crate::dataset::{Dataset, Label, Observation, ObjectVector};

/// Errors from criterion evaluation.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CriteriaError {
    /// A dataset that must be nonempty is empty.
    #[error("{name} dataset is empty")]
    EmptyDataset { name: &'static str },
    /// Leave-one-out needs at least two calibration observations.
    #[error("calibration dataset has {size} observation(s), need at least 2")]
    CalibrationTooSmall { size: usize },
    /// The underlying conformity measure failed.
    #[error(transparent)]
    Conformity(#[from] ConformityError),
}

/// A conformal p-value as an exact rank ratio.
///
/// The value is numerator / denominator with denominator = 1 + |calibration|
/// and numerator between 1 and the denominator, so it always lies in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PValue {
    numerator: usize,
    denominator: usize,
}

impl PValue {
    pub fn numerator(&self) -> usize {
        self.numerator
    }

    pub fn denominator(&self) -> usize {
        self.denominator
    }

    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

/// Which criterion a [`CriterionScore`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    ObservedFuzziness,
    PredictionError,
}

/// A criterion value in [0, 1] tagged with its kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionScore {
    value: f64,
    kind: CriterionKind,
}

impl CriterionScore {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn kind(&self) -> CriterionKind {
        self.kind
    }
}

/// Counts exact conformity-score ties hit by [`point_predict`].
///
/// The argmax is assumed to be a singleton; the counter makes violations of
/// that assumption observable instead of silently resolved.
#[derive(Debug, Default)]
pub struct TieCounter(AtomicU64);

impl TieCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Scores every calibration object under `label`, in calibration order.
fn calibration_scores<Q>(
    d_train: &Dataset,
    d_cal: &Dataset,
    label: Label,
    q: &Q,
) -> Result<Vec<f64>, CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    d_cal
        .iter()
        .map(|z| {
            q.score(&Observation::new(z.object().clone(), label), d_train)
                .map_err(CriteriaError::from)
        })
        .collect()
}

/// Both per-label calibration rows, indexed by [`Label::as_u8`].
fn calibration_rows<Q>(
    d_train: &Dataset,
    d_cal: &Dataset,
    q: &Q,
) -> Result<[Vec<f64>; 2], CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    Ok([
        calibration_scores(d_train, d_cal, Label::Zero, q)?,
        calibration_scores(d_train, d_cal, Label::One, q)?,
    ])
}

fn rank_against(test_score: f64, cal_scores: &[f64]) -> PValue {
    let count = cal_scores.iter().filter(|&&c| test_score >= c).count();
    PValue {
        numerator: 1 + count,
        denominator: 1 + cal_scores.len(),
    }
}

/// Conformal p-value of the candidate observation (x, y).
///
/// Counts, with multiplicity and inclusive of ties, the calibration objects
/// whose score under the candidate label y does not exceed the candidate's
/// own score. The calibration observations' stored labels play no role in
/// the ranking; the criteria decide which candidate labels to rank.
pub fn p_value<Q>(
    x: &ObjectVector,
    y: Label,
    d_train: &Dataset,
    d_cal: &Dataset,
    q: &Q,
) -> Result<PValue, CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    if d_train.is_empty() {
        return Err(CriteriaError::EmptyDataset { name: "training" });
    }
    if d_cal.is_empty() {
        return Err(CriteriaError::EmptyDataset {
            name: "calibration",
        });
    }
    let test_score = q.score(&Observation::new(x.clone(), y), d_train)?;
    let cal_scores = calibration_scores(d_train, d_cal, y, q)?;
    Ok(rank_against(test_score, &cal_scores))
}

/// Argmax-conformity point prediction for object `x`.
///
/// On an exact score tie, returns `Label::Zero` and bumps the tie counter.
pub fn point_predict<Q>(
    x: &ObjectVector,
    d: &Dataset,
    q: &Q,
    ties: &TieCounter,
) -> Result<Label, CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    let score_zero = q.score(&Observation::new(x.clone(), Label::Zero), d)?;
    let score_one = q.score(&Observation::new(x.clone(), Label::One), d)?;
    if score_one > score_zero {
        Ok(Label::One)
    } else {
        if score_one == score_zero {
            ties.record();
        }
        Ok(Label::Zero)
    }
}

/// Observed fuzziness of `q` on `d_eval`: the mean over evaluation
/// observations of the summed p-values of their false labels.
///
/// One calibration row per label is computed up front and shared by every
/// evaluation point; only the candidate score changes per point.
pub fn observed_fuzziness<Q>(
    d: &Dataset,
    d_cal: &Dataset,
    d_eval: &Dataset,
    q: &Q,
) -> Result<CriterionScore, CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    if d.is_empty() {
        return Err(CriteriaError::EmptyDataset { name: "training" });
    }
    if d_cal.is_empty() {
        return Err(CriteriaError::EmptyDataset {
            name: "calibration",
        });
    }
    if d_eval.is_empty() {
        return Err(CriteriaError::EmptyDataset { name: "evaluation" });
    }
    let rows = calibration_rows(d, d_cal, q)?;
    let mut sum = 0.0;
    for z in d_eval.iter() {
        for false_label in Label::ALL.into_iter().filter(|&l| l != z.label()) {
            let candidate = Observation::new(z.object().clone(), false_label);
            let test_score = q.score(&candidate, d)?;
            sum += rank_against(test_score, &rows[false_label.as_u8() as usize]).value();
        }
    }
    Ok(CriterionScore {
        value: sum / d_eval.size() as f64,
        kind: CriterionKind::ObservedFuzziness,
    })
}

/// Leave-one-out observed fuzziness: every calibration observation is
/// evaluated against the calibration set with one copy of itself removed.
///
/// Removing an observation from the calibration bag only drops one
/// comparison term, and the held-out candidate's false-label score is its
/// own entry in the shared per-label row, so both rows are computed once.
pub fn observed_fuzziness_loo<Q>(
    d: &Dataset,
    d_cal: &Dataset,
    q: &Q,
) -> Result<CriterionScore, CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    if d.is_empty() {
        return Err(CriteriaError::EmptyDataset { name: "training" });
    }
    if d_cal.size() < 2 {
        return Err(CriteriaError::CalibrationTooSmall {
            size: d_cal.size(),
        });
    }
    let rows = calibration_rows(d, d_cal, q)?;
    let m = d_cal.size();
    let mut sum = 0.0;
    for (i, z) in d_cal.iter().enumerate() {
        for false_label in Label::ALL.into_iter().filter(|&l| l != z.label()) {
            let row = &rows[false_label.as_u8() as usize];
            let test_score = row[i];
            let count = row
                .iter()
                .enumerate()
                .filter(|&(j, &c)| j != i && test_score >= c)
                .count();
            sum += PValue {
                numerator: 1 + count,
                denominator: m,
            }
            .value();
        }
    }
    Ok(CriterionScore {
        value: sum / m as f64,
        kind: CriterionKind::ObservedFuzziness,
    })
}

/// Prediction error of the point predictor with reference `d` on `d_eval`.
pub fn prediction_error<Q>(
    d: &Dataset,
    d_eval: &Dataset,
    q: &Q,
    ties: &TieCounter,
) -> Result<CriterionScore, CriteriaError>
where
    Q: ConformityMeasure + ?Sized,
{
    if d.is_empty() {
        return Err(CriteriaError::EmptyDataset { name: "training" });
    }
    if d_eval.is_empty() {
        return Err(CriteriaError::EmptyDataset { name: "evaluation" });
    }
    let mut wrong = 0usize;
    for z in d_eval.iter() {
        if point_predict(z.object(), d, q, ties)? != z.label() {
            wrong += 1;
        }
    }
    Ok(CriterionScore {
        value: wrong as f64 / d_eval.size() as f64,
        kind: CriterionKind::PredictionError,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformity::KernelConformity;
    use crate::dataset::OBJECT_DIM;

    /// Test measure that reads the score straight off the object: component
    /// 0 scores label One, component 1 scores label Zero. The reference
    /// dataset is ignored, which makes ranks easy to stage.
    struct ComponentScore;

    impl ConformityMeasure for ComponentScore {
        fn score(&self, obs: &Observation, _: &Dataset) -> Result<f64, ConformityError> {
            let c = obs.object().components();
            Ok(match obs.label() {
                Label::One => c[0],
                Label::Zero => c[1],
            })
        }
    }

    /// Unit vector carrying the two staged scores in components 0 and 1.
    fn scored(one_score: f64, zero_score: f64) -> ObjectVector {
        let mut components = vec![0.0; OBJECT_DIM];
        components[0] = one_score;
        components[1] = zero_score;
        let residual = (1.0 - one_score * one_score - zero_score * zero_score).max(0.0);
        components[2] = residual.sqrt();
        ObjectVector::new(components).unwrap()
    }

    fn basis(index: usize) -> ObjectVector {
        let mut components = vec![0.0; OBJECT_DIM];
        components[index] = 1.0;
        ObjectVector::new(components).unwrap()
    }

    fn cal_set(scores: &[f64]) -> Dataset {
        scores
            .iter()
            .map(|&s| Observation::new(scored(s, 0.0), Label::One))
            .collect()
    }

    fn any_train() -> Dataset {
        Dataset::new(vec![Observation::new(basis(9), Label::One)])
    }

    #[test]
    fn p_value_maximal_rank() {
        let cal = cal_set(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8]);
        let p = p_value(&scored(0.9, 0.0), Label::One, &any_train(), &cal, &ComponentScore).unwrap();
        assert_eq!((p.numerator(), p.denominator()), (10, 10));
        assert_eq!(p.value(), 1.0);
    }

    #[test]
    fn p_value_minimal_rank() {
        let cal = cal_set(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8]);
        let p = p_value(&scored(0.05, 0.0), Label::One, &any_train(), &cal, &ComponentScore).unwrap();
        assert_eq!((p.numerator(), p.denominator()), (1, 10));
        assert_eq!(p.value(), 0.1);
    }

    #[test]
    fn p_value_counts_ties_inclusively() {
        let cal = cal_set(&[0.2, 0.4, 0.4, 0.9]);
        let p = p_value(&scored(0.4, 0.0), Label::One, &any_train(), &cal, &ComponentScore).unwrap();
        assert_eq!((p.numerator(), p.denominator()), (4, 5));
        assert_eq!(p.value(), 0.8);
    }

    #[test]
    fn p_value_requires_nonempty_datasets() {
        let cal = cal_set(&[0.5]);
        let x = scored(0.4, 0.0);
        assert_eq!(
            p_value(&x, Label::One, &Dataset::empty(), &cal, &ComponentScore).unwrap_err(),
            CriteriaError::EmptyDataset { name: "training" }
        );
        assert_eq!(
            p_value(&x, Label::One, &any_train(), &Dataset::empty(), &ComponentScore).unwrap_err(),
            CriteriaError::EmptyDataset {
                name: "calibration"
            }
        );
    }

    #[test]
    fn monotone_response_to_a_lower_calibration_score() {
        let x = scored(0.4, 0.0);
        let cal = cal_set(&[0.5, 0.6, 0.7]);
        let before = p_value(&x, Label::One, &any_train(), &cal, &ComponentScore).unwrap();
        let grown = cal.bag_sum(&cal_set(&[0.3]));
        let after = p_value(&x, Label::One, &any_train(), &grown, &ComponentScore).unwrap();
        assert_eq!(after.numerator(), before.numerator() + 1);
        assert_eq!(after.denominator(), before.denominator() + 1);
    }

    #[test]
    fn point_predict_picks_higher_score() {
        let ties = TieCounter::new();
        let label =
            point_predict(&scored(0.9, 0.1), &any_train(), &ComponentScore, &ties).unwrap();
        assert_eq!(label, Label::One);
        assert_eq!(ties.count(), 0);
    }

    #[test]
    fn point_predict_breaks_ties_to_zero_and_counts() {
        let ties = TieCounter::new();
        let label =
            point_predict(&scored(0.5, 0.5), &any_train(), &ComponentScore, &ties).unwrap();
        assert_eq!(label, Label::Zero);
        assert_eq!(ties.count(), 1);
    }

    #[test]
    fn point_predict_single_reference_kernel_always_predicts_its_label() {
        let d = Dataset::new(vec![Observation::new(basis(3), Label::One)]);
        let ties = TieCounter::new();
        for rho in [0.0, 1.0, 8.5_f64.exp()] {
            let q = KernelConformity::new(rho).unwrap();
            for x in [basis(3), basis(5), scored(0.6, 0.8)] {
                assert_eq!(point_predict(&x, &d, &q, &ties).unwrap(), Label::One);
            }
        }
        assert_eq!(ties.count(), 0);
    }

    #[test]
    fn observed_fuzziness_is_one_when_measure_is_uninformative() {
        // rho = 0 with a balanced reference scores every candidate 0.5, so
        // every p-value is 1 regardless of the calibration set.
        let d = Dataset::new(vec![
            Observation::new(basis(0), Label::One),
            Observation::new(basis(1), Label::Zero),
        ]);
        let d_cal = Dataset::new(vec![
            Observation::new(basis(2), Label::One),
            Observation::new(basis(3), Label::Zero),
            Observation::new(basis(4), Label::One),
        ]);
        let d_eval = Dataset::new(vec![
            Observation::new(basis(5), Label::Zero),
            Observation::new(basis(6), Label::One),
        ]);
        let q = KernelConformity::new(0.0).unwrap();
        let of = observed_fuzziness(&d, &d_cal, &d_eval, &q).unwrap();
        assert_eq!(of.value(), 1.0);
        assert_eq!(of.kind(), CriterionKind::ObservedFuzziness);
    }

    #[test]
    fn observed_fuzziness_averages_false_label_p_values() {
        // Each calibration object scores 0.7s under either label, giving the
        // row {0.35, 0.385, ..., 0.63} for both One and Zero.
        let cal: Dataset = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9]
            .iter()
            .map(|&s| Observation::new(scored(0.7 * s, 0.7 * s), Label::One))
            .collect();
        // True label Zero: the false label One scores component 0 = 0.28,
        // below the whole row, p = 1/10. True label One: the false label
        // Zero scores component 1 = 0.399, above exactly two, p = 3/10.
        let d_eval = Dataset::new(vec![
            Observation::new(scored(0.28, 0.0), Label::Zero),
            Observation::new(scored(0.0, 0.399), Label::One),
        ]);
        let of = observed_fuzziness(&any_train(), &cal, &d_eval, &ComponentScore).unwrap();
        assert!((of.value() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn loo_excludes_each_observation_from_its_own_calibration() {
        // Two calibration observations; each false-label score sits strictly
        // below the other observation's score under that same label, so each
        // p-value is 1/2.
        let d_cal = Dataset::new(vec![
            Observation::new(scored(0.8, 0.1), Label::One),
            Observation::new(scored(0.3, 0.7), Label::Zero),
        ]);
        let of = observed_fuzziness_loo(&any_train(), &d_cal, &ComponentScore).unwrap();
        assert_eq!(of.value(), 0.5);
    }

    #[test]
    fn loo_is_one_when_measure_is_uninformative() {
        let d = Dataset::new(vec![
            Observation::new(basis(0), Label::One),
            Observation::new(basis(1), Label::Zero),
        ]);
        let d_cal = Dataset::new(vec![
            Observation::new(basis(2), Label::One),
            Observation::new(basis(3), Label::Zero),
            Observation::new(basis(4), Label::Zero),
        ]);
        let q = KernelConformity::new(0.0).unwrap();
        let of = observed_fuzziness_loo(&d, &d_cal, &q).unwrap();
        assert_eq!(of.value(), 1.0);
    }

    #[test]
    fn loo_rejects_tiny_calibration_sets() {
        let d_cal = Dataset::new(vec![Observation::new(basis(0), Label::One)]);
        assert_eq!(
            observed_fuzziness_loo(&any_train(), &d_cal, &ComponentScore).unwrap_err(),
            CriteriaError::CalibrationTooSmall { size: 1 }
        );
    }

    #[test]
    fn prediction_error_bounds() {
        let ties = TieCounter::new();
        let all_one = Dataset::new(vec![
            Observation::new(scored(0.9, 0.1), Label::One),
            Observation::new(scored(0.8, 0.2), Label::One),
        ]);
        let pe = prediction_error(&any_train(), &all_one, &ComponentScore, &ties).unwrap();
        assert_eq!(pe.value(), 0.0);
        assert_eq!(pe.kind(), CriterionKind::PredictionError);
        let mislabeled = Dataset::new(vec![
            Observation::new(scored(0.9, 0.1), Label::Zero),
            Observation::new(scored(0.8, 0.2), Label::Zero),
        ]);
        let pe = prediction_error(&any_train(), &mislabeled, &ComponentScore, &ties).unwrap();
        assert_eq!(pe.value(), 1.0);
    }

    #[test]
    fn prediction_error_nearest_neighbor_limit() {
        // Reference holds (x1, 1) and (x2, 0); at large rho the predictor
        // returns each point's nearest label, so the second evaluation
        // observation, labeled One at x2, is missed.
        let x1 = basis(0);
        let x2 = basis(1);
        let d = Dataset::new(vec![
            Observation::new(x1.clone(), Label::One),
            Observation::new(x2.clone(), Label::Zero),
        ]);
        let d_eval = Dataset::new(vec![
            Observation::new(x1, Label::One),
            Observation::new(x2, Label::One),
        ]);
        let q = KernelConformity::new(8.5_f64.exp()).unwrap();
        let ties = TieCounter::new();
        let pe = prediction_error(&d, &d_eval, &q, &ties).unwrap();
        assert_eq!(pe.value(), 0.5);
        assert_eq!(ties.count(), 0);
    }
}
