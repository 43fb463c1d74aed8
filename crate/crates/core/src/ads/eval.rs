use serde::{Deserialize, Serialize};

use super::forest::FraudScorer;
use super::{AdsError, LabeledDataset};

/// Confusion counts at a threshold, with the rates derived from them.
/// Fraud is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub theta: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub false_positive_rate: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(theta: f64, tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        EvalReport {
            theta,
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            false_positive_rate: ratio(fp, fp + tn),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Flag rows whose score is at least `theta` and tally against the labels.
pub fn evaluate<S: FraudScorer + ?Sized>(
    model: &S,
    test: &LabeledDataset,
    theta: f64,
) -> Result<EvalReport, AdsError> {
    if test.rows.is_empty() {
        return Err(AdsError::EmptyTestSet);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for row in &test.rows {
        let flagged = model.fraud_score(&row.features.to_array()) >= theta;
        match (flagged, row.label.is_fraud()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(EvalReport::from_counts(theta, tp, fp, tn, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ads::{generate_dataset, Label};

    struct Constant(f64);
    impl FraudScorer for Constant {
        fn fraud_score(&self, _: &[f64]) -> f64 {
            self.0
        }
    }

    #[test]
    fn always_legit_on_ninety_ten() {
        let d = generate_dataset(1_000, 0.1, 1).unwrap();
        let r = evaluate(&Constant(0.0), &d, 0.5).unwrap();
        assert_eq!(r.accuracy, 0.9);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.total(), 1_000);
    }

    #[test]
    fn perfect_oracle() {
        let d = generate_dataset(500, 0.2, 2).unwrap();
        let lookup: Vec<([f64; 6], Label)> = d
            .rows
            .iter()
            .map(|r| (r.features.to_array(), r.label))
            .collect();
        struct Oracle(Vec<([f64; 6], Label)>);
        impl FraudScorer for Oracle {
            fn fraud_score(&self, x: &[f64]) -> f64 {
                let hit = self.0.iter().find(|(f, _)| f.as_slice() == x).unwrap();
                hit.1.is_fraud() as u8 as f64
            }
        }
        let r = evaluate(&Oracle(lookup), &d, 0.5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.false_positive_rate, 0.0);
    }

    #[test]
    fn empty_test_set_rejected() {
        let d = LabeledDataset {
            rows: vec![],
            seed: None,
            fraud_rate: 0.0,
        };
        assert!(matches!(
            evaluate(&Constant(0.0), &d, 0.5),
            Err(AdsError::EmptyTestSet)
        ));
    }

    #[test]
    fn threshold_is_inclusive() {
        let d = generate_dataset(100, 0.1, 3).unwrap();
        let r = evaluate(&Constant(0.5), &d, 0.5).unwrap();
        assert_eq!(r.tp, 10);
        assert_eq!(r.fp, 90);
    }
}
