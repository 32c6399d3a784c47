use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub per_class_recall: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    /// `None` where the split lacks positives or negatives for the class.
    pub per_class_auc: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn support(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.support().iter().sum()
    }

    /// Mean over the classes whose AUC is defined.
    pub fn mean_auc(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class_auc.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Arg-max with ties resolved to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mann-Whitney estimate `P(s+ > s-) + P(s+ = s-) / 2` of the area under
/// the ROC curve.
pub fn auc_one_vs_rest(scores: &[f64], positive: &[bool]) -> Result<f64, TrainError> {
    if scores.len() != positive.len() {
        return Err(TrainError::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Validation("scores contain NaN".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TrainError::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the number of correctly ordered pairs, counting ties as half.
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut pos_tied, mut neg_tied) = (0u128, 0u128);
        for &k in &order[i..j] {
            if positive[k] {
                pos_tied += 1;
            } else {
                neg_tied += 1;
            }
        }
        twice += pos_tied * (2 * neg_below + neg_tied);
        neg_below += neg_tied;
        i = j;
    }
    Ok(twice as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Metrics for class-probability rows `probs` against `labels`. Classes with
/// no support (or never predicted) contribute 0 to the macro means.
pub fn compute_metrics(labels: &[usize], probs: &[Vec<f64>], num_classes: usize) -> Result<MetricsReport, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::Validation("cannot evaluate an empty split".into()));
    }
    if labels.len() != probs.len() {
        return Err(TrainError::Validation(format!(
            "{} labels for {} predictions",
            labels.len(),
            probs.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(TrainError::Validation(format!("label {bad} outside [0, {num_classes})")));
    }
    if probs.iter().any(|r| r.len() != num_classes) {
        return Err(TrainError::Validation(format!("prediction rows must have {num_classes} entries")));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&l, row) in labels.iter().zip(probs) {
        confusion[l][argmax(row)] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class_recall: Vec<f64> = (0..num_classes)
        .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
        .collect();
    let per_class_precision: Vec<f64> = (0..num_classes)
        .map(|c| ratio(confusion[c][c], (0..num_classes).map(|r| confusion[r][c]).sum()))
        .collect();
    let per_class_auc = (0..num_classes)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            match auc_one_vs_rest(&scores, &positive) {
                Ok(a) => Ok(Some(a)),
                Err(TrainError::UndefinedAuc) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / num_classes as f64;
    Ok(MetricsReport {
        accuracy: ratio(correct, labels.len()),
        macro_recall: mean(&per_class_recall),
        macro_precision: mean(&per_class_precision),
        per_class_recall,
        per_class_precision,
        per_class_auc,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(classes: &[usize], c: usize) -> Vec<Vec<f64>> {
        classes
            .iter()
            .map(|&k| (0..c).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn hand_confusion_example() {
        let m = compute_metrics(&[0, 0, 1, 1], &one_hot(&[0, 1, 1, 1], 2), 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class_recall, vec![0.5, 1.0]);
        assert_eq!(m.macro_recall, 0.75);
        assert!((m.per_class_precision[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_precision - 0.833_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 3, 4, 0, 1, 2, 3, 4];
        let m = compute_metrics(&labels, &one_hot(&labels, 5), 5).unwrap();
        assert_eq!((m.accuracy, m.macro_recall, m.macro_precision), (1.0, 1.0, 1.0));
        assert!(m.per_class_auc.iter().all(|a| *a == Some(1.0)));
    }

    #[test]
    fn absent_class_policy() {
        let m = compute_metrics(&[0, 1], &one_hot(&[0, 1], 3), 3).unwrap();
        assert_eq!(m.per_class_recall[2], 0.0);
        assert_eq!(m.per_class_auc[2], None);
        assert!((m.macro_recall - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.mean_auc(), Some(1.0));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_one_vs_rest(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc_one_vs_rest(&[0.9, 0.8, 0.7, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc_one_vs_rest(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]).unwrap(), 0.75);
        assert!(matches!(auc_one_vs_rest(&[0.1, 0.2], &[true, true]), Err(TrainError::UndefinedAuc)));
    }

    #[test]
    fn empty_and_bad_inputs() {
        assert!(compute_metrics(&[], &[], 5).is_err());
        assert!(compute_metrics(&[7], &one_hot(&[0], 5), 5).is_err());
        assert!(compute_metrics(&[0], &[vec![1.0]], 5).is_err());
    }

    #[test]
    fn argmax_tie_takes_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_map(
            scores in proptest::collection::vec(0.0f64..1.0, 2..40),
            flags in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let positive: Vec<bool> = flags[..scores.len()].to_vec();
            prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
            let a = auc_one_vs_rest(&scores, &positive).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(a, auc_one_vs_rest(&mapped, &positive).unwrap());
        }

        #[test]
        fn accuracy_matches_trace(labels in proptest::collection::vec(0usize..4, 1..60), seed in 0u64..1000) {
            let probs: Vec<Vec<f64>> = labels
                .iter()
                .enumerate()
                .map(|(i, _)| (0..4).map(|j| (((i * 31 + j * 17) as u64 + seed) % 7) as f64).collect())
                .collect();
            let m = compute_metrics(&labels, &probs, 4).unwrap();
            let trace: usize = (0..4).map(|c| m.confusion[c][c]).sum();
            prop_assert_eq!(m.accuracy, trace as f64 / labels.len() as f64);
            prop_assert!(m.macro_recall >= 0.0 && m.macro_recall <= 1.0);
            prop_assert!(m.macro_precision >= 0.0 && m.macro_precision <= 1.0);
        }
    }
}
