//! Multiclass evaluation: confusion matrix, accuracy, and one-vs-rest
//! sensitivity / specificity / precision / F1 with macro averaging.
//!
//! A rate whose denominator is zero is reported as undefined (`None`,
//! `null` in JSON), never silently coerced to 0. Macro averages are the
//! unweighted mean over the classes where the rate is defined.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    /// Counts prediction pairs: counts[t][p] = |{i : y_true[i]==t and
    /// y_pred[i]==p}|. Labels index `class_names`.
    pub fn from_labels(
        y_true: &[usize],
        y_pred: &[usize],
        class_names: &[String],
    ) -> Result<ConfusionMatrix> {
        if class_names.is_empty() {
            return Err(Error::InvalidData("class name list is empty".into()));
        }
        if y_true.len() != y_pred.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} true labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let c = class_names.len();
        let mut counts = vec![vec![0u64; c]; c];
        for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t >= c || p >= c {
                return Err(Error::InvalidLabel(format!(
                    "pair {} has labels (true {}, pred {}) outside {} classes",
                    i, t, p, c
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix {
            counts,
            class_names: class_names.to_vec(),
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_count()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest reduction for `class`: (TP, FN, FP, TN).
    pub fn one_vs_rest(&self, class: usize) -> Result<(u64, u64, u64, u64)> {
        if class >= self.class_count() {
            return Err(Error::InvalidLabel(format!(
                "class {} out of range for {} classes",
                class,
                self.class_count()
            )));
        }
        let tp = self.counts[class][class];
        let fn_: u64 = self.counts[class].iter().sum::<u64>() - tp;
        let fp: u64 = (0..self.class_count())
            .map(|t| self.counts[t][class])
            .sum::<u64>()
            - tp;
        let tn = self.total() - tp - fn_ - fp;
        Ok((tp, fn_, fp, tn))
    }

    /// CSV rendering: header `true\pred` then one row per true class.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            out.push_str(&self.class_names[t]);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy = trace / total, computed in integers before the one division.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// One-vs-rest rates for a single class; `None` marks an undefined rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassRates {
    fn any_undefined(&self) -> bool {
        self.sensitivity.is_none()
            || self.specificity.is_none()
            || self.precision.is_none()
            || self.f1.is_none()
    }
}

/// Sensitivity TP/(TP+FN), specificity TN/(TN+FP), precision TP/(TP+FP),
/// and F1 = 2PR/(P+R); each is undefined when its denominator is zero, and
/// F1 additionally requires P and R to both be defined.
pub fn class_rates(cm: &ConfusionMatrix, class: usize) -> Result<ClassRates> {
    let (tp, fn_, fp, tn) = cm.one_vs_rest(class)?;
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ClassRates {
        sensitivity,
        specificity,
        precision,
        f1,
    })
}

/// Unweighted mean of each rate over the classes where it is defined;
/// a rate defined for no class stays undefined.
pub fn macro_rates(cm: &ConfusionMatrix) -> Result<ClassRates> {
    if cm.total() == 0 {
        return Err(Error::UndefinedMetric(
            "macro rates of an empty confusion matrix".into(),
        ));
    }
    let per_class: Vec<ClassRates> = (0..cm.class_count())
        .map(|c| class_rates(cm, c))
        .collect::<Result<_>>()?;
    let mean = |pick: fn(&ClassRates) -> Option<f64>| {
        let defined: Vec<f64> = per_class.iter().filter_map(pick).collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    };
    Ok(ClassRates {
        sensitivity: mean(|r| r.sensitivity),
        specificity: mean(|r| r.specificity),
        precision: mean(|r| r.precision),
        f1: mean(|r| r.f1),
    })
}

/// Full evaluation bundle for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: BTreeMap<String, ClassRates>,
    #[serde(rename = "macro")]
    pub macro_avg: ClassRates,
    /// Rows ordered by true class, columns by predicted class, both in
    /// class-name order.
    pub confusion: Vec<Vec<u64>>,
    /// Class names with at least one undefined rate, in class order.
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
        let accuracy = accuracy(cm)?;
        let macro_avg = macro_rates(cm)?;
        let mut per_class = BTreeMap::new();
        let mut undefined = Vec::new();
        for (c, name) in cm.class_names().iter().enumerate() {
            let rates = class_rates(cm, c)?;
            if rates.any_undefined() {
                undefined.push(name.clone());
            }
            per_class.insert(name.clone(), rates);
        }
        Ok(MetricsReport {
            accuracy,
            per_class,
            macro_avg,
            confusion: cm.counts().to_vec(),
            undefined,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{}", i)).collect()
    }

    fn cm_from(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let c = counts.len();
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for (t, row) in counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    y_true.push(t);
                    y_pred.push(p);
                }
            }
        }
        ConfusionMatrix::from_labels(&y_true, &y_pred, &names(c)).unwrap()
    }

    #[test]
    fn hand_counted_two_class_example() {
        let cm = ConfusionMatrix::from_labels(&[0, 0, 1, 1], &[0, 1, 1, 1], &names(2)).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 1], vec![0, 2]]);
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
    }

    #[test]
    fn random_labels_match_pairwise_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let y_true: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
        let y_pred: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, &names(4)).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                let want = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|(a, b)| **a == t && **b == p)
                    .count() as u64;
                assert_eq!(cm.counts()[t][p], want);
            }
        }
        assert_eq!(cm.total(), 200);
    }

    #[test]
    fn reference_accuracy_values_print_exactly() {
        // 920 test samples: 909 and 911 correct.
        let make = |correct: u64| {
            cm_from(vec![
                vec![correct - 600, 5, 0],
                vec![3, 300, 920 - correct - 8],
                vec![0, 0, 300],
            ])
        };
        let cnn = make(909);
        assert_eq!(cnn.total(), 920);
        let acc_cnn = accuracy(&cnn).unwrap();
        assert_eq!(acc_cnn, 0.9880434782608696);
        assert_eq!(acc_cnn.to_string(), "0.9880434782608696");

        let hybrid = make(911);
        assert_eq!(hybrid.total(), 920);
        let acc_hyb = accuracy(&hybrid).unwrap();
        assert_eq!(acc_hyb, 0.9902173913043478);
        assert_eq!(acc_hyb.to_string(), "0.9902173913043478");
    }

    #[test]
    fn one_vs_rest_reduction_hand_checked() {
        // [[5,2,0],[1,7,1],[0,3,4]]: class 1 has TP=7, FN=2, FP=5, TN=9.
        let cm = cm_from(vec![vec![5, 2, 0], vec![1, 7, 1], vec![0, 3, 4]]);
        assert_eq!(cm.one_vs_rest(1).unwrap(), (7, 2, 5, 9));
        let r = class_rates(&cm, 1).unwrap();
        assert_eq!(r.sensitivity, Some(7.0 / 9.0));
        assert_eq!(r.specificity, Some(9.0 / 14.0));
        assert_eq!(r.precision, Some(7.0 / 12.0));
    }

    #[test]
    fn sensitivity_nine_of_ten() {
        let cm = cm_from(vec![vec![9, 1], vec![0, 5]]);
        assert_eq!(class_rates(&cm, 0).unwrap().sensitivity, Some(0.9));
    }

    #[test]
    fn perfect_diagonal_gives_all_ones() {
        let cm = cm_from(vec![vec![4, 0, 0], vec![0, 6, 0], vec![0, 0, 2]]);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        for c in 0..3 {
            let r = class_rates(&cm, c).unwrap();
            assert_eq!(r.sensitivity, Some(1.0));
            assert_eq!(r.specificity, Some(1.0));
            assert_eq!(r.precision, Some(1.0));
            assert_eq!(r.f1, Some(1.0));
        }
    }

    #[test]
    fn f1_equals_p_when_p_equals_r() {
        // Symmetric errors: P == R == 0.8 -> harmonic mean 0.8.
        let cm = cm_from(vec![vec![8, 2], vec![2, 8]]);
        let r = class_rates(&cm, 0).unwrap();
        assert_eq!(r.precision, r.sensitivity);
        assert!((r.f1.unwrap() - r.precision.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn undefined_rates_are_marked_not_zeroed() {
        // No true class-1 samples and none predicted: sensitivity, precision,
        // f1 all undefined for class 1.
        let cm = cm_from(vec![vec![4, 0], vec![0, 0]]);
        let r = class_rates(&cm, 1).unwrap();
        assert_eq!(r.sensitivity, None);
        assert_eq!(r.precision, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.specificity, Some(1.0));

        // Single-class matrix: specificity denominator TN+FP is zero.
        let all_one = cm_from(vec![vec![5, 0], vec![0, 0]]);
        assert_eq!(class_rates(&all_one, 0).unwrap().specificity, None);

        // TP=0 with nonzero P and R denominators: P=R=0 -> F1 undefined.
        let zero_tp = cm_from(vec![vec![0, 3], vec![3, 0]]);
        let r = class_rates(&zero_tp, 0).unwrap();
        assert_eq!(r.precision, Some(0.0));
        assert_eq!(r.sensitivity, Some(0.0));
        assert_eq!(r.f1, None);
    }

    #[test]
    fn two_class_complementarity_identity() {
        let cm = cm_from(vec![vec![7, 3], vec![2, 8]]);
        let r0 = class_rates(&cm, 0).unwrap();
        let r1 = class_rates(&cm, 1).unwrap();
        assert_eq!(r1.sensitivity, r0.specificity);
        assert_eq!(r0.sensitivity, r1.specificity);
    }

    #[test]
    fn macro_is_defined_mean() {
        // Sensitivities 1.0 and 0.5; class 2 has no true samples (skipped).
        let cm = cm_from(vec![vec![4, 0, 0], vec![2, 2, 0], vec![0, 0, 0]]);
        let m = macro_rates(&cm).unwrap();
        assert_eq!(m.sensitivity, Some(0.75));
    }

    #[test]
    fn macro_matches_independent_mean_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let counts: Vec<Vec<u64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.gen_range(0..6)).collect())
                .collect();
            if counts.iter().flatten().sum::<u64>() == 0 {
                continue;
            }
            let cm = cm_from(counts);
            let m = macro_rates(&cm).unwrap();
            for (pick, got) in [
                ((|r: &ClassRates| r.sensitivity) as fn(&ClassRates) -> Option<f64>, m.sensitivity),
                (|r: &ClassRates| r.specificity, m.specificity),
                (|r: &ClassRates| r.precision, m.precision),
                (|r: &ClassRates| r.f1, m.f1),
            ] {
                let vals: Vec<f64> = (0..3)
                    .filter_map(|c| pick(&class_rates(&cm, c).unwrap()))
                    .collect();
                match got {
                    None => assert!(vals.is_empty()),
                    Some(v) => {
                        let want = vals.iter().sum::<f64>() / vals.len() as f64;
                        assert!((v - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn report_schema_and_undefined_list() {
        let cm = cm_from(vec![vec![4, 0], vec![0, 0]]);
        let report = MetricsReport::from_confusion(&cm).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.undefined, vec!["c0".to_string(), "c1".to_string()]);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"macro\""), "serde rename must apply");
        assert!(json.contains("\"specificity\":null"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn empty_matrix_is_undefined_metric_error() {
        let cm = ConfusionMatrix::from_labels(&[], &[], &names(2)).unwrap();
        assert!(matches!(accuracy(&cm), Err(Error::UndefinedMetric(_))));
        assert!(matches!(macro_rates(&cm), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn csv_rendering_is_pinned() {
        let cm = cm_from(vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(
            cm.to_csv_string(),
            "true\\pred,c0,c1\nc0,1,2\nc1,3,4\n"
        );
    }

    #[test]
    fn label_validation() {
        assert!(matches!(
            ConfusionMatrix::from_labels(&[0, 2], &[0, 0], &names(2)),
            Err(Error::InvalidLabel(_))
        ));
        assert!(matches!(
            ConfusionMatrix::from_labels(&[0], &[0, 1], &names(2)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    proptest! {
        /// Permuting the class order permutes per-class metrics and leaves
        /// accuracy and macro averages unchanged.
        #[test]
        fn permutation_invariance(
            entries in proptest::collection::vec(0u64..6, 9),
        ) {
            prop_assume!(entries.iter().sum::<u64>() > 0);
            let counts: Vec<Vec<u64>> = entries.chunks(3).map(|r| r.to_vec()).collect();
            let cm = cm_from(counts.clone());
            // Permutation (2, 0, 1): new class i is old class perm[i].
            let perm = [2usize, 0, 1];
            let permuted: Vec<Vec<u64>> = (0..3)
                .map(|t| (0..3).map(|p| counts[perm[t]][perm[p]]).collect())
                .collect();
            let cm_p = cm_from(permuted);
            prop_assert_eq!(accuracy(&cm).unwrap(), accuracy(&cm_p).unwrap());
            for (new, &old) in perm.iter().enumerate() {
                prop_assert_eq!(
                    class_rates(&cm_p, new).unwrap(),
                    class_rates(&cm, old).unwrap()
                );
            }
            let (ma, mb) = (macro_rates(&cm).unwrap(), macro_rates(&cm_p).unwrap());
            for (a, b) in [
                (ma.sensitivity, mb.sensitivity),
                (ma.specificity, mb.specificity),
                (ma.precision, mb.precision),
                (ma.f1, mb.f1),
            ] {
                match (a, b) {
                    (None, None) => {}
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    _ => prop_assert!(false, "defined-ness must match"),
                }
            }
        }
    }
}
