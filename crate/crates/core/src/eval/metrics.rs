use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Classification scores for one set of predictions.
///
/// Per-class F1 is 0 when precision + recall is 0. The unweighted F1 is the
/// plain mean over all `classes`, so a class with no support contributes 0;
/// the weighted F1 averages by support and therefore ignores such classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub weighted_f1: f64,
    pub unweighted_f1: f64,
    pub accuracy: f64,
    /// Generations that could not be mapped to an option (language-model path).
    pub unparsed: usize,
}

pub fn compute_metrics(preds: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(Error::Domain("cannot score an empty prediction set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::Domain(format!("class {bad} out of range for {classes} classes")));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    Ok(from_confusion(confusion))
}

/// Scores derived from a confusion matrix (`confusion[true][predicted]`).
pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Metrics {
    let classes = confusion.len();
    let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<u64> = (0..classes).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
    let total: u64 = support.iter().sum();
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision: Vec<f64> = (0..classes).map(|c| ratio(confusion[c][c], predicted[c])).collect();
    let recall: Vec<f64> = (0..classes).map(|c| ratio(confusion[c][c], support[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let weighted_f1 = f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / total.max(1) as f64;
    let unweighted_f1 = f1.iter().sum::<f64>() / classes.max(1) as f64;
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    Metrics {
        classes,
        accuracy: ratio(correct, total),
        confusion,
        support,
        precision,
        recall,
        f1,
        weighted_f1,
        unweighted_f1,
        unparsed: 0,
    }
}

impl Metrics {
    pub fn count(&self) -> u64 {
        self.support.iter().sum()
    }

    /// Confusion matrix as CSV with class names as row and column headers.
    pub fn confusion_csv(&self, names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\pred".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// `W_F1 x  U_F1 y  ACC z` on one line.
    pub fn summary(&self) -> String {
        format!(
            "W_F1 {:.4}  U_F1 {:.4}  ACC {:.4}",
            self.weighted_f1, self.unweighted_f1, self.accuracy
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let m = compute_metrics(&y, &y, 3).unwrap();
        assert_eq!((m.weighted_f1, m.unweighted_f1, m.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_majority_on_elderly_binary_counts() {
        let labels: Vec<usize> = [vec![0; 258], vec![1; 79]].concat();
        let m = compute_metrics(&vec![0; 337], &labels, 2).unwrap();
        // F1_0 = 2·258 / (2·258 + 79)
        let f1_0 = 516.0 / 595.0;
        assert!((m.f1[0] - f1_0).abs() < 1e-12 && m.f1[1] == 0.0);
        assert!((m.weighted_f1 - 0.6640).abs() < 1e-4, "{}", m.weighted_f1);
        assert!((m.unweighted_f1 - 0.4337).abs() < 1e-4, "{}", m.unweighted_f1);
    }

    #[test]
    fn absent_class_counts_in_macro_only() {
        let m = compute_metrics(&[0, 0, 0], &[0, 0, 0], 2).unwrap();
        assert_eq!(m.weighted_f1, 1.0);
        assert_eq!(m.unweighted_f1, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(compute_metrics(&[], &[], 2), Err(Error::Domain(_))));
        assert!(matches!(compute_metrics(&[0], &[0, 1], 2), Err(Error::Dimension(_))));
        assert!(matches!(compute_metrics(&[2], &[0], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn confusion_csv_layout() {
        let m = compute_metrics(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        let names = vec!["Normal".to_string(), "Depressed".to_string()];
        assert_eq!(
            m.confusion_csv(&names).unwrap(),
            "true\\pred,Normal,Depressed\nNormal,1,1\nDepressed,0,1\n"
        );
    }

    fn pairs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..6).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..80)))
    }

    proptest! {
        #[test]
        fn permutation_invariant((c, mut v) in pairs(), seed in any::<u64>()) {
            let (p, y): (Vec<_>, Vec<_>) = v.iter().cloned().unzip();
            let a = compute_metrics(&p, &y, c).unwrap();
            crate::numcore::Rng::new(seed).shuffle(&mut v);
            let (p, y): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            prop_assert_eq!(a, compute_metrics(&p, &y, c).unwrap());
        }

        #[test]
        fn rows_sum_to_support_and_scores_bounded((c, v) in pairs()) {
            let (p, y): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let m = compute_metrics(&p, &y, c).unwrap();
            for k in 0..c {
                let s = y.iter().filter(|&&l| l == k).count() as u64;
                prop_assert_eq!(m.confusion[k].iter().sum::<u64>(), s);
            }
            prop_assert_eq!(m.count(), p.len() as u64);
            for s in [m.weighted_f1, m.unweighted_f1, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn equal_support_makes_weighted_equal_macro(c in 2usize..5, per in 1usize..10, p in prop::collection::vec(0usize..5, 50)) {
            let y: Vec<usize> = (0..c * per).map(|i| i % c).collect();
            let p: Vec<usize> = y.iter().enumerate().map(|(i, _)| p[i % p.len()] % c).collect();
            let m = compute_metrics(&p, &y, c).unwrap();
            prop_assert!((m.weighted_f1 - m.unweighted_f1).abs() < 1e-12);
        }
    }
}
