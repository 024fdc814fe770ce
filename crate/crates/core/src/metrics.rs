use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalReport {
    pub fn confusion_csv(&self, label_names: Option<&[String]>) -> String {
        let name = |i: usize| match label_names {
            Some(names) if i < names.len() => names[i].clone(),
            _ => i.to_string(),
        };
        let k = self.confusion.len();
        let mut out = String::from("truth\\pred");
        for j in 0..k {
            out.push(',');
            out.push_str(&name(j));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&name(i));
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, macro-F1 and the confusion matrix. Every class in
/// `0..num_classes` counts towards the macro average; a class with no
/// support and no predictions scores F1 = 0.
pub fn evaluate(preds: &[usize], truths: &[usize], num_classes: usize) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            found: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    if num_classes == 0 {
        return Err(Error::EmptyInput("no classes".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        let worst = p.max(t);
        if worst >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: worst,
                limit: num_classes,
            });
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64;
    Ok(EvalReport {
        n: preds.len(),
        accuracy: ratio(correct, preds.len()),
        macro_f1,
        confusion,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and population standard deviation across seeds.
pub fn seed_summary(values: &[f64]) -> Result<SeedSummary> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no seed results".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("seed results".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(SeedSummary {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn majority_predictor() {
        let r = evaluate(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        // class 0: p=0.5, r=1 → 2/3; class 1: 0.
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![2, 0]]);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let r = evaluate(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&[0], &[0, 1], 2), Err(Error::LengthMismatch { .. })));
        assert!(matches!(evaluate(&[], &[], 2), Err(Error::EmptyInput(_))));
        assert!(matches!(evaluate(&[2], &[0], 2), Err(Error::IndexOutOfRange { .. })));
        assert!(seed_summary(&[]).is_err());
    }

    #[test]
    fn summary_population_std() {
        let s = seed_summary(&[0.4, 0.6]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let r = evaluate(&[1, 0], &[0, 0], 2).unwrap();
        let names = vec!["neg".to_string(), "pos".to_string()];
        assert_eq!(r.confusion_csv(Some(&names)), "truth\\pred,neg,pos\nneg,1,1\npos,0,0\n");
    }

    proptest! {
        #[test]
        fn perfect_predictions(truths in prop::collection::vec(0usize..4, 1..60)) {
            let r = evaluate(&truths, &truths, 4).unwrap();
            prop_assert_eq!(r.accuracy, 1.0);
            prop_assert_eq!(r.confusion.iter().flatten().sum::<usize>(), truths.len());
        }

        #[test]
        fn relabelling_invariance(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = evaluate(&p, &t, 3).unwrap();
            let perm = |x: &usize| (x + 1) % 3;
            let b = evaluate(&p.iter().map(perm).collect::<Vec<_>>(), &t.iter().map(perm).collect::<Vec<_>>(), 3).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-15);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        }
    }
}
