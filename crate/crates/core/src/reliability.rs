//! Agreement and evaluation metrics.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::model::QuestionView;
use crate::scalar::Field;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReliabilityError {
    #[error("chance agreement is 1: every rating falls in a single class")]
    DegenerateAgreement,
    #[error("no item has at least two ratings")]
    NoRatableItems,
    #[error("task \"{0}\" is annotated but has no reference label")]
    MissingReference(String),
    #[error("task sets differ: {0}")]
    TaskMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaReport<T> {
    pub kappa: T,
    pub items_used: usize,
    /// Items with fewer than two ratings.
    pub items_skipped: usize,
    /// Share of all used ratings falling in each class.
    pub per_class_p: Vec<T>,
}

/// Fleiss' kappa with a per-item number of raters.
///
/// Items with fewer than two ratings are skipped. For item `i` with `n_i`
/// ratings of which `n_ij` fall in class `j`, the observed agreement is
/// `sum_j n_ij (n_ij - 1) / (n_i (n_i - 1))`; chance agreement uses the pooled
/// class shares of the used items.
pub fn fleiss_kappa<T: Field>(view: &QuestionView) -> Result<KappaReport<T>, ReliabilityError> {
    let counts = view.class_counts();
    let k = view.num_classes();
    let mut used = 0usize;
    let mut agreement_sum = T::zero();
    let mut class_totals = vec![0usize; k];
    let mut rating_total = 0usize;
    for row in &counts {
        let n: usize = row.iter().sum();
        if n < 2 {
            continue;
        }
        used += 1;
        let pairs: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        agreement_sum = agreement_sum + T::from_count(pairs) / T::from_count(n * (n - 1));
        for (total, &c) in class_totals.iter_mut().zip(row) {
            *total += c;
        }
        rating_total += n;
    }
    if used == 0 {
        return Err(ReliabilityError::NoRatableItems);
    }
    let per_class_p: Vec<T> = class_totals
        .iter()
        .map(|&c| T::from_count(c) / T::from_count(rating_total))
        .collect();
    let chance = per_class_p.iter().fold(T::zero(), |acc, &p| acc + p * p);
    if chance == T::one() {
        return Err(ReliabilityError::DegenerateAgreement);
    }
    let observed = agreement_sum / T::from_count(used);
    Ok(KappaReport {
        kappa: (observed - chance) / (T::one() - chance),
        items_used: used,
        items_skipped: counts.len() - used,
        per_class_p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerErrorRates<T> {
    pub worker_id: String,
    /// Row `k`: how the worker answered tasks whose reference class is `k`.
    /// `None` when the worker never saw such a task.
    pub rows: Vec<Option<Vec<T>>>,
}

/// Empirical confusion matrix of every annotating worker against a
/// reference labeling aligned with the view's tasks.
pub fn worker_error_rates<T: Field>(
    view: &QuestionView,
    reference: &[Option<usize>],
) -> Result<Vec<WorkerErrorRates<T>>, ReliabilityError> {
    let k = view.num_classes();
    if reference.len() != view.num_tasks() {
        return Err(ReliabilityError::TaskMismatch(format!(
            "{} reference labels for {} tasks",
            reference.len(),
            view.num_tasks()
        )));
    }
    let mut counts: Vec<Option<Vec<Vec<usize>>>> = vec![None; view.num_workers()];
    for t in view.triples() {
        let truth = reference[t.task]
            .filter(|&c| c < k)
            .ok_or_else(|| ReliabilityError::MissingReference(view.task_ids()[t.task].clone()))?;
        let m = counts[t.worker].get_or_insert_with(|| vec![vec![0; k]; k]);
        m[truth][t.class] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .filter_map(|(w, m)| m.map(|m| (w, m)))
        .map(|(w, m)| WorkerErrorRates {
            worker_id: view.worker_ids()[w].clone(),
            rows: m
                .into_iter()
                .map(|row| {
                    let n: usize = row.iter().sum();
                    (n > 0).then(|| {
                        row.iter()
                            .map(|&c| T::from_count(c) / T::from_count(n))
                            .collect()
                    })
                })
                .collect(),
        })
        .collect())
}

/// Binary confusion counts with the reference labeling as rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl BinaryCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// Ratios are `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub counts: BinaryCounts,
    pub precision: Option<T>,
    pub recall: Option<T>,
    pub specificity: Option<T>,
    pub negative_predictive_value: Option<T>,
    pub accuracy: Option<T>,
}

fn ratio<T: Field>(num: usize, den: usize) -> Option<T> {
    (den > 0).then(|| T::from_count(num) / T::from_count(den))
}

impl<T: Field> EvalReport<T> {
    pub fn from_counts(counts: BinaryCounts) -> Self {
        let BinaryCounts { tp, fn_, fp, tn } = counts;
        Self {
            counts,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            negative_predictive_value: ratio(tn, tn + fn_),
            accuracy: ratio(tp + tn, counts.total()),
        }
    }
}

/// Compares per-task yes/no predictions with a reference over the same task
/// set.
pub fn binary_eval<T: Field>(
    predicted: &[(String, bool)],
    reference: &[(String, bool)],
) -> Result<EvalReport<T>, ReliabilityError> {
    let mut truth: HashMap<&str, bool> = HashMap::with_capacity(reference.len());
    for (id, v) in reference {
        if truth.insert(id, *v).is_some() {
            return Err(ReliabilityError::TaskMismatch(format!(
                "task \"{id}\" appears twice in the reference"
            )));
        }
    }
    let mut seen = HashSet::with_capacity(predicted.len());
    let mut counts = BinaryCounts::default();
    for (id, pred) in predicted {
        if !seen.insert(id.as_str()) {
            return Err(ReliabilityError::TaskMismatch(format!(
                "task \"{id}\" appears twice in the predictions"
            )));
        }
        let actual = *truth.get(id.as_str()).ok_or_else(|| {
            ReliabilityError::TaskMismatch(format!("task \"{id}\" has no reference label"))
        })?;
        match (actual, *pred) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fn_ += 1,
            (false, true) => counts.fp += 1,
            (false, false) => counts.tn += 1,
        }
    }
    if let Some((id, _)) = reference.iter().find(|(id, _)| !seen.contains(id.as_str())) {
        return Err(ReliabilityError::TaskMismatch(format!(
            "task \"{id}\" has no prediction"
        )));
    }
    Ok(EvalReport::from_counts(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Triple;
    use num_rational::Ratio;

    /// Items given as strings of class letters, one rater per position.
    fn ratings(items: &[&str], k: usize) -> QuestionView {
        let mut triples = Vec::new();
        let mut worker = 0;
        for (task, item) in items.iter().enumerate() {
            for c in item.bytes() {
                triples.push(Triple { task, worker, class: (c - b'a') as usize });
                worker += 1;
            }
        }
        QuestionView::synthetic(k, items.len(), worker.max(1), triples).unwrap()
    }

    #[test]
    fn worked_example_is_exactly_one_third() {
        let view = ratings(&["aaa", "aab", "bbb", "abb"], 2);
        let exact = fleiss_kappa::<Ratio<i64>>(&view).unwrap();
        assert_eq!(exact.kappa, Ratio::new(1, 3));
        let approx = fleiss_kappa::<f64>(&view).unwrap();
        assert!((approx.kappa - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(approx.items_used, 4);
        assert_eq!(approx.per_class_p, vec![0.5, 0.5]);
    }

    #[test]
    fn perfect_agreement_is_one() {
        let view = ratings(&["aaa", "bb", "aaaa"], 2);
        assert_eq!(fleiss_kappa::<Ratio<i64>>(&view).unwrap().kappa, Ratio::from_integer(1));
    }

    #[test]
    fn degenerate_and_empty() {
        let view = ratings(&["aaa", "aa"], 2);
        assert_eq!(fleiss_kappa::<f64>(&view).unwrap_err(), ReliabilityError::DegenerateAgreement);
        let view = ratings(&["a", "b", ""], 2);
        assert_eq!(fleiss_kappa::<f64>(&view).unwrap_err(), ReliabilityError::NoRatableItems);
    }

    #[test]
    fn single_rating_items_are_skipped() {
        let view = ratings(&["aaa", "aab", "bbb", "abb", "a", ""], 2);
        let r = fleiss_kappa::<Ratio<i64>>(&view).unwrap();
        assert_eq!((r.items_used, r.items_skipped), (4, 2));
        assert_eq!(r.kappa, Ratio::new(1, 3));
    }

    #[test]
    fn error_rates() {
        // worker 0 answers b then a on two tasks whose reference is a
        let view = QuestionView::synthetic(
            2,
            3,
            3,
            vec![
                Triple { task: 0, worker: 0, class: 1 },
                Triple { task: 1, worker: 0, class: 0 },
                Triple { task: 2, worker: 1, class: 1 },
            ],
        )
        .unwrap();
        let rates = worker_error_rates::<Ratio<i64>>(&view, &[Some(0), Some(0), Some(1)]).unwrap();
        assert_eq!(rates.len(), 2, "idle worker w2 must be absent");
        assert_eq!(rates[0].rows[0], Some(vec![Ratio::new(1, 2), Ratio::new(1, 2)]));
        assert_eq!(rates[0].rows[1], None);
        assert_eq!(rates[1].rows[1], Some(vec![Ratio::from_integer(0), Ratio::from_integer(1)]));

        let err = worker_error_rates::<f64>(&view, &[Some(0), None, Some(1)]).unwrap_err();
        assert_eq!(err, ReliabilityError::MissingReference("t1".into()));
    }

    fn labels(v: &[(&str, bool)]) -> Vec<(String, bool)> {
        v.iter().map(|(id, b)| (id.to_string(), *b)).collect()
    }

    #[test]
    fn identical_labelings_score_one() {
        let l = labels(&[("a", true), ("b", false), ("c", true)]);
        let r = binary_eval::<f64>(&l, &l).unwrap();
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.recall, Some(1.0));
        assert_eq!(r.accuracy, Some(1.0));
    }

    #[test]
    fn undefined_precision_is_flagged() {
        let pred = labels(&[("a", false), ("b", false)]);
        let truth = labels(&[("a", true), ("b", false)]);
        let r = binary_eval::<f64>(&pred, &truth).unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.recall, Some(0.0));
    }

    #[test]
    fn mismatched_task_sets() {
        let pred = labels(&[("a", false)]);
        let truth = labels(&[("a", true), ("b", false)]);
        assert!(matches!(
            binary_eval::<f64>(&pred, &truth),
            Err(ReliabilityError::TaskMismatch(_))
        ));
        assert!(binary_eval::<f64>(&truth, &pred).is_err());
    }

    #[test]
    fn albania_table_counts() {
        let r = EvalReport::<f64>::from_counts(BinaryCounts { tp: 546, fn_: 59, fp: 108, tn: 194 });
        assert!((r.precision.unwrap() - 0.8349).abs() < 1e-4);
        assert!((r.recall.unwrap() - 0.9025).abs() < 1e-4);
        assert!((r.accuracy.unwrap() - 0.8159).abs() < 1e-4);
    }
}
