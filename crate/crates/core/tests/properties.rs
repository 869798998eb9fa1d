use std::collections::BTreeSet;

use cck_core::aggregation::{
    fit_dawid_skene, fit_multinomial, majority_vote, posteriors, Confusion, WorkerConfusion,
};
use cck_core::reliability::{binary_eval, fleiss_kappa};
use cck_core::{
    fit, validate_dataset, Annotation, DependencyRule, EmConfig, LabelSpace, ModelKind,
    ModelParams, QuestionView, Triple,
};
use ndarray::Array2;
use proptest::prelude::*;

/// Direct evaluation of `q_i(k) ∝ tau_k * prod_a pi^(w_a)(k, l_a)` in linear
/// space, one task at a time.
fn brute_force_posterior(view: &QuestionView, params: &ModelParams) -> Vec<Vec<f64>> {
    let k = view.num_classes();
    let matrix_for = |worker: usize| -> &Array2<f64> {
        match &params.confusion {
            Confusion::Pooled(m) => m,
            Confusion::PerWorker(ws) => {
                &ws.iter()
                    .find(|w| w.worker_id == view.worker_ids()[worker])
                    .unwrap()
                    .matrix
            }
        }
    };
    (0..view.num_tasks())
        .map(|i| {
            let mut unnorm = params.tau.clone();
            for t in view.triples().iter().filter(|t| t.task == i) {
                let m = matrix_for(t.worker);
                for (c, u) in unnorm.iter_mut().enumerate() {
                    *u *= m[[c, t.class]];
                }
            }
            let z: f64 = unnorm.iter().sum();
            unnorm.iter().map(|u| u / z).collect::<Vec<_>>()
        })
        .map(|row| {
            assert_eq!(row.len(), k);
            row
        })
        .collect()
}

fn simplex(weights: &[f64]) -> Vec<f64> {
    let z: f64 = weights.iter().sum();
    weights.iter().map(|w| w / z).collect()
}

fn stochastic(k: usize, raw: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((k, k));
    for r in 0..k {
        let row = simplex(&raw[r * k..(r + 1) * k]);
        for c in 0..k {
            m[[r, c]] = row[c];
        }
    }
    m
}

prop_compose! {
    /// Small instance: ≤4 tasks, ≤3 workers, ≤3 classes.
    fn small_view()(k in 2usize..=3, tasks in 1usize..=4, workers in 1usize..=3)
        (triples in prop::collection::vec((0..tasks, 0..workers, 0..k), 1..10),
         k in Just(k), tasks in Just(tasks), workers in Just(workers)) -> QuestionView {
        let triples = triples
            .into_iter()
            .map(|(task, worker, class)| Triple { task, worker, class })
            .collect();
        QuestionView::synthetic(k, tasks, workers, triples).unwrap()
    }
}

prop_compose! {
    /// Views with a few more tasks, every task annotated at least once.
    fn medium_view()(k in 2usize..=4, tasks in 2usize..=25, workers in 1usize..=6)
        (base in prop::collection::vec((0..workers, 0..k), tasks),
         extra in prop::collection::vec((0..tasks, 0..workers, 0..k), 0..60),
         k in Just(k), tasks in Just(tasks), workers in Just(workers)) -> QuestionView {
        let mut triples: Vec<Triple> = base
            .into_iter()
            .enumerate()
            .map(|(task, (worker, class))| Triple { task, worker, class })
            .collect();
        triples.extend(extra.into_iter().map(|(task, worker, class)| Triple { task, worker, class }));
        QuestionView::synthetic(k, tasks, workers, triples).unwrap()
    }
}

fn random_params(view: &QuestionView, raw: &[f64], per_worker: bool) -> ModelParams {
    let k = view.num_classes();
    let tau = simplex(&raw[..k]);
    let mut offset = k;
    let mut next_matrix = || {
        let m = stochastic(k, &raw[offset..offset + k * k]);
        offset += k * k;
        m
    };
    let confusion = if per_worker {
        Confusion::PerWorker(
            view.worker_ids()
                .iter()
                .map(|id| WorkerConfusion {
                    worker_id: id.clone(),
                    matrix: next_matrix(),
                })
                .collect(),
        )
    } else {
        Confusion::Pooled(next_matrix())
    };
    ModelParams {
        classes: view.classes().to_vec(),
        tau,
        confusion,
    }
}

fn assert_rows_normalized(probs: &Array2<f64>) {
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() <= 1e-9, "row sums to {}", row.sum());
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn e_step_matches_brute_force(
        view in small_view(),
        raw in prop::collection::vec(0.05f64..1.0, 3 + 3 * 9),
        per_worker in any::<bool>(),
    ) {
        let params = random_params(&view, &raw, per_worker);
        let q = posteriors(&view, &params).unwrap();
        let oracle = brute_force_posterior(&view, &params);
        for (i, row) in oracle.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                prop_assert!((q[[i, c]] - p).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn fitted_posteriors_match_brute_force(view in small_view()) {
        for result in [
            fit_multinomial(&view, &EmConfig::default()).unwrap(),
            fit_dawid_skene(&view, &EmConfig::default()).unwrap(),
        ] {
            let oracle = brute_force_posterior(&view, result.params.as_ref().unwrap());
            for (i, row) in oracle.iter().enumerate() {
                for (c, &p) in row.iter().enumerate() {
                    prop_assert!((result.probs[[i, c]] - p).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn objective_never_decreases(view in medium_view()) {
        for result in [
            fit_multinomial(&view, &EmConfig::default()).unwrap(),
            fit_dawid_skene(&view, &EmConfig::default()).unwrap(),
        ] {
            let trace = &result.diagnostics.objective_trace;
            prop_assert!(!trace.is_empty());
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn results_are_normalized_and_deterministic(view in medium_view()) {
        for model in [ModelKind::Mv, ModelKind::Mm, ModelKind::Ds] {
            let a = fit(&view, model, &EmConfig::default()).unwrap();
            let b = fit(&view, model, &EmConfig::default()).unwrap();
            assert_rows_normalized(&a.probs);
            prop_assert_eq!(&a, &b);
            if let Some(p) = &a.params {
                prop_assert!(p.check(1e-9).is_ok());
                prop_assert!(p.tau.iter().all(|&t| t > 0.0));
            }
        }
    }

    #[test]
    fn class_permutation_equivariance(view in medium_view(), seed in any::<u64>()) {
        let k = view.num_classes();
        let mut perm: Vec<usize> = (0..k).collect();
        // deterministic shuffle from the seed
        for i in (1..k).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let permuted = view.permute_classes(&perm).unwrap();
        for model in [ModelKind::Mv, ModelKind::Mm, ModelKind::Ds] {
            let a = fit(&view, model, &EmConfig::default()).unwrap();
            let b = fit(&permuted, model, &EmConfig::default()).unwrap();
            for i in 0..view.num_tasks() {
                for (new, &old) in perm.iter().enumerate() {
                    prop_assert!((b.probs[[i, new]] - a.probs[[i, old]]).abs() <= 1e-9);
                }
                // argmax equivariance where the maximum is clear
                let row = a.probs.row(i);
                let top = row[a.hard_labels[i]];
                if row.iter().filter(|&&p| (p - top).abs() <= 1e-9).count() == 1 {
                    prop_assert_eq!(perm[b.hard_labels[i]], a.hard_labels[i]);
                }
            }
            if let (Some(pa), Some(pb)) = (&a.params, &b.params) {
                for (new, &old) in perm.iter().enumerate() {
                    prop_assert!((pb.tau[new] - pa.tau[old]).abs() <= 1e-9);
                }
                for (ma, mb) in pa.confusion.matrices().iter().zip(pb.confusion.matrices()) {
                    for (r, &ro) in perm.iter().enumerate() {
                        for (c, &co) in perm.iter().enumerate() {
                            prop_assert!((mb[[r, c]] - ma[[ro, co]]).abs() <= 1e-9);
                        }
                    }
                }
            }
        }
    }

    /// Every worker labels every task with its true class.
    #[test]
    fn perfect_crowd_recovery(
        k in 2usize..=5,
        truth in prop::collection::vec(0usize..5, 1..30),
        workers in 2usize..=6,
    ) {
        let truth: Vec<usize> = truth.into_iter().map(|z| z % k).collect();
        let mut triples = Vec::new();
        for (task, &z) in truth.iter().enumerate() {
            for worker in 0..workers {
                triples.push(Triple { task, worker, class: z });
            }
        }
        let view = QuestionView::synthetic(k, truth.len(), workers, triples).unwrap();
        for model in [ModelKind::Mv, ModelKind::Mm, ModelKind::Ds] {
            let r = fit(&view, model, &EmConfig::default()).unwrap();
            prop_assert_eq!(&r.hard_labels, &truth, "model {}", model);
        }
    }

    #[test]
    fn kappa_invariant_under_relabeling_and_reordering(view in medium_view(), rot in 1usize..4) {
        let Ok(base) = fleiss_kappa::<f64>(&view) else { return Ok(()) };
        let k = view.num_classes();
        let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let relabeled = fleiss_kappa::<f64>(&view.permute_classes(&perm).unwrap()).unwrap();
        prop_assert!((relabeled.kappa - base.kappa).abs() <= 1e-12);
        // reversing the task order
        let n = view.num_tasks();
        let reordered = QuestionView::synthetic(
            k, n, view.num_workers(),
            view.triples().iter().map(|t| Triple { task: n - 1 - t.task, ..*t }).collect(),
        ).unwrap();
        prop_assert!((fleiss_kappa::<f64>(&reordered).unwrap().kappa - base.kappa).abs() <= 1e-12);
        prop_assert!(base.kappa <= 1.0 + 1e-12);
    }

    #[test]
    fn binary_eval_symmetries(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let pred: Vec<(String, bool)> = pairs.iter().enumerate().map(|(i, p)| (format!("t{i}"), p.0)).collect();
        let truth: Vec<(String, bool)> = pairs.iter().enumerate().map(|(i, p)| (format!("t{i}"), p.1)).collect();
        let r = binary_eval::<f64>(&pred, &truth).unwrap();

        let mut rev_pred = pred.clone();
        rev_pred.reverse();
        prop_assert_eq!(&binary_eval::<f64>(&rev_pred, &truth).unwrap(), &r);

        let flip = |v: &[(String, bool)]| v.iter().map(|(id, b)| (id.clone(), !b)).collect::<Vec<_>>();
        let s = binary_eval::<f64>(&flip(&pred), &flip(&truth)).unwrap();
        prop_assert_eq!(s.precision, r.negative_predictive_value);
        prop_assert_eq!(s.recall, r.specificity);
        prop_assert_eq!(s.accuracy, r.accuracy);
    }
}

fn annotations_strategy() -> impl Strategy<Value = Vec<Annotation>> {
    prop::collection::vec((0usize..5, 0usize..4, 0usize..2, 0usize..3), 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(n, (task, worker, question, label))| {
                let (q, l) = if question == 0 {
                    ("relevant", ["yes", "Not relevant", "Not answered"][label])
                } else {
                    ("damage", ["minimal", "severe", "Not answered"][label])
                };
                Annotation::new(format!("a{n}"), format!("t{task}"), format!("w{worker}"), q, l)
            })
            .collect()
    })
}

fn spaces() -> Vec<LabelSpace> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut excluded = std::collections::BTreeMap::new();
    excluded.insert("Not answered".to_string(), None);
    vec![
        LabelSpace::from_named_mapping(
            "relevant",
            s(&["yes", "Not relevant", "Not answered"]),
            s(&["yes", "Not relevant"]),
            &excluded,
        )
        .unwrap(),
        LabelSpace::from_named_mapping(
            "damage",
            s(&["minimal", "severe", "Not answered"]),
            s(&["minimal", "severe"]),
            &excluded,
        )
        .unwrap(),
    ]
}

fn rule() -> DependencyRule {
    DependencyRule {
        question_id: "damage".into(),
        depends_on: "relevant".into(),
        excluding_labels: BTreeSet::from(["Not relevant".to_string()]),
    }
}

proptest! {
    #[test]
    fn revalidation_is_a_no_op(annotations in annotations_strategy()) {
        let ds = validate_dataset(None, vec![], annotations, spaces(), vec![rule()]).unwrap();
        let (tasks, workers, annotations, spaces, deps) = ds.clone().into_parts();
        let again = validate_dataset(Some(tasks), workers, annotations, spaces, deps).unwrap();
        prop_assert_eq!(again, ds);
    }

    #[test]
    fn dependency_filter_is_monotone_and_idempotent(annotations in annotations_strategy()) {
        let ds = validate_dataset(None, vec![], annotations, spaces(), vec![rule()]).unwrap();
        let (once, dropped) = ds.filter_declared_dependencies();
        prop_assert_eq!(once.annotations().len() + dropped, ds.annotations().len());
        prop_assert!(once.annotations().iter().all(|a| ds.annotations().contains(a)));
        let (twice, dropped_again) = once.filter_declared_dependencies();
        prop_assert_eq!(dropped_again, 0);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn projection_accounts_for_every_annotation(annotations in annotations_strategy()) {
        let ds = validate_dataset(None, vec![], annotations, spaces(), vec![]).unwrap();
        for q in ["relevant", "damage"] {
            let view = ds.project_question(q).unwrap();
            let total = ds.annotations().iter().filter(|a| a.question_id == q).count();
            prop_assert_eq!(view.triples().len() + view.excluded(), total);
            let mv = majority_vote::<f64>(&view);
            assert_rows_normalized(&mv.probs);
        }
    }
}

#[test]
fn two_task_two_worker_multinomial_matches_oracle() {
    let view = QuestionView::synthetic(
        2,
        2,
        2,
        vec![
            Triple { task: 0, worker: 0, class: 0 },
            Triple { task: 0, worker: 1, class: 1 },
            Triple { task: 1, worker: 0, class: 1 },
            Triple { task: 1, worker: 1, class: 1 },
        ],
    )
    .unwrap();
    let r = fit_multinomial(&view, &EmConfig::default()).unwrap();
    let oracle = brute_force_posterior(&view, r.params.as_ref().unwrap());
    for i in 0..2 {
        for c in 0..2 {
            assert!((r.probs[[i, c]] - oracle[i][c]).abs() <= 1e-9);
        }
    }
}

#[test]
fn adversarial_dawid_skene_matches_oracle() {
    // w2 systematically contradicts w0 and w1 on three tasks
    let mut triples = Vec::new();
    for (task, truth) in [(0, 0), (1, 1), (2, 0)] {
        triples.push(Triple { task, worker: 0, class: truth });
        triples.push(Triple { task, worker: 1, class: truth });
        triples.push(Triple { task, worker: 2, class: 1 - truth });
    }
    let view = QuestionView::synthetic(2, 3, 3, triples).unwrap();
    let r = fit_dawid_skene(&view, &EmConfig::default()).unwrap();
    let oracle = brute_force_posterior(&view, r.params.as_ref().unwrap());
    for i in 0..3 {
        for c in 0..2 {
            assert!((r.probs[[i, c]] - oracle[i][c]).abs() <= 1e-9);
        }
    }
    for w in r.diagnostics.objective_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
    assert_eq!(r.hard_labels, vec![0, 1, 0]);
}

#[test]
fn perfect_agreement_gives_diagonal_dominance() {
    let mut triples = Vec::new();
    let truth = [0, 1, 2, 1, 0, 2];
    for (task, &z) in truth.iter().enumerate() {
        for worker in 0..3 {
            triples.push(Triple { task, worker, class: z });
        }
    }
    let view = QuestionView::synthetic(3, truth.len(), 3, triples).unwrap();
    let r = fit_dawid_skene(&view, &EmConfig::default()).unwrap();
    assert_eq!(r.hard_labels, truth);
    for m in r.params.unwrap().confusion.matrices() {
        for k in 0..3 {
            for l in (0..3).filter(|&l| l != k) {
                assert!(m[[k, k]] > m[[k, l]]);
            }
        }
    }
}

#[test]
fn single_vote_designs_are_not_identifiable() {
    // Two workers, one label each. Each worker's matrix can explain its own
    // label from any class, so the Dawid-Skene posteriors tie exactly and the
    // tie rule picks class 0 for both tasks.
    let view = QuestionView::synthetic(
        4,
        2,
        2,
        vec![
            Triple { task: 0, worker: 0, class: 0 },
            Triple { task: 1, worker: 1, class: 1 },
        ],
    )
    .unwrap();
    let r = fit_dawid_skene(&view, &EmConfig::default()).unwrap();
    assert_eq!(r.probs[[1, 0]], r.probs[[1, 1]]);
    assert_eq!(r.hard_labels, vec![0, 0]);
    assert_eq!(majority_vote::<f64>(&view).hard_labels, vec![0, 1]);
}
