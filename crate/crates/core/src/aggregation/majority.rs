use ndarray::Array2;

use super::{hard_labels, ConsensusResult, Diagnostics, ModelKind};
use crate::model::QuestionView;
use crate::scalar::Scalar;

/// Label frequencies per task. Tasks without annotations get the uniform
/// distribution and are marked unannotated.
pub fn majority_vote<F: Scalar>(view: &QuestionView) -> ConsensusResult<F> {
    let k = view.num_classes();
    let counts = view.class_counts();
    let mut probs = Array2::<F>::zeros((view.num_tasks(), k));
    let mut annotated = vec![false; view.num_tasks()];
    for (i, row) in counts.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n == 0 {
            probs.row_mut(i).fill(F::one() / F::from_count(k));
        } else {
            annotated[i] = true;
            for (p, &c) in probs.row_mut(i).iter_mut().zip(row) {
                *p = F::from_count(c) / F::from_count(n);
            }
        }
    }
    let annotated_task_count = annotated.iter().filter(|a| **a).count();
    ConsensusResult {
        question_id: view.question_id().to_string(),
        model: ModelKind::Mv,
        classes: view.classes().to_vec(),
        task_ids: view.task_ids().to_vec(),
        hard_labels: hard_labels(&probs),
        probs,
        diagnostics: Diagnostics {
            iterations: 0,
            final_objective: None,
            converged: true,
            annotated_task_count,
            unannotated_task_count: view.num_tasks() - annotated_task_count,
            objective_trace: Vec::new(),
        },
        annotated,
        params: None,
    }
}
