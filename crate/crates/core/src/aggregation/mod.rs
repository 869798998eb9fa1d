//! Consensus models.
//!
//! Every model maps a [`QuestionView`] to a [`ConsensusResult`]: one
//! probability distribution over the real classes per task, plus tie-broken
//! hard labels. Majority Vote counts labels; the pooled Multinomial and
//! Dawid-Skene models are fit by EM on a Dirichlet-smoothed objective.

mod em;
mod majority;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::model::QuestionView;
use crate::scalar::Scalar;

pub use em::{fit_dawid_skene, fit_multinomial, fit_multinomial_from, log_objective, posteriors};
pub use majority::majority_vote;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("model needs at least 2 classes, question has {0}")]
    DegenerateModel(usize),
    #[error("question \"{0}\" has no usable annotations")]
    NoAnnotations(String),
    #[error("objective is not finite: {0}")]
    NonFiniteObjective(String),
    #[error("parameters do not match the data: {0}")]
    ParameterMismatch(String),
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    /// Majority Vote.
    Mv,
    /// Pooled Multinomial: one confusion matrix shared by all workers.
    Mm,
    /// Dawid-Skene: one confusion matrix per worker.
    Ds,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mv => "mv",
            ModelKind::Mm => "mm",
            ModelKind::Ds => "ds",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mv" => Ok(ModelKind::Mv),
            "mm" => Ok(ModelKind::Mm),
            "ds" => Ok(ModelKind::Ds),
            other => Err(format!("unknown model \"{other}\" (expected mv, mm or ds)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig<F> {
    /// Stop when the objective changes by less than this between iterations.
    pub tol: F,
    pub max_iter: usize,
    /// Additive smoothing on every count; 0 gives plain maximum likelihood.
    pub beta: F,
}

impl<F: Scalar> Default for EmConfig<F> {
    fn default() -> Self {
        Self {
            tol: F::lit(1e-8),
            max_iter: 500,
            beta: F::lit(0.01),
        }
    }
}

impl<F: Scalar> EmConfig<F> {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.tol > F::zero()) {
            return Err(FitError::InvalidConfig("tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.beta >= F::zero()) || !self.beta.is_finite() {
            return Err(FitError::InvalidConfig("beta must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfusion<F> {
    pub worker_id: String,
    pub matrix: Array2<F>,
}

/// Error-rate matrices: row `k`, column `l` is the probability of answering
/// `l` when the true class is `k`.
#[derive(Debug, Clone, PartialEq)]
pub enum Confusion<F> {
    Pooled(Array2<F>),
    /// Ordered by the workers' position in the view.
    PerWorker(Vec<WorkerConfusion<F>>),
}

impl<F> Confusion<F> {
    pub fn matrices(&self) -> Vec<&Array2<F>> {
        match self {
            Confusion::Pooled(m) => vec![m],
            Confusion::PerWorker(ws) => ws.iter().map(|w| &w.matrix).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub classes: Vec<String>,
    /// Class prevalence.
    pub tau: Vec<F>,
    pub confusion: Confusion<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// Checks dimensions, non-negativity and normalization within `tol`.
    pub fn check(&self, tol: F) -> Result<(), FitError> {
        let k = self.classes.len();
        let bad = |msg: String| Err(FitError::ParameterMismatch(msg));
        if self.tau.len() != k {
            return bad(format!("tau has {} entries for {k} classes", self.tau.len()));
        }
        if self.tau.iter().any(|&t| !(t >= F::zero())) {
            return bad("tau has a negative or NaN entry".into());
        }
        let total: F = self.tau.iter().copied().sum();
        if (total - F::one()).abs() > tol {
            return bad(format!("tau sums to {total}"));
        }
        for m in self.confusion.matrices() {
            if m.dim() != (k, k) {
                return bad(format!("confusion matrix has shape {:?}, expected {k}x{k}", m.dim()));
            }
            for row in m.rows() {
                if row.iter().any(|&p| !(p >= F::zero())) {
                    return bad("confusion matrix has a negative or NaN entry".into());
                }
                let s: F = row.iter().copied().sum();
                if (s - F::one()).abs() > tol {
                    return bad(format!("confusion row sums to {s}"));
                }
            }
        }
        Ok(())
    }

    /// Mean of the per-worker matrices, or the pooled matrix itself.
    pub fn mean_confusion(&self) -> Array2<F> {
        let ms = self.confusion.matrices();
        let k = self.classes.len();
        let mut acc = Array2::<F>::zeros((k, k));
        for m in &ms {
            acc = acc + *m;
        }
        acc.mapv(|x| x / F::from_count(ms.len().max(1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics<F> {
    /// Number of E-steps performed (0 for Majority Vote).
    pub iterations: usize,
    pub final_objective: Option<F>,
    pub converged: bool,
    pub annotated_task_count: usize,
    pub unannotated_task_count: usize,
    /// Objective value after every E-step, in order.
    pub objective_trace: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusResult<F> {
    pub question_id: String,
    pub model: ModelKind,
    pub classes: Vec<String>,
    pub task_ids: Vec<String>,
    /// `probs[[i, k]]`: probability that task `i` belongs to class `k`.
    pub probs: Array2<F>,
    pub hard_labels: Vec<usize>,
    /// `false` for tasks without any usable annotation.
    pub annotated: Vec<bool>,
    pub params: Option<ModelParams<F>>,
    pub diagnostics: Diagnostics<F>,
}

/// Row-wise argmax; ties go to the smallest class index.
pub fn hard_labels<F: PartialOrd + Copy>(probs: &Array2<F>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Runs the requested model on one question.
pub fn fit<F: Scalar>(
    view: &QuestionView,
    model: ModelKind,
    config: &EmConfig<F>,
) -> Result<ConsensusResult<F>, FitError> {
    match model {
        ModelKind::Mv => Ok(majority_vote(view)),
        ModelKind::Mm => fit_multinomial(view, config),
        ModelKind::Ds => fit_dawid_skene(view, config),
    }
}
