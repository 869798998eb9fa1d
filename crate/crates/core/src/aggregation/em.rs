//! EM for the pooled Multinomial and Dawid-Skene models.
//!
//! Both models share one engine: every annotation is assigned a confusion
//! matrix index (always 0 when pooled, the worker's slot otherwise) and the
//! E- and M-steps only see that index. All likelihood products are summed in
//! log space and normalized with log-sum-exp.
//!
//! The monitored objective is the smoothed log-likelihood
//!
//! ```text
//! J = sum_i log sum_k exp(log tau_k + sum_{a in i} log pi^(a)_{k, l_a})
//!     + beta * (sum log pi + sum log tau)
//! ```
//!
//! whose M-step maximizers are the add-`beta` count ratios below, so EM never
//! decreases it.

use ndarray::Array2;

use super::{
    hard_labels, Confusion, ConsensusResult, Diagnostics, EmConfig, FitError, ModelKind,
    ModelParams, WorkerConfusion,
};
use crate::model::QuestionView;
use crate::scalar::{normalize_log_weights, Scalar};

/// Annotations grouped by task, each tagged with (matrix slot, class label).
struct Layout {
    k: usize,
    n_tasks: usize,
    offsets: Vec<usize>,
    items: Vec<(usize, usize)>,
    annotated: Vec<bool>,
    n_annotated: usize,
    n_matrices: usize,
}

impl Layout {
    /// `slot_of_worker[w]` is the matrix used for worker `w`; `None` is only
    /// allowed for workers without annotations.
    fn new(
        view: &QuestionView,
        slot_of_worker: &[Option<usize>],
        n_matrices: usize,
    ) -> Result<Self, FitError> {
        let k = view.num_classes();
        let n_tasks = view.num_tasks();
        let mut offsets = vec![0usize; n_tasks + 1];
        for t in view.triples() {
            offsets[t.task + 1] += 1;
        }
        for i in 0..n_tasks {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut items = vec![(0, 0); view.triples().len()];
        for t in view.triples() {
            let slot = slot_of_worker[t.worker].ok_or_else(|| {
                FitError::ParameterMismatch(format!(
                    "no confusion matrix for worker \"{}\"",
                    view.worker_ids()[t.worker]
                ))
            })?;
            items[cursor[t.task]] = (slot, t.class);
            cursor[t.task] += 1;
        }
        let annotated: Vec<bool> = offsets.windows(2).map(|w| w[1] > w[0]).collect();
        let n_annotated = annotated.iter().filter(|a| **a).count();
        Ok(Self {
            k,
            n_tasks,
            offsets,
            items,
            annotated,
            n_annotated,
            n_matrices,
        })
    }

    fn pooled(view: &QuestionView) -> Self {
        Self::new(view, &vec![Some(0); view.num_workers()], 1).expect("every worker has a slot")
    }

    /// One slot per worker with at least one annotation, in worker order.
    /// Returns the layout and the view index of each slot's worker.
    fn per_worker(view: &QuestionView) -> (Self, Vec<usize>) {
        let mut used = vec![false; view.num_workers()];
        for t in view.triples() {
            used[t.worker] = true;
        }
        let mut slots = vec![None; view.num_workers()];
        let mut owners = Vec::new();
        for (w, _) in used.iter().enumerate().filter(|(_, u)| **u) {
            slots[w] = Some(owners.len());
            owners.push(w);
        }
        let layout = Self::new(view, &slots, owners.len()).expect("every annotating worker has a slot");
        (layout, owners)
    }

    fn task_items(&self, i: usize) -> &[(usize, usize)] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    fn pi_index(&self, slot: usize, row: usize, col: usize) -> usize {
        (slot * self.k + row) * self.k + col
    }
}

/// Linear and log parameters in flat storage.
struct Params<F> {
    tau: Vec<F>,
    pi: Vec<F>,
    log_tau: Vec<F>,
    log_pi: Vec<F>,
}

impl<F: Scalar> Params<F> {
    fn new(tau: Vec<F>, pi: Vec<F>) -> Self {
        let log_tau = tau.iter().map(|t| t.ln()).collect();
        let log_pi = pi.iter().map(|p| p.ln()).collect();
        Self {
            tau,
            pi,
            log_tau,
            log_pi,
        }
    }

    /// `beta * (sum log pi + sum log tau)`, zero when `beta` is zero.
    fn smoothing_term(&self, beta: F) -> F {
        if beta == F::zero() {
            return F::zero();
        }
        let s: F = self.log_pi.iter().copied().sum::<F>() + self.log_tau.iter().copied().sum::<F>();
        beta * s
    }
}

/// Writes posteriors into `q` (row-major, `n_tasks x k`) and returns the data
/// log-likelihood. Unannotated tasks receive the prevalence vector.
fn e_step<F: Scalar>(layout: &Layout, params: &Params<F>, q: &mut [F]) -> F {
    let k = layout.k;
    let mut loglik = F::zero();
    for i in 0..layout.n_tasks {
        let row = &mut q[i * k..(i + 1) * k];
        if !layout.annotated[i] {
            row.copy_from_slice(&params.tau);
            continue;
        }
        row.copy_from_slice(&params.log_tau);
        for &(slot, label) in layout.task_items(i) {
            let base = layout.pi_index(slot, 0, label);
            for (c, r) in row.iter_mut().enumerate() {
                *r += params.log_pi[base + c * k];
            }
        }
        loglik += normalize_log_weights(row);
    }
    loglik
}

/// Smoothed count ratios from responsibilities `q`, over annotated tasks only.
/// A confusion row with no mass at all (possible only with `beta = 0`) is set
/// to uniform.
fn m_step<F: Scalar>(layout: &Layout, q: &[F], beta: F) -> Params<F> {
    let k = layout.k;
    let mut tau = vec![beta; k];
    let mut pi = vec![beta; layout.n_matrices * k * k];
    for i in (0..layout.n_tasks).filter(|&i| layout.annotated[i]) {
        let row = &q[i * k..(i + 1) * k];
        for (t, &p) in tau.iter_mut().zip(row) {
            *t += p;
        }
        for &(slot, label) in layout.task_items(i) {
            let base = layout.pi_index(slot, 0, label);
            for (c, &p) in row.iter().enumerate() {
                pi[base + c * k] += p;
            }
        }
    }
    let tau_den = F::from_count(layout.n_annotated) + F::from_count(k) * beta;
    for t in tau.iter_mut() {
        *t /= tau_den;
    }
    for row in pi.chunks_mut(k) {
        let den: F = row.iter().copied().sum();
        if den > F::zero() {
            for p in row.iter_mut() {
                *p /= den;
            }
        } else {
            row.fill(F::one() / F::from_count(k));
        }
    }
    Params::new(tau, pi)
}

/// Add-one smoothed vote frequencies; zero rows for unannotated tasks.
fn initial_responsibilities<F: Scalar>(layout: &Layout) -> Vec<F> {
    let k = layout.k;
    let mut q = vec![F::zero(); layout.n_tasks * k];
    for i in (0..layout.n_tasks).filter(|&i| layout.annotated[i]) {
        let items = layout.task_items(i);
        let row = &mut q[i * k..(i + 1) * k];
        row.fill(F::one());
        for &(_, label) in items {
            row[label] += F::one();
        }
        let den = F::from_count(items.len() + k);
        for r in row.iter_mut() {
            *r /= den;
        }
    }
    q
}

struct EmOutcome<F> {
    params: Params<F>,
    q: Vec<F>,
    trace: Vec<F>,
    converged: bool,
}

/// Posteriors at fixed starting parameters. Rows whose annotations are
/// impossible under them keep their vote frequencies.
fn responsibilities_at<F: Scalar>(layout: &Layout, start: &Params<F>) -> Vec<F> {
    let k = layout.k;
    let mut q = initial_responsibilities(layout);
    let mut row = vec![F::zero(); k];
    for i in (0..layout.n_tasks).filter(|&i| layout.annotated[i]) {
        row.copy_from_slice(&start.log_tau);
        for &(slot, label) in layout.task_items(i) {
            let base = layout.pi_index(slot, 0, label);
            for (c, r) in row.iter_mut().enumerate() {
                *r += start.log_pi[base + c * k];
            }
        }
        if normalize_log_weights(&mut row).is_finite() {
            q[i * k..(i + 1) * k].copy_from_slice(&row);
        }
    }
    q
}

fn run_em<F: Scalar>(layout: &Layout, config: &EmConfig<F>) -> EmOutcome<F> {
    run_em_from(layout, config, initial_responsibilities(layout))
}

fn run_em_from<F: Scalar>(layout: &Layout, config: &EmConfig<F>, mut q: Vec<F>) -> EmOutcome<F> {
    let mut params = m_step(layout, &q, config.beta);
    let mut trace = Vec::new();
    let mut converged = false;
    loop {
        let objective = e_step(layout, &params, &mut q) + params.smoothing_term(config.beta);
        let previous = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = previous {
            if (objective - prev).abs() < config.tol {
                converged = true;
                break;
            }
        }
        if trace.len() >= config.max_iter {
            break;
        }
        params = m_step(layout, &q, config.beta);
    }
    EmOutcome {
        params,
        q,
        trace,
        converged,
    }
}

fn check_fit_input<F: Scalar>(view: &QuestionView, config: &EmConfig<F>) -> Result<(), FitError> {
    config.validate()?;
    if view.num_classes() < 2 {
        return Err(FitError::DegenerateModel(view.num_classes()));
    }
    if view.triples().is_empty() {
        return Err(FitError::NoAnnotations(view.question_id().to_string()));
    }
    Ok(())
}

fn matrix_from_flat<F: Scalar>(flat: &[F], k: usize) -> Array2<F> {
    Array2::from_shape_vec((k, k), flat.to_vec()).expect("k*k entries")
}

fn assemble<F: Scalar>(
    view: &QuestionView,
    layout: &Layout,
    model: ModelKind,
    outcome: EmOutcome<F>,
    confusion: Confusion<F>,
) -> ConsensusResult<F> {
    let k = layout.k;
    let probs = Array2::from_shape_vec((layout.n_tasks, k), outcome.q).expect("n_tasks*k entries");
    ConsensusResult {
        question_id: view.question_id().to_string(),
        model,
        classes: view.classes().to_vec(),
        task_ids: view.task_ids().to_vec(),
        hard_labels: hard_labels(&probs),
        probs,
        annotated: layout.annotated.clone(),
        params: Some(ModelParams {
            classes: view.classes().to_vec(),
            tau: outcome.params.tau,
            confusion,
        }),
        diagnostics: Diagnostics {
            iterations: outcome.trace.len(),
            final_objective: outcome.trace.last().copied(),
            converged: outcome.converged,
            annotated_task_count: layout.n_annotated,
            unannotated_task_count: layout.n_tasks - layout.n_annotated,
            objective_trace: outcome.trace,
        },
    }
}

/// Fits class prevalence and a single confusion matrix shared by all workers.
pub fn fit_multinomial<F: Scalar>(
    view: &QuestionView,
    config: &EmConfig<F>,
) -> Result<ConsensusResult<F>, FitError> {
    check_fit_input(view, config)?;
    let layout = Layout::pooled(view);
    let outcome = run_em(&layout, config);
    let confusion = Confusion::Pooled(matrix_from_flat(&outcome.params.pi, layout.k));
    Ok(assemble(view, &layout, ModelKind::Mm, outcome, confusion))
}

/// Like [`fit_multinomial`], but the first M-step uses posteriors at the
/// given prevalence and confusion matrix instead of vote frequencies.
pub fn fit_multinomial_from<F: Scalar>(
    view: &QuestionView,
    config: &EmConfig<F>,
    tau: &[F],
    pi: &Array2<F>,
) -> Result<ConsensusResult<F>, FitError> {
    check_fit_input(view, config)?;
    let k = view.num_classes();
    if tau.len() != k || pi.dim() != (k, k) {
        return Err(FitError::ParameterMismatch(format!(
            "starting point has {} classes and a {:?} matrix, question has {k} classes",
            tau.len(),
            pi.dim()
        )));
    }
    let layout = Layout::pooled(view);
    let start = Params::new(tau.to_vec(), pi.iter().copied().collect());
    let outcome = run_em_from(&layout, config, responsibilities_at(&layout, &start));
    let confusion = Confusion::Pooled(matrix_from_flat(&outcome.params.pi, layout.k));
    Ok(assemble(view, &layout, ModelKind::Mm, outcome, confusion))
}

/// Fits class prevalence and one confusion matrix per annotating worker.
pub fn fit_dawid_skene<F: Scalar>(
    view: &QuestionView,
    config: &EmConfig<F>,
) -> Result<ConsensusResult<F>, FitError> {
    check_fit_input(view, config)?;
    let (layout, owners) = Layout::per_worker(view);
    let outcome = run_em(&layout, config);
    let kk = layout.k * layout.k;
    let confusion = Confusion::PerWorker(
        owners
            .iter()
            .enumerate()
            .map(|(slot, &w)| WorkerConfusion {
                worker_id: view.worker_ids()[w].clone(),
                matrix: matrix_from_flat(&outcome.params.pi[slot * kk..(slot + 1) * kk], layout.k),
            })
            .collect(),
    );
    Ok(assemble(view, &layout, ModelKind::Ds, outcome, confusion))
}

fn layout_for_params<F: Scalar>(
    view: &QuestionView,
    params: &ModelParams<F>,
) -> Result<(Layout, Params<F>), FitError> {
    let k = view.num_classes();
    if params.classes.len() != k {
        return Err(FitError::ParameterMismatch(format!(
            "parameters have {} classes, question has {k}",
            params.classes.len()
        )));
    }
    params.check(F::lit(1e-6))?;
    let layout = match &params.confusion {
        Confusion::Pooled(_) => Layout::pooled(view),
        Confusion::PerWorker(ws) => {
            let slots: Vec<Option<usize>> = view
                .worker_ids()
                .iter()
                .map(|id| ws.iter().position(|w| &w.worker_id == id))
                .collect();
            Layout::new(view, &slots, ws.len())?
        }
    };
    let pi = params
        .confusion
        .matrices()
        .into_iter()
        .flat_map(|m| m.iter().copied().collect::<Vec<_>>())
        .collect();
    Ok((layout, Params::new(params.tau.clone(), pi)))
}

/// Posterior class distribution of every task at fixed parameters.
pub fn posteriors<F: Scalar>(
    view: &QuestionView,
    params: &ModelParams<F>,
) -> Result<Array2<F>, FitError> {
    let (layout, p) = layout_for_params(view, params)?;
    let mut q = vec![F::zero(); layout.n_tasks * layout.k];
    e_step(&layout, &p, &mut q);
    Ok(Array2::from_shape_vec((layout.n_tasks, layout.k), q).expect("n_tasks*k entries"))
}

/// The EM objective at fixed parameters. With `beta > 0` every parameter
/// must be strictly positive.
pub fn log_objective<F: Scalar>(
    view: &QuestionView,
    params: &ModelParams<F>,
    beta: F,
) -> Result<F, FitError> {
    let (layout, p) = layout_for_params(view, params)?;
    if beta > F::zero() && p.tau.iter().chain(&p.pi).any(|&x| x == F::zero()) {
        return Err(FitError::NonFiniteObjective(
            "a parameter is exactly zero while smoothing is positive".into(),
        ));
    }
    let mut q = vec![F::zero(); layout.n_tasks * layout.k];
    Ok(e_step(&layout, &p, &mut q) + p.smoothing_term(beta))
}
