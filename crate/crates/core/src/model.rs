//! Validated data model: tasks, workers, annotations, label spaces and
//! question dependencies.
//!
//! A [`Dataset`] is only obtainable through [`validate_dataset`] and is
//! immutable afterwards. Models never look at a `Dataset` directly; they
//! consume the per-question [`QuestionView`] produced by
//! [`Dataset::project_question`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("annotation {annotation_id}{}: unknown task \"{task_id}\"", line_suffix(*.line))]
    UnknownTask {
        task_id: String,
        annotation_id: String,
        line: Option<usize>,
    },
    #[error("unknown question \"{question_id}\" ({context})")]
    UnknownQuestion { question_id: String, context: String },
    #[error(
        "annotation {annotation_id}{}: label \"{label}\" is not a reported label of question \"{question_id}\"",
        line_suffix(*.line)
    )]
    UnknownReportedLabel {
        label: String,
        question_id: String,
        annotation_id: String,
        line: Option<usize>,
    },
    #[error("duplicate {kind} id \"{id}\"")]
    DuplicateId { kind: &'static str, id: String },
    #[error("invalid label space for question \"{question_id}\": {reason}")]
    InvalidLabelSpace { question_id: String, reason: String },
    #[error("invalid dependency rule on question \"{question_id}\": {reason}")]
    InvalidDependency { question_id: String, reason: String },
    #[error("invalid question view: {0}")]
    InvalidView(String),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

/// Where a reported label lands in the model's class space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelTarget {
    Class(usize),
    /// Kept in the dataset but invisible to the models (e.g. "Not answered").
    Excluded,
}

/// Reported labels, real classes and the mapping between them for one
/// question. Class indices follow declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    question_id: String,
    reported_labels: Vec<String>,
    real_classes: Vec<String>,
    mapping: Vec<LabelTarget>,
}

impl LabelSpace {
    /// `mapping[i]` is the target of `reported_labels[i]`.
    pub fn new(
        question_id: impl Into<String>,
        reported_labels: Vec<String>,
        real_classes: Vec<String>,
        mapping: Vec<LabelTarget>,
    ) -> Result<Self, ValidationError> {
        let question_id = question_id.into();
        let invalid = |reason: String| ValidationError::InvalidLabelSpace {
            question_id: question_id.clone(),
            reason,
        };
        if real_classes.is_empty() {
            return Err(invalid("no real classes declared".into()));
        }
        if let Some(dup) = first_duplicate(&real_classes) {
            return Err(invalid(format!("duplicate class \"{dup}\"")));
        }
        if let Some(dup) = first_duplicate(&reported_labels) {
            return Err(invalid(format!("duplicate reported label \"{dup}\"")));
        }
        if mapping.len() != reported_labels.len() {
            return Err(invalid(format!(
                "{} mapping targets for {} reported labels",
                mapping.len(),
                reported_labels.len()
            )));
        }
        let mut hit = vec![false; real_classes.len()];
        for (label, target) in reported_labels.iter().zip(&mapping) {
            if let LabelTarget::Class(k) = *target {
                match hit.get_mut(k) {
                    Some(h) => *h = true,
                    None => {
                        return Err(invalid(format!(
                            "label \"{label}\" maps to class index {k} out of range"
                        )))
                    }
                }
            }
        }
        if let Some(k) = hit.iter().position(|h| !h) {
            return Err(invalid(format!(
                "class \"{}\" is not the image of any reported label",
                real_classes[k]
            )));
        }
        Ok(Self {
            question_id,
            reported_labels,
            real_classes,
            mapping,
        })
    }

    /// Every reported label is its own class.
    pub fn identity(
        question_id: impl Into<String>,
        classes: Vec<String>,
    ) -> Result<Self, ValidationError> {
        let mapping = (0..classes.len()).map(LabelTarget::Class).collect();
        Self::new(question_id, classes.clone(), classes, mapping)
    }

    /// Builds a space from a name-based mapping. Reported labels that are
    /// absent from `mapping` must coincide with a class name; a `None` target
    /// excludes the label.
    pub fn from_named_mapping(
        question_id: impl Into<String>,
        reported_labels: Vec<String>,
        real_classes: Vec<String>,
        mapping: &BTreeMap<String, Option<String>>,
    ) -> Result<Self, ValidationError> {
        let question_id = question_id.into();
        let class_of = |name: &str| real_classes.iter().position(|c| c == name);
        for key in mapping.keys() {
            if !reported_labels.contains(key) {
                return Err(ValidationError::InvalidLabelSpace {
                    question_id,
                    reason: format!("mapping key \"{key}\" is not a reported label"),
                });
            }
        }
        let mut targets = Vec::with_capacity(reported_labels.len());
        for label in &reported_labels {
            let target = match mapping.get(label) {
                Some(None) => LabelTarget::Excluded,
                Some(Some(class)) => match class_of(class) {
                    Some(k) => LabelTarget::Class(k),
                    None => {
                        return Err(ValidationError::InvalidLabelSpace {
                            question_id,
                            reason: format!("label \"{label}\" maps to unknown class \"{class}\""),
                        })
                    }
                },
                None => match class_of(label) {
                    Some(k) => LabelTarget::Class(k),
                    None => {
                        return Err(ValidationError::InvalidLabelSpace {
                            question_id,
                            reason: format!(
                                "reported label \"{label}\" has no mapping and is not a class"
                            ),
                        })
                    }
                },
            };
            targets.push(target);
        }
        Self::new(question_id, reported_labels, real_classes, targets)
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn reported_labels(&self) -> &[String] {
        &self.reported_labels
    }

    pub fn classes(&self) -> &[String] {
        &self.real_classes
    }

    pub fn num_classes(&self) -> usize {
        self.real_classes.len()
    }

    pub fn mapping(&self) -> &[LabelTarget] {
        &self.mapping
    }

    pub fn target(&self, label: &str) -> Option<LabelTarget> {
        self.reported_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.mapping[i])
    }

    pub fn is_reported(&self, label: &str) -> bool {
        self.reported_labels.iter().any(|l| l == label)
    }
}

fn first_duplicate(items: &[String]) -> Option<&str> {
    let mut seen = HashSet::new();
    items
        .iter()
        .find(|s| !seen.insert(s.as_str()))
        .map(String::as_str)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub task_id: String,
    pub observable_attrs: BTreeMap<String, String>,
}

impl TaskRecord {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            observable_attrs: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub attrs: BTreeMap<String, String>,
}

impl WorkerRecord {
    pub fn new(worker_id: impl Into<String>) -> Self {
        Self {
            worker_id: worker_id.into(),
            attrs: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub annotation_id: String,
    pub task_id: String,
    pub worker_id: String,
    pub question_id: String,
    pub reported_label: String,
    /// Extra input columns carried along untouched.
    pub attrs: BTreeMap<String, String>,
    /// 1-based line in the source file, when the record came from one.
    pub source_line: Option<usize>,
}

impl Annotation {
    pub fn new(
        annotation_id: impl Into<String>,
        task_id: impl Into<String>,
        worker_id: impl Into<String>,
        question_id: impl Into<String>,
        reported_label: impl Into<String>,
    ) -> Self {
        Self {
            annotation_id: annotation_id.into(),
            task_id: task_id.into(),
            worker_id: worker_id.into(),
            question_id: question_id.into(),
            reported_label: reported_label.into(),
            attrs: BTreeMap::new(),
            source_line: None,
        }
    }
}

/// Ignore a worker's answer to `question_id` on a task when the same worker
/// answered `depends_on` on that task with one of `excluding_labels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyRule {
    pub question_id: String,
    pub depends_on: String,
    pub excluding_labels: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Resolved {
    task: usize,
    worker: usize,
    space: usize,
    target: LabelTarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    tasks: Vec<TaskRecord>,
    workers: Vec<WorkerRecord>,
    annotations: Vec<Annotation>,
    label_spaces: Vec<LabelSpace>,
    dependencies: Vec<DependencyRule>,
    resolved: Vec<Resolved>,
    task_index: HashMap<String, usize>,
    space_index: HashMap<String, usize>,
}

/// Validates raw records into a [`Dataset`].
///
/// When `tasks` is `None` the task set is implied by the annotations in order
/// of first appearance. Workers referenced by annotations but missing from
/// `workers` are appended with empty attributes.
pub fn validate_dataset(
    tasks: Option<Vec<TaskRecord>>,
    workers: Vec<WorkerRecord>,
    annotations: Vec<Annotation>,
    label_spaces: Vec<LabelSpace>,
    dependencies: Vec<DependencyRule>,
) -> Result<Dataset, ValidationError> {
    let mut space_index = HashMap::new();
    for (i, space) in label_spaces.iter().enumerate() {
        if space_index.insert(space.question_id.clone(), i).is_some() {
            return Err(ValidationError::DuplicateId {
                kind: "question",
                id: space.question_id.clone(),
            });
        }
    }
    for rule in &dependencies {
        check_rule(rule, &label_spaces, &space_index)?;
    }

    let tasks = match tasks {
        Some(tasks) => tasks,
        None => {
            let mut seen = HashSet::new();
            annotations
                .iter()
                .filter(|a| seen.insert(a.task_id.as_str()))
                .map(|a| TaskRecord::new(a.task_id.clone()))
                .collect()
        }
    };
    let mut task_index = HashMap::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        if task_index.insert(t.task_id.clone(), i).is_some() {
            return Err(ValidationError::DuplicateId {
                kind: "task",
                id: t.task_id.clone(),
            });
        }
    }

    let mut workers = workers;
    let mut worker_index = HashMap::with_capacity(workers.len());
    for (i, w) in workers.iter().enumerate() {
        if worker_index.insert(w.worker_id.clone(), i).is_some() {
            return Err(ValidationError::DuplicateId {
                kind: "worker",
                id: w.worker_id.clone(),
            });
        }
    }

    let mut annotation_ids = HashSet::with_capacity(annotations.len());
    let mut resolved = Vec::with_capacity(annotations.len());
    for a in &annotations {
        if !annotation_ids.insert(a.annotation_id.as_str()) {
            return Err(ValidationError::DuplicateId {
                kind: "annotation",
                id: a.annotation_id.clone(),
            });
        }
        let task = *task_index
            .get(&a.task_id)
            .ok_or_else(|| ValidationError::UnknownTask {
                task_id: a.task_id.clone(),
                annotation_id: a.annotation_id.clone(),
                line: a.source_line,
            })?;
        let space = *space_index
            .get(&a.question_id)
            .ok_or_else(|| ValidationError::UnknownQuestion {
                question_id: a.question_id.clone(),
                context: format!("annotation {}{}", a.annotation_id, line_suffix(a.source_line)),
            })?;
        let target = label_spaces[space]
            .target(&a.reported_label)
            .ok_or_else(|| ValidationError::UnknownReportedLabel {
                label: a.reported_label.clone(),
                question_id: a.question_id.clone(),
                annotation_id: a.annotation_id.clone(),
                line: a.source_line,
            })?;
        let worker = match worker_index.get(&a.worker_id) {
            Some(&w) => w,
            None => {
                workers.push(WorkerRecord::new(a.worker_id.clone()));
                worker_index.insert(a.worker_id.clone(), workers.len() - 1);
                workers.len() - 1
            }
        };
        resolved.push(Resolved {
            task,
            worker,
            space,
            target,
        });
    }

    Ok(Dataset {
        tasks,
        workers,
        annotations,
        label_spaces,
        dependencies,
        resolved,
        task_index,
        space_index,
    })
}

fn check_rule(
    rule: &DependencyRule,
    spaces: &[LabelSpace],
    index: &HashMap<String, usize>,
) -> Result<(), ValidationError> {
    if rule.question_id == rule.depends_on {
        return Err(ValidationError::InvalidDependency {
            question_id: rule.question_id.clone(),
            reason: "a question cannot depend on itself".into(),
        });
    }
    if !index.contains_key(&rule.question_id) {
        return Err(ValidationError::UnknownQuestion {
            question_id: rule.question_id.clone(),
            context: "dependency rule".into(),
        });
    }
    let prior = index
        .get(&rule.depends_on)
        .map(|&i| &spaces[i])
        .ok_or_else(|| ValidationError::UnknownQuestion {
            question_id: rule.depends_on.clone(),
            context: format!("dependency of \"{}\"", rule.question_id),
        })?;
    if let Some(label) = rule.excluding_labels.iter().find(|l| !prior.is_reported(l)) {
        return Err(ValidationError::InvalidDependency {
            question_id: rule.question_id.clone(),
            reason: format!(
                "excluding label \"{label}\" is not a reported label of \"{}\"",
                rule.depends_on
            ),
        });
    }
    Ok(())
}

impl Dataset {
    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn workers(&self) -> &[WorkerRecord] {
        &self.workers
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn label_spaces(&self) -> &[LabelSpace] {
        &self.label_spaces
    }

    pub fn label_space(&self, question_id: &str) -> Option<&LabelSpace> {
        self.space_index.get(question_id).map(|&i| &self.label_spaces[i])
    }

    pub fn dependencies(&self) -> &[DependencyRule] {
        &self.dependencies
    }

    pub fn task_position(&self, task_id: &str) -> Option<usize> {
        self.task_index.get(task_id).copied()
    }

    /// Annotation ids that repeat an earlier (worker, task, question) origin.
    pub fn reannotations(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.resolved
            .iter()
            .zip(&self.annotations)
            .filter(|(r, _)| !seen.insert((r.worker, r.task, r.space)))
            .map(|(_, a)| a.annotation_id.as_str())
            .collect()
    }

    /// Hands the records back, e.g. to re-validate them.
    pub fn into_parts(
        self,
    ) -> (
        Vec<TaskRecord>,
        Vec<WorkerRecord>,
        Vec<Annotation>,
        Vec<LabelSpace>,
        Vec<DependencyRule>,
    ) {
        (
            self.tasks,
            self.workers,
            self.annotations,
            self.label_spaces,
            self.dependencies,
        )
    }

    /// Drops dependent answers gated by the same worker's answer to the prior
    /// question on the same task. All rules are evaluated against `self`, so
    /// the filter is idempotent.
    pub fn apply_dependency_filter(
        &self,
        rules: &[DependencyRule],
    ) -> Result<(Dataset, usize), ValidationError> {
        for rule in rules {
            check_rule(rule, &self.label_spaces, &self.space_index)?;
        }
        let mut gated: HashSet<(usize, usize, usize)> = HashSet::new();
        for rule in rules {
            let dependent = self.space_index[&rule.question_id];
            let prior = self.space_index[&rule.depends_on];
            for (r, a) in self.resolved.iter().zip(&self.annotations) {
                if r.space == prior && rule.excluding_labels.contains(&a.reported_label) {
                    gated.insert((dependent, r.worker, r.task));
                }
            }
        }
        let keep: Vec<bool> = self
            .resolved
            .iter()
            .map(|r| !gated.contains(&(r.space, r.worker, r.task)))
            .collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        let mut out = self.clone();
        let mut flags = keep.iter();
        out.annotations.retain(|_| *flags.next().unwrap());
        let mut flags = keep.iter();
        out.resolved.retain(|_| *flags.next().unwrap());
        Ok((out, dropped))
    }

    /// Applies every rule declared on the dataset.
    pub fn filter_declared_dependencies(&self) -> (Dataset, usize) {
        self.apply_dependency_filter(&self.dependencies)
            .expect("declared rules were validated at construction")
    }

    pub fn project_question(&self, question_id: &str) -> Result<QuestionView, ValidationError> {
        let space = *self
            .space_index
            .get(question_id)
            .ok_or_else(|| ValidationError::UnknownQuestion {
                question_id: question_id.to_string(),
                context: "projection".into(),
            })?;
        let mut triples = Vec::new();
        let mut excluded = 0;
        for r in self.resolved.iter().filter(|r| r.space == space) {
            match r.target {
                LabelTarget::Class(class) => triples.push(Triple {
                    task: r.task,
                    worker: r.worker,
                    class,
                }),
                LabelTarget::Excluded => excluded += 1,
            }
        }
        Ok(QuestionView {
            question_id: question_id.to_string(),
            classes: self.label_spaces[space].real_classes.clone(),
            task_ids: self.tasks.iter().map(|t| t.task_id.clone()).collect(),
            worker_ids: self.workers.iter().map(|w| w.worker_id.clone()).collect(),
            triples,
            excluded,
        })
    }
}

/// One annotation seen by the models: indices into the view's tasks,
/// workers and classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub task: usize,
    pub worker: usize,
    pub class: usize,
}

/// Per-question working view consumed by every model and metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionView {
    question_id: String,
    classes: Vec<String>,
    task_ids: Vec<String>,
    worker_ids: Vec<String>,
    triples: Vec<Triple>,
    excluded: usize,
}

impl QuestionView {
    /// Builds a view directly, e.g. for synthetic data.
    pub fn new(
        question_id: impl Into<String>,
        classes: Vec<String>,
        task_ids: Vec<String>,
        worker_ids: Vec<String>,
        triples: Vec<Triple>,
    ) -> Result<Self, ValidationError> {
        if classes.is_empty() {
            return Err(ValidationError::InvalidView("no classes".into()));
        }
        if let Some(t) = triples.iter().find(|t| {
            t.task >= task_ids.len() || t.worker >= worker_ids.len() || t.class >= classes.len()
        }) {
            return Err(ValidationError::InvalidView(format!(
                "triple {t:?} out of range"
            )));
        }
        Ok(Self {
            question_id: question_id.into(),
            classes,
            task_ids,
            worker_ids,
            triples,
            excluded: 0,
        })
    }

    /// View with generated ids `t0..`, `w0..` and classes `c0..`.
    pub fn synthetic(
        num_classes: usize,
        num_tasks: usize,
        num_workers: usize,
        triples: Vec<Triple>,
    ) -> Result<Self, ValidationError> {
        Self::new(
            "synthetic",
            (0..num_classes).map(|k| format!("c{k}")).collect(),
            (0..num_tasks).map(|i| format!("t{i}")).collect(),
            (0..num_workers).map(|w| format!("w{w}")).collect(),
            triples,
        )
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn num_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn worker_ids(&self) -> &[String] {
        &self.worker_ids
    }

    pub fn num_workers(&self) -> usize {
        self.worker_ids.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Annotations skipped because their label maps to no class.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    /// `counts[i][k]`: annotations of class `k` on task `i`.
    pub fn class_counts(&self) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0; self.num_classes()]; self.num_tasks()];
        for t in &self.triples {
            counts[t.task][t.class] += 1;
        }
        counts
    }

    /// Same data with classes reordered: new class `j` is old class `perm[j]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<Self, ValidationError> {
        let k = self.num_classes();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true))
        {
            return Err(ValidationError::InvalidView(format!(
                "{perm:?} is not a permutation of {k} classes"
            )));
        }
        let mut inverse = vec![0; k];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Ok(Self {
            classes: perm.iter().map(|&p| self.classes[p].clone()).collect(),
            triples: self
                .triples
                .iter()
                .map(|t| Triple {
                    class: inverse[t.class],
                    ..*t
                })
                .collect(),
            ..self.clone()
        })
    }
}
