//! The consensus run shared by the command line and the service: raw
//! records and a config in, bundle files out.

use cck_core::{
    fit, validate_dataset, Annotation, ConsensusResult, FitError, TaskRecord, ValidationError,
    WorkerRecord,
};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::bundle::{bundle_zip, digest_entry, manifest_json, BundleFile, MANIFEST_NAME};
use crate::config::RunConfig;
use crate::error::FormatError;
use crate::formats::{
    consensus_file_name, diagnostics_file_name, params_file_name, write_consensus_csv,
    write_diagnostics_json, write_params_json,
};
use crate::tables::{
    read_annotations_csv, read_tasks_csv, read_workers_csv, write_annotations_csv,
    write_tasks_csv,
};

pub const TOOL_NAME: &str = "cck";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("question \"{question}\": {source}")]
    Fit { question: String, source: FitError },
    #[error("no annotations in input")]
    NoAnnotations,
}

/// Parsed but not yet validated input records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawInputs {
    pub annotations: Vec<Annotation>,
    /// `None` lets the annotations define the task set.
    pub tasks: Option<Vec<TaskRecord>>,
    pub workers: Vec<WorkerRecord>,
}

impl RawInputs {
    pub fn from_csv(
        annotations: &[u8],
        tasks: Option<&[u8]>,
        workers: Option<&[u8]>,
    ) -> Result<Self, FormatError> {
        Ok(Self {
            annotations: read_annotations_csv(annotations)?,
            tasks: tasks.map(read_tasks_csv).transpose()?,
            workers: workers.map(read_workers_csv).transpose()?.unwrap_or_default(),
        })
    }

    /// Inputs re-serialized in the fixed CSV layout, so that the same records
    /// give the same bytes whatever file or API they came from.
    pub fn canonical_files(&self) -> Vec<BundleFile> {
        let mut files = vec![BundleFile::new(
            "inputs/annotations.csv",
            write_annotations_csv(&self.annotations),
        )];
        if let Some(tasks) = &self.tasks {
            files.push(BundleFile::new("inputs/tasks.csv", write_tasks_csv(tasks)));
        }
        if !self.workers.is_empty() {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["worker_id"]).expect("in-memory write");
            for worker in &self.workers {
                w.write_record([&worker.worker_id]).expect("in-memory write");
            }
            files.push(BundleFile::new("inputs/workers.csv", w.into_inner().expect("flush")));
        }
        files
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSummary {
    pub question: String,
    pub tasks: usize,
    pub annotations_used: usize,
    pub annotations_excluded: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Every bundle member, manifest included, sorted by name.
    pub files: Vec<BundleFile>,
    pub questions: Vec<QuestionSummary>,
    pub dropped_by_dependencies: usize,
}

impl RunOutput {
    pub fn zip(&self) -> Vec<u8> {
        bundle_zip(&self.files)
    }

    pub fn file(&self, name: &str) -> Option<&BundleFile> {
        self.files.iter().find(|f| f.name == name)
    }
}

fn question_files(result: &ConsensusResult, config: &RunConfig) -> Vec<BundleFile> {
    let q = &result.question_id;
    let mut files = vec![BundleFile::new(consensus_file_name(q), write_consensus_csv(result))];
    match &result.params {
        Some(params) => files.push(BundleFile::new(
            params_file_name(q),
            write_params_json(config.model, q, params, &result.diagnostics),
        )),
        None => files.push(BundleFile::new(
            diagnostics_file_name(q),
            write_diagnostics_json(config.model, q, &result.classes, &result.diagnostics),
        )),
    }
    files
}

pub fn run_consensus(inputs: &RawInputs, config: &RunConfig) -> Result<RunOutput, PipelineError> {
    config.check()?;
    if inputs.annotations.is_empty() {
        return Err(PipelineError::NoAnnotations);
    }
    let spaces = config.label_spaces(&inputs.annotations)?;
    let all_questions: Vec<String> = spaces.iter().map(|s| s.question_id().to_string()).collect();
    let dataset = validate_dataset(
        inputs.tasks.clone(),
        inputs.workers.clone(),
        inputs.annotations.clone(),
        spaces,
        config.dependency_rules(),
    )?;
    let (dataset, dropped) = if config.dependencies_enabled {
        dataset.filter_declared_dependencies()
    } else {
        (dataset, 0)
    };
    let questions = config.questions.clone().unwrap_or(all_questions);
    let views = questions
        .iter()
        .map(|q| dataset.project_question(q))
        .collect::<Result<Vec<_>, _>>()?;
    let em = config.em_config();
    let results = views
        .par_iter()
        .map(|view| {
            fit(view, config.model, &em).map_err(|source| PipelineError::Fit {
                question: view.question_id().to_string(),
                source,
            })
        })
        .collect::<Result<Vec<ConsensusResult>, _>>()?;

    let mut files: Vec<BundleFile> =
        results.iter().flat_map(|r| question_files(r, config)).collect();
    let inputs_canonical = inputs.canonical_files();
    let summaries: Vec<QuestionSummary> = views
        .iter()
        .zip(&results)
        .map(|(v, r)| QuestionSummary {
            question: v.question_id().to_string(),
            tasks: v.num_tasks(),
            annotations_used: v.triples().len(),
            annotations_excluded: v.excluded(),
            iterations: r.diagnostics.iterations,
            converged: r.diagnostics.converged,
        })
        .collect();

    let mut head = Map::new();
    head.insert("tool".into(), json!(TOOL_NAME));
    head.insert("version".into(), json!(TOOL_VERSION));
    head.insert(
        "config".into(),
        serde_json::to_value(config).expect("config serializes"),
    );
    head.insert(
        "inputs".into(),
        Value::Array(inputs_canonical.iter().map(|f| digest_entry(&f.name, &f.bytes)).collect()),
    );
    head.insert("dropped_by_dependencies".into(), json!(dropped));
    head.insert(
        "questions".into(),
        Value::Array(
            summaries
                .iter()
                .map(|s| {
                    json!({
                        "question": s.question,
                        "tasks": s.tasks,
                        "annotations_used": s.annotations_used,
                        "annotations_excluded": s.annotations_excluded,
                        "iterations": s.iterations,
                        "converged": s.converged,
                    })
                })
                .collect(),
        ),
    );
    if config.echo_inputs {
        files.extend(inputs_canonical);
    }
    let manifest = manifest_json(head, &files);
    files.push(BundleFile::new(MANIFEST_NAME, manifest));
    files.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(RunOutput {
        files,
        questions: summaries,
        dropped_by_dependencies: dropped,
    })
}
