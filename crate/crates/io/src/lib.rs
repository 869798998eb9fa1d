//! File formats and the end-to-end consensus run.
//!
//! Inputs are CSV (annotations, tasks, workers) plus a JSON [`RunConfig`].
//! Outputs are one consensus CSV per question, a params JSON for the EM
//! models (a diagnostics JSON for majority vote), and a `manifest.json`
//! with SHA-256 digests. [`pipeline::run_consensus`] produces all of them in
//! memory so the CLI can write them to a directory and the service can zip
//! them.

pub mod bundle;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod tables;

pub use bundle::{bundle_zip, sha256_hex, unzip, BundleFile, MANIFEST_NAME};
pub use config::{DependencyDecl, EmSettings, LabelSpaceDecl, RunConfig};
pub use error::FormatError;
pub use formats::{
    format_significant, read_consensus_csv, read_curve_csv, read_params_json, read_profile_json,
    write_consensus_csv, write_curve_csv, write_diagnostics_json, write_params_json,
    ConsensusTable, CurveRow, ParamsDocument,
};
pub use pipeline::{run_consensus, PipelineError, QuestionSummary, RawInputs, RunOutput};
pub use tables::{
    read_annotations_csv, read_task_labels_csv, read_tasks_csv, read_workers_csv,
    write_annotations_csv, write_tasks_csv,
};
