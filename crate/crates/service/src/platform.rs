//! Client for annotation platforms exposing paginated task and task-run
//! listings.
//!
//! Expected shape, per page (a JSON array; an empty array ends the listing):
//!
//! * `GET {base}/api/task?project_id=P&limit=N&offset=M`:
//!   `[{"id": 1, "info": {"media_url": "..."}}]`
//! * `GET {base}/api/taskrun?project_id=P&limit=N&offset=M`:
//!   `[{"id": 7, "task_id": 1, "worker_id": "u3", "answers": {"damage": "yes"}}]`
//!
//! Ids may be numbers or strings. Each answer becomes one annotation with id
//! `<taskrun id>/<question>`; a `null` answer is skipped.

use std::collections::BTreeMap;

use cck_core::{Annotation, TaskRecord};
use cck_io::RawInputs;
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_PAGE_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error("platform unreachable: {0}")]
    Unreachable(String),
    #[error("invalid {resource} page {page}: {reason}")]
    InvalidPage {
        resource: &'static str,
        page: usize,
        reason: String,
    },
    #[error("{} record(s) could not be converted", .0.len())]
    Conversion(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct PlatformClient {
    base_url: String,
    api_key: Option<String>,
    page_size: usize,
    http: reqwest::Client,
}

impl PlatformClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, page_size: usize) -> Self {
        assert!(page_size > 0, "page size must be positive");
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            page_size,
            http: reqwest::Client::new(),
        }
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// All records of `resource`, one page at a time until an empty page.
    async fn fetch_all(
        &self,
        resource: &'static str,
        project_id: &str,
    ) -> Result<Vec<Value>, PlatformError> {
        let url = format!("{}/api/{resource}", self.base_url);
        let mut records = Vec::new();
        for page in 0.. {
            let limit = self.page_size.to_string();
            let offset = (page * self.page_size).to_string();
            let mut query = vec![
                ("project_id", project_id),
                ("limit", limit.as_str()),
                ("offset", offset.as_str()),
            ];
            if let Some(key) = &self.api_key {
                query.push(("api_key", key));
            }
            let invalid = |reason: String| PlatformError::InvalidPage {
                resource,
                page,
                reason,
            };
            let response = self
                .http
                .get(&url)
                .query(&query)
                .send()
                .await
                .map_err(|e| PlatformError::Unreachable(e.to_string()))?;
            let status = response.status();
            if !status.is_success() {
                return Err(invalid(format!("HTTP {status}")));
            }
            let body = response
                .bytes()
                .await
                .map_err(|e| PlatformError::Unreachable(e.to_string()))?;
            let items = match serde_json::from_slice::<Value>(&body) {
                Ok(Value::Array(items)) => items,
                Ok(_) => return Err(invalid("expected a JSON array".into())),
                Err(e) => return Err(invalid(e.to_string())),
            };
            if items.is_empty() {
                break;
            }
            if let Some(bad) = items.iter().position(|v| !v.is_object()) {
                return Err(invalid(format!("record {bad} is not an object")));
            }
            records.extend(items);
        }
        Ok(records)
    }

    pub async fn fetch_project(&self, project_id: &str) -> Result<RawInputs, PlatformError> {
        let tasks = self.fetch_all("task", project_id).await?;
        let runs = self.fetch_all("taskrun", project_id).await?;
        convert(&tasks, &runs)
    }
}

fn id_text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Converts fetched records, collecting every problem instead of stopping
/// at the first.
pub fn convert(tasks: &[Value], runs: &[Value]) -> Result<RawInputs, PlatformError> {
    let mut problems = Vec::new();
    let mut task_records = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let Some(id) = id_text(t.get("id")) else {
            problems.push(format!("task record {i}: missing id"));
            continue;
        };
        let mut attrs = BTreeMap::new();
        match t.get("info") {
            None | Some(Value::Null) => {}
            Some(Value::Object(info)) => {
                for (k, v) in info {
                    let text = scalar_text(v).unwrap_or_else(|| v.to_string());
                    attrs.insert(k.clone(), text);
                }
            }
            Some(_) => problems.push(format!("task {id}: info is not an object")),
        }
        let mut record = TaskRecord::new(id);
        record.observable_attrs = attrs;
        task_records.push(record);
    }

    let mut annotations = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let Some(run_id) = id_text(run.get("id")) else {
            problems.push(format!("task run {i}: missing id"));
            continue;
        };
        let task_id = id_text(run.get("task_id"));
        let worker_id = id_text(run.get("worker_id"));
        let (Some(task_id), Some(worker_id)) = (task_id, worker_id) else {
            problems.push(format!("task run {run_id}: missing task_id or worker_id"));
            continue;
        };
        let Some(answers) = run.get("answers").and_then(Value::as_object) else {
            problems.push(format!("task run {run_id}: answers is not an object"));
            continue;
        };
        for (question, answer) in answers {
            if answer.is_null() {
                continue;
            }
            match scalar_text(answer) {
                Some(label) => annotations.push(Annotation::new(
                    format!("{run_id}/{question}"),
                    task_id.clone(),
                    worker_id.clone(),
                    question.clone(),
                    label,
                )),
                None => problems.push(format!(
                    "task run {run_id}: answer to \"{question}\" is not a scalar"
                )),
            }
        }
    }
    if !problems.is_empty() {
        return Err(PlatformError::Conversion(problems));
    }
    Ok(RawInputs {
        annotations,
        tasks: Some(task_records),
        workers: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn converts_answers_and_info() {
        let tasks = vec![json!({"id": 1, "info": {"url": "a.jpg", "zoom": 3}})];
        let runs = vec![json!({"id": 9, "task_id": 1, "worker_id": "u1",
                               "answers": {"damage": "yes", "severity": null, "count": 2}})];
        let raw = convert(&tasks, &runs).unwrap();
        let t = &raw.tasks.as_ref().unwrap()[0];
        assert_eq!(t.task_id, "1");
        assert_eq!(t.observable_attrs["zoom"], "3");
        let ids: Vec<&str> = raw.annotations.iter().map(|a| a.annotation_id.as_str()).collect();
        assert_eq!(ids, ["9/damage", "9/count"]);
        assert_eq!(raw.annotations[1].reported_label, "2");
    }

    #[test]
    fn reports_every_bad_record() {
        let runs = vec![
            json!({"id": 1, "task_id": 1, "answers": {}}),
            json!({"id": 2, "task_id": 1, "worker_id": "u", "answers": {"q": [1]}}),
        ];
        match convert(&[], &runs) {
            Err(PlatformError::Conversion(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
