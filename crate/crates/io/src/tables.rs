//! CSV readers for annotation, task, worker and label files.

use std::collections::{BTreeMap, HashSet};

use cck_core::{Annotation, TaskRecord, WorkerRecord};

use crate::error::FormatError;

const BOM: &[u8] = b"\xEF\xBB\xBF";

/// A parsed CSV file: header plus records with their starting line.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn parse(bytes: &[u8]) -> Result<Self, FormatError> {
        let bytes = bytes.strip_prefix(BOM).unwrap_or(bytes);
        if let Err(e) = std::str::from_utf8(bytes) {
            let line = 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count();
            return Err(FormatError::EncodingError { line });
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| malformed(1, &e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(FormatError::MalformedRow {
                line: 1,
                reason: "empty header".into(),
            });
        }
        let mut seen = HashSet::new();
        for name in &header {
            if !seen.insert(name) {
                return Err(FormatError::MalformedRow {
                    line: 1,
                    reason: format!("column \"{name}\" appears twice"),
                });
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                malformed(line, &e)
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((line, record));
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize, FormatError> {
        self.optional_column(name)
            .ok_or_else(|| FormatError::MissingColumn(name.to_string()))
    }

    fn optional_column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn attrs(&self, record: &csv::StringRecord, used: &[usize]) -> BTreeMap<String, String> {
        self.header
            .iter()
            .enumerate()
            .filter(|(i, _)| !used.contains(i))
            .map(|(i, name)| (name.clone(), record[i].to_string()))
            .collect()
    }
}

fn malformed(line: usize, e: &csv::Error) -> FormatError {
    let reason = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    FormatError::MalformedRow { line, reason }
}

fn required<'r>(
    record: &'r csv::StringRecord,
    line: usize,
    col: usize,
    name: &str,
) -> Result<&'r str, FormatError> {
    let v = &record[col];
    if v.is_empty() {
        return Err(FormatError::MalformedRow {
            line,
            reason: format!("empty {name}"),
        });
    }
    Ok(v)
}

/// Reads annotation rows in file order. Columns `task_id`, `worker_id`,
/// `question_id` and `label` are required; `annotation_id` defaults to the
/// 1-based data row number. Every other column is kept as an attribute.
pub fn read_annotations_csv(bytes: &[u8]) -> Result<Vec<Annotation>, FormatError> {
    let table = Table::parse(bytes)?;
    let task = table.column("task_id")?;
    let worker = table.column("worker_id")?;
    let question = table.column("question_id")?;
    let label = table.column("label")?;
    let id = table.optional_column("annotation_id");
    let mut used = vec![task, worker, question, label];
    used.extend(id);

    let mut out = Vec::with_capacity(table.rows.len());
    let mut ids = HashSet::new();
    for (row, (line, record)) in table.rows.iter().enumerate() {
        let line = *line;
        let annotation_id = match id {
            Some(c) => required(record, line, c, "annotation_id")?.to_string(),
            None => (row + 1).to_string(),
        };
        if !ids.insert(annotation_id.clone()) {
            return Err(FormatError::DuplicateId {
                kind: "annotation",
                id: annotation_id,
                line,
            });
        }
        let mut a = Annotation::new(
            annotation_id,
            required(record, line, task, "task_id")?,
            required(record, line, worker, "worker_id")?,
            required(record, line, question, "question_id")?,
            record[label].to_string(),
        );
        a.attrs = table.attrs(record, &used);
        a.source_line = Some(line);
        out.push(a);
    }
    Ok(out)
}

/// Reads task rows: `task_id` plus any observable attribute columns.
pub fn read_tasks_csv(bytes: &[u8]) -> Result<Vec<TaskRecord>, FormatError> {
    let table = Table::parse(bytes)?;
    let col = table.column("task_id")?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        let id = required(record, *line, col, "task_id")?;
        if !seen.insert(id.to_string()) {
            return Err(FormatError::DuplicateId {
                kind: "task",
                id: id.to_string(),
                line: *line,
            });
        }
        let mut t = TaskRecord::new(id);
        t.observable_attrs = table.attrs(record, &[col]);
        out.push(t);
    }
    Ok(out)
}

/// Reads worker rows: `worker_id` plus attribute columns.
pub fn read_workers_csv(bytes: &[u8]) -> Result<Vec<WorkerRecord>, FormatError> {
    let table = Table::parse(bytes)?;
    let col = table.column("worker_id")?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        let id = required(record, *line, col, "worker_id")?;
        if !seen.insert(id.to_string()) {
            return Err(FormatError::DuplicateId {
                kind: "worker",
                id: id.to_string(),
                line: *line,
            });
        }
        let mut w = WorkerRecord::new(id);
        w.attrs = table.attrs(record, &[col]);
        out.push(w);
    }
    Ok(out)
}

/// Reads `(task_id, label)` pairs from a file with a `task_id` column and a
/// `label` column. Consensus files are accepted too: their `best_label`
/// column is used when there is no `label`.
pub fn read_task_labels_csv(bytes: &[u8]) -> Result<Vec<(String, String)>, FormatError> {
    let table = Table::parse(bytes)?;
    let task = table.column("task_id")?;
    let label = table
        .optional_column("label")
        .or_else(|| table.optional_column("best_label"))
        .ok_or_else(|| FormatError::MissingColumn("label".into()))?;
    table
        .rows
        .iter()
        .map(|(line, record)| {
            Ok((
                required(record, *line, task, "task_id")?.to_string(),
                record[label].to_string(),
            ))
        })
        .collect()
}

/// Writes annotations back out in a fixed layout: the five id columns, then
/// the union of attribute columns in sorted order.
pub fn write_annotations_csv(annotations: &[Annotation]) -> Vec<u8> {
    let extra: std::collections::BTreeSet<&str> = annotations
        .iter()
        .flat_map(|a| a.attrs.keys().map(String::as_str))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["annotation_id", "task_id", "worker_id", "question_id", "label"];
    header.extend(extra.iter().copied());
    w.write_record(&header).expect("in-memory write");
    for a in annotations {
        let mut row = vec![
            a.annotation_id.as_str(),
            &a.task_id,
            &a.worker_id,
            &a.question_id,
            &a.reported_label,
        ];
        row.extend(extra.iter().map(|k| a.attrs.get(*k).map(String::as_str).unwrap_or("")));
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Tasks in the same spirit: `task_id` then sorted attribute columns.
pub fn write_tasks_csv(tasks: &[TaskRecord]) -> Vec<u8> {
    let extra: std::collections::BTreeSet<&str> = tasks
        .iter()
        .flat_map(|t| t.observable_attrs.keys().map(String::as_str))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task_id"];
    header.extend(extra.iter().copied());
    w.write_record(&header).expect("in-memory write");
    for t in tasks {
        let mut row = vec![t.task_id.as_str()];
        row.extend(
            extra
                .iter()
                .map(|k| t.observable_attrs.get(*k).map(String::as_str).unwrap_or("")),
        );
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
