//! Output file formats: consensus CSV, params/diagnostics JSON, curve CSV.

use std::fmt::Write as _;

use cck_core::aggregation::{Confusion, WorkerConfusion};
use cck_core::{
    CommunityProfile, ConsensusResult, Diagnostics, ModelKind, ModelParams, ProspectiveCurve,
};
use ndarray::Array2;
use serde_json::Value;

use crate::error::FormatError;

pub const CONSENSUS_DIGITS: usize = 9;
pub const PARAMS_DIGITS: usize = 12;

/// Fixed-point rendering with `digits` significant digits. Zero keeps the
/// width of a unit value (`0.00000000` for 9 digits).
pub fn format_significant(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // exponent after rounding, so 0.99999999996 counts as 1
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn consensus_file_name(question: &str) -> String {
    format!("consensus_{question}.csv")
}

pub fn params_file_name(question: &str) -> String {
    format!("params_{question}.json")
}

pub fn diagnostics_file_name(question: &str) -> String {
    format!("diagnostics_{question}.json")
}

/// `task_id,best_label,p_<class>...`, one row per task in declaration order.
pub fn write_consensus_csv(result: &ConsensusResult) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task_id".to_string(), "best_label".to_string()];
    header.extend(result.classes.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).expect("in-memory write");
    for (i, task) in result.task_ids.iter().enumerate() {
        let mut row = vec![task.clone(), result.classes[result.hard_labels[i]].clone()];
        row.extend(
            result
                .probs
                .row(i)
                .iter()
                .map(|&p| format_significant(p, CONSENSUS_DIGITS)),
        );
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// A consensus file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTable {
    pub classes: Vec<String>,
    pub task_ids: Vec<String>,
    pub best_labels: Vec<String>,
    pub probs: Array2<f64>,
}

pub fn read_consensus_csv(bytes: &[u8]) -> Result<ConsensusTable, FormatError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r
        .headers()
        .map_err(|e| FormatError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.get(0) != Some("task_id") {
        return Err(FormatError::MissingColumn("task_id".into()));
    }
    if header.get(1) != Some("best_label") {
        return Err(FormatError::MissingColumn("best_label".into()));
    }
    let classes = header
        .iter()
        .skip(2)
        .map(|h| {
            h.strip_prefix("p_").map(str::to_string).ok_or_else(|| FormatError::MalformedRow {
                line: 1,
                reason: format!("column \"{h}\" is not a probability column"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut task_ids = Vec::new();
    let mut best_labels = Vec::new();
    let mut values = Vec::new();
    for (row, record) in r.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| FormatError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        task_ids.push(record[0].to_string());
        best_labels.push(record[1].to_string());
        for field in record.iter().skip(2) {
            values.push(field.parse::<f64>().map_err(|e| FormatError::MalformedRow {
                line,
                reason: format!("\"{field}\": {e}"),
            })?);
        }
    }
    let probs = Array2::from_shape_vec((task_ids.len(), classes.len()), values)
        .expect("row lengths checked by the reader");
    Ok(ConsensusTable {
        classes,
        task_ids,
        best_labels,
        probs,
    })
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn json_num(x: f64) -> String {
    if x.is_finite() {
        format_significant(x, PARAMS_DIGITS)
    } else {
        "null".into()
    }
}

fn json_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| json_num(x)).collect();
    format!("[{}]", items.join(", "))
}

fn json_matrix(m: &Array2<f64>, indent: &str) -> String {
    let rows: Vec<String> = m
        .rows()
        .into_iter()
        .map(|r| format!("{indent}  {}", json_vec(&r.to_vec())))
        .collect();
    format!("[\n{}\n{indent}]", rows.join(",\n"))
}

fn write_header(out: &mut String, model: ModelKind, question: &str, classes: &[String]) {
    let classes: Vec<String> = classes.iter().map(|c| json_str(c)).collect();
    writeln!(out, "{{").unwrap();
    writeln!(out, "  \"model\": {},", json_str(model.as_str())).unwrap();
    writeln!(out, "  \"question\": {},", json_str(question)).unwrap();
    writeln!(out, "  \"classes\": [{}],", classes.join(", ")).unwrap();
}

fn write_diagnostics(out: &mut String, d: &Diagnostics) {
    writeln!(out, "  \"iterations\": {},", d.iterations).unwrap();
    writeln!(out, "  \"converged\": {},", d.converged).unwrap();
    let objective = d.final_objective.map(json_num).unwrap_or_else(|| "null".into());
    writeln!(out, "  \"final_objective\": {objective},").unwrap();
    writeln!(out, "  \"annotated_tasks\": {},", d.annotated_task_count).unwrap();
    writeln!(out, "  \"unannotated_tasks\": {}", d.unannotated_task_count).unwrap();
    writeln!(out, "}}").unwrap();
}

/// Fitted parameters with their run diagnostics. Keys always appear in the
/// same order; per-worker matrices are keyed by worker id.
pub fn write_params_json(
    model: ModelKind,
    question: &str,
    params: &ModelParams,
    diagnostics: &Diagnostics,
) -> Vec<u8> {
    let mut out = String::new();
    write_header(&mut out, model, question, &params.classes);
    writeln!(out, "  \"tau\": {},", json_vec(&params.tau)).unwrap();
    match &params.confusion {
        Confusion::Pooled(m) => {
            writeln!(out, "  \"confusion\": {},", json_matrix(m, "  ")).unwrap();
        }
        Confusion::PerWorker(ws) => {
            let entries: Vec<String> = ws
                .iter()
                .map(|w| format!("    {}: {}", json_str(&w.worker_id), json_matrix(&w.matrix, "    ")))
                .collect();
            if entries.is_empty() {
                writeln!(out, "  \"confusion\": {{}},").unwrap();
            } else {
                writeln!(out, "  \"confusion\": {{\n{}\n  }},", entries.join(",\n")).unwrap();
            }
        }
    }
    write_diagnostics(&mut out, diagnostics);
    out.into_bytes()
}

/// Run summary for models without parameters (majority vote).
pub fn write_diagnostics_json(
    model: ModelKind,
    question: &str,
    classes: &[String],
    diagnostics: &Diagnostics,
) -> Vec<u8> {
    let mut out = String::new();
    write_header(&mut out, model, question, classes);
    write_diagnostics(&mut out, diagnostics);
    out.into_bytes()
}

/// A params (or profile) document read back. Only `classes`, `tau` and
/// `confusion` are required.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsDocument {
    pub name: Option<String>,
    pub model: Option<ModelKind>,
    pub question: Option<String>,
    pub params: ModelParams,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

fn invalid(reason: impl Into<String>) -> FormatError {
    FormatError::InvalidDocument {
        what: "params document",
        reason: reason.into(),
    }
}

fn as_f64_vec(v: &Value, what: &str) -> Result<Vec<f64>, FormatError> {
    v.as_array()
        .ok_or_else(|| invalid(format!("{what} is not an array")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| invalid(format!("{what} has a non-numeric entry"))))
        .collect()
}

fn as_matrix(v: &Value, k: usize, what: &str) -> Result<Array2<f64>, FormatError> {
    let rows = v.as_array().ok_or_else(|| invalid(format!("{what} is not an array")))?;
    if rows.len() != k {
        return Err(invalid(format!("{what} has {} rows, expected {k}", rows.len())));
    }
    let mut m = Array2::zeros((k, k));
    for (r, row) in rows.iter().enumerate() {
        let row = as_f64_vec(row, what)?;
        if row.len() != k {
            return Err(invalid(format!("{what} row {r} has {} entries, expected {k}", row.len())));
        }
        for (c, x) in row.into_iter().enumerate() {
            m[[r, c]] = x;
        }
    }
    Ok(m)
}

pub fn read_params_json(bytes: &[u8]) -> Result<ParamsDocument, FormatError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| invalid(e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| invalid("top level is not an object"))?;
    let get = |key: &str| obj.get(key).ok_or_else(|| invalid(format!("missing \"{key}\"")));
    let classes: Vec<String> = get("classes")?
        .as_array()
        .ok_or_else(|| invalid("classes is not an array"))?
        .iter()
        .map(|c| c.as_str().map(str::to_string).ok_or_else(|| invalid("class is not a string")))
        .collect::<Result<_, _>>()?;
    let k = classes.len();
    let tau = as_f64_vec(get("tau")?, "tau")?;
    if tau.len() != k {
        return Err(invalid(format!("tau has {} entries for {k} classes", tau.len())));
    }
    let confusion = match get("confusion")? {
        Value::Object(workers) => Confusion::PerWorker(
            workers
                .iter()
                .map(|(id, m)| {
                    Ok(WorkerConfusion {
                        worker_id: id.clone(),
                        matrix: as_matrix(m, k, &format!("confusion of worker \"{id}\""))?,
                    })
                })
                .collect::<Result<_, FormatError>>()?,
        ),
        m => Confusion::Pooled(as_matrix(m, k, "confusion")?),
    };
    let text = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_string);
    let model = match text("model") {
        Some(m) => Some(m.parse::<ModelKind>().map_err(|e| invalid(e.to_string()))?),
        None => None,
    };
    Ok(ParamsDocument {
        name: text("name"),
        model,
        question: text("question"),
        params: ModelParams {
            classes,
            tau,
            confusion,
        },
        iterations: obj.get("iterations").and_then(Value::as_u64).map(|n| n as usize),
        converged: obj.get("converged").and_then(Value::as_bool),
    })
}

/// A community profile from a params file or a hand-written profile with
/// the same fields. The name is `name`, else `question`, else `fallback`.
pub fn read_profile_json(bytes: &[u8], fallback: &str) -> Result<CommunityProfile, FormatError> {
    let doc = read_params_json(bytes)?;
    let name = doc.name.or(doc.question).unwrap_or_else(|| fallback.to_string());
    CommunityProfile::from_params(name, &doc.params).map_err(|e| FormatError::InvalidDocument {
        what: "profile",
        reason: e.to_string(),
    })
}

/// `model,redundancy,accuracy,std_err,n_tasks,seed,rng`.
pub fn write_curve_csv(curve: &ProspectiveCurve) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "redundancy", "accuracy", "std_err", "n_tasks", "seed", "rng"])
        .expect("in-memory write");
    for e in &curve.entries {
        w.write_record([
            e.model.as_str().to_string(),
            e.redundancy.to_string(),
            format_significant(e.accuracy, CONSENSUS_DIGITS),
            format_significant(e.std_err, CONSENSUS_DIGITS),
            e.n_tasks.to_string(),
            e.seed.to_string(),
            curve.rng_algorithm.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub model: ModelKind,
    pub redundancy: usize,
    pub accuracy: f64,
    pub std_err: f64,
    pub n_tasks: usize,
    pub seed: u64,
}

pub fn read_curve_csv(bytes: &[u8]) -> Result<Vec<CurveRow>, FormatError> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let line = row + 2;
        let bad = |reason: String| FormatError::MalformedRow { line, reason };
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() < 6 {
            return Err(bad(format!("{} fields", record.len())));
        }
        out.push(CurveRow {
            model: record[0].parse().map_err(bad)?,
            redundancy: record[1].parse().map_err(|e| bad(format!("{e}")))?,
            accuracy: record[2].parse().map_err(|e| bad(format!("{e}")))?,
            std_err: record[3].parse().map_err(|e| bad(format!("{e}")))?,
            n_tasks: record[4].parse().map_err(|e| bad(format!("{e}")))?,
            seed: record[5].parse().map_err(|e| bad(format!("{e}")))?,
        });
    }
    Ok(out)
}
