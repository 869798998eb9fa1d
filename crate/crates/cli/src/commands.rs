use std::fs;
use std::path::Path;

use cck_core::reliability::{binary_eval, fleiss_kappa};
use cck_core::prospective::run_sweep;
use cck_core::{validate_dataset, EmConfig, EvalReport, KappaReport, ModelKind};
use cck_io::{
    format_significant, read_profile_json, read_task_labels_csv, run_consensus, write_curve_csv,
    RawInputs, RunConfig,
};
use cck_service::ServiceConfig;
use serde_json::{json, Value};

use crate::{
    ConsensusArgs, EmArgs, EvaluateArgs, Format, KappaArgs, ModelArg, ProspectiveArgs, ServeArgs,
};

type Outcome = Result<String, String>;

const DIGITS: usize = 9;

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn in_file(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Mv => ModelKind::Mv,
            ModelArg::Mm => ModelKind::Mm,
            ModelArg::Ds => ModelKind::Ds,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, String> {
    match path {
        Some(p) => RunConfig::from_json(&read(p)?).map_err(|e| in_file(p, e)),
        None => Ok(RunConfig::default()),
    }
}

fn apply_em(em: &EmArgs, tol: &mut f64, max_iter: &mut usize, beta: &mut f64) {
    if let Some(t) = em.tol {
        *tol = t;
    }
    if let Some(m) = em.max_iter {
        *max_iter = m;
    }
    if let Some(b) = em.beta {
        *beta = b;
    }
}

pub fn consensus(args: ConsensusArgs) -> Outcome {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(m) = args.model {
        config.model = m.into();
    }
    if args.questions.is_some() {
        config.questions = args.questions;
    }
    let em = &mut config.em;
    apply_em(&args.em, &mut em.tol, &mut em.max_iter, &mut em.beta);
    config.check().map_err(|e| e.to_string())?;

    let annotations = read(&args.annotations)?;
    let tasks = args.tasks.as_deref().map(read).transpose()?;
    let workers = args.workers.as_deref().map(read).transpose()?;
    let inputs = RawInputs::from_csv(&annotations, tasks.as_deref(), workers.as_deref())
        .map_err(|e| e.to_string())?;
    let out = run_consensus(&inputs, &config).map_err(|e| e.to_string())?;
    for f in &out.files {
        write(&args.out.join(&f.name), &f.bytes)?;
    }
    for q in &out.questions {
        println!(
            "{}: {} tasks, {} annotations, {} iterations, {}",
            q.question,
            q.tasks,
            q.annotations_used,
            q.iterations,
            if q.converged { "converged" } else { "not converged" }
        );
    }
    Ok(format!(
        "{} question(s), model {}, {} file(s) written to {}",
        out.questions.len(),
        config.model,
        out.files.len(),
        args.out.display()
    ))
}

fn kappa_json(question: &str, classes: &[String], r: &KappaReport) -> Value {
    let per_class: serde_json::Map<String, Value> = classes
        .iter()
        .zip(&r.per_class_p)
        .map(|(c, p)| (c.clone(), json!(p)))
        .collect();
    json!({
        "question": question,
        "kappa": r.kappa,
        "items_used": r.items_used,
        "items_skipped": r.items_skipped,
        "per_class_p": per_class,
    })
}

pub fn kappa(args: KappaArgs) -> Outcome {
    let config = load_config(args.config.as_deref())?;
    let annotations = read(&args.annotations)?;
    let tasks = args.tasks.as_deref().map(read).transpose()?;
    let inputs = RawInputs::from_csv(&annotations, tasks.as_deref(), None).map_err(|e| e.to_string())?;
    let spaces = config.label_spaces(&inputs.annotations).map_err(|e| e.to_string())?;
    let dataset = validate_dataset(
        inputs.tasks,
        inputs.workers,
        inputs.annotations,
        spaces,
        config.dependency_rules(),
    )
    .map_err(|e| e.to_string())?;
    let dataset = if config.dependencies_enabled {
        dataset.filter_declared_dependencies().0
    } else {
        dataset
    };
    let view = dataset.project_question(&args.question).map_err(|e| e.to_string())?;
    let report: KappaReport = fleiss_kappa(&view).map_err(|e| e.to_string())?;
    match args.format {
        Format::Json => println!("{}", kappa_json(&args.question, view.classes(), &report)),
        Format::Text => {
            println!("question\t{}", args.question);
            println!("kappa\t{}", format_significant(report.kappa, DIGITS));
            println!("items_used\t{}", report.items_used);
            println!("items_skipped\t{}", report.items_skipped);
            for (c, p) in view.classes().iter().zip(&report.per_class_p) {
                println!("p_{c}\t{}", format_significant(*p, DIGITS));
            }
        }
    }
    Ok(format!(
        "question {}, kappa {:.4} over {} item(s)",
        args.question, report.kappa, report.items_used
    ))
}

/// `A:B` (inclusive) or a comma-separated list, ascending.
pub fn parse_redundancy(text: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid redundancy \"{text}\" (expected A:B or a list like 3,6,10)");
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let values: Vec<usize> = match text.split_once(':') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => text.split(',').map(num).collect::<Result<_, _>>()?,
    };
    if values.is_empty() || values[0] == 0 || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(values)
}

pub fn prospective(args: ProspectiveArgs) -> Outcome {
    let redundancies = parse_redundancy(&args.redundancy)?;
    let fallback = args
        .params
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "profile".into());
    let profile = read_profile_json(&read(&args.params)?, &fallback).map_err(|e| in_file(&args.params, e))?;
    let models: Vec<ModelKind> = args.models.iter().map(|&m| m.into()).collect();
    let mut em = EmConfig::default();
    apply_em(&args.em, &mut em.tol, &mut em.max_iter, &mut em.beta);
    let curve = run_sweep(&profile, args.tasks, &redundancies, &models, &em, args.seed)
        .map_err(|e| e.to_string())?;
    write(&args.out, &write_curve_csv(&curve))?;
    Ok(format!(
        "profile {}, {} row(s), {} tasks, seed {}, written to {}",
        profile.name(),
        curve.entries.len(),
        args.tasks,
        args.seed,
        args.out.display()
    ))
}

fn metric_text(x: Option<f64>) -> String {
    x.map(|v| format_significant(v, DIGITS)).unwrap_or_else(|| "undefined".into())
}

pub fn evaluate(args: EvaluateArgs) -> Outcome {
    let load = |path: &Path| -> Result<Vec<(String, bool)>, String> {
        let rows = read_task_labels_csv(&read(path)?).map_err(|e| in_file(path, e))?;
        Ok(rows
            .into_iter()
            .map(|(task, label)| {
                let positive = label == args.positive_class;
                (task, positive)
            })
            .collect())
    };
    let predicted = load(&args.predicted)?;
    let reference = load(&args.reference)?;
    let report: EvalReport = binary_eval(&predicted, &reference).map_err(|e| e.to_string())?;
    let c = report.counts;
    match args.format {
        Format::Json => println!(
            "{}",
            json!({
                "positive_class": args.positive_class,
                "tp": c.tp, "fn": c.fn_, "fp": c.fp, "tn": c.tn,
                "precision": report.precision,
                "recall": report.recall,
                "specificity": report.specificity,
                "negative_predictive_value": report.negative_predictive_value,
                "accuracy": report.accuracy,
            })
        ),
        Format::Text => {
            println!("tp\t{}\nfn\t{}\nfp\t{}\ntn\t{}", c.tp, c.fn_, c.fp, c.tn);
            println!("precision\t{}", metric_text(report.precision));
            println!("recall\t{}", metric_text(report.recall));
            println!("specificity\t{}", metric_text(report.specificity));
            println!("negative_predictive_value\t{}", metric_text(report.negative_predictive_value));
            println!("accuracy\t{}", metric_text(report.accuracy));
        }
    }
    let short = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
    Ok(format!(
        "{} task(s), precision {}, recall {}, accuracy {}",
        c.total(),
        short(report.precision),
        short(report.recall),
        short(report.accuracy)
    ))
}

pub fn serve(args: ServeArgs) -> Outcome {
    let mut config = ServiceConfig::from_env()?;
    if let Some(bind) = args.bind {
        config.bind_addr = bind;
    }
    let addr = config.bind_addr.clone();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime
        .block_on(cck_service::serve(config))
        .map_err(|e| format!("{addr}: {e}"))?;
    Ok(format!("stopped serving on {addr}"))
}
