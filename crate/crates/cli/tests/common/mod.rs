#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn cck() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cck"))
}

pub fn run(args: &[&str]) -> Output {
    cck().args(args).output().expect("cck runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn put(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

/// Reference and predicted yes/no files reproducing 546/59/108/194.
pub fn albania_files() -> (Vec<u8>, Vec<u8>) {
    let mut reference = String::from("task_id,label\n");
    let mut predicted = String::from("task_id,label\n");
    let blocks = [(546, "yes", "yes"), (59, "yes", "no"), (108, "no", "yes"), (194, "no", "no")];
    let mut id = 0;
    for (n, truth, guess) in blocks {
        for _ in 0..n {
            id += 1;
            reference.push_str(&format!("img{id},{truth}\n"));
            predicted.push_str(&format!("img{id},{guess}\n"));
        }
    }
    (predicted.into_bytes(), reference.into_bytes())
}

/// Ratings (aaa), (aab), (bbb), (abb) by three raters.
pub fn kappa_example() -> Vec<u8> {
    let items = ["aaa", "aab", "bbb", "abb"];
    let mut csv = String::from("task_id,worker_id,question_id,label\n");
    for (i, item) in items.iter().enumerate() {
        for (r, label) in item.chars().enumerate() {
            csv.push_str(&format!("i{i},r{r},q,{label}\n"));
        }
    }
    csv.into_bytes()
}

pub const IDENTITY_PROFILE: &[u8] = br#"{
  "name": "perfect",
  "classes": ["a", "b", "c"],
  "tau": [0.5, 0.3, 0.2],
  "confusion": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
}"#;

pub const THREE_ROWS: &[u8] = b"task_id,worker_id,question_id,label\nt1,w1,q,yes\nt1,w2,q,no\nt2,w1,q,no\n";

pub const QUESTIONS: [&str; 2] = ["damage", "severity"];

fn platform_label(task: usize, worker: usize, question: usize) -> &'static str {
    let classes: [&[&str]; 2] = [&["yes", "no"], &["low", "mid", "high"]];
    let c = classes[question];
    let truth = task % c.len();
    if (task * 7 + worker * 3 + question) % 5 == 0 {
        c[(truth + 1) % c.len()]
    } else {
        c[truth]
    }
}

/// 10 tasks, 5 workers, 2 questions: 100 task runs with one answer each.
pub fn platform_task_runs() -> Vec<serde_json::Value> {
    let mut runs = Vec::new();
    for (q, question) in QUESTIONS.iter().enumerate() {
        for task in 0..10 {
            for worker in 0..5 {
                runs.push(serde_json::json!({
                    "id": runs.len() + 1,
                    "task_id": task + 1,
                    "worker_id": format!("u{worker}"),
                    "answers": { *question: platform_label(task, worker, q) },
                }));
            }
        }
    }
    runs
}

pub fn platform_tasks() -> Vec<serde_json::Value> {
    (0..10)
        .map(|t| serde_json::json!({"id": t + 1, "info": {"media_url": format!("http://img/{t}.jpg")}}))
        .collect()
}

/// The platform records above as annotation and task CSV files.
pub fn platform_as_csv() -> (Vec<u8>, Vec<u8>) {
    let mut annotations = String::from("annotation_id,task_id,worker_id,question_id,label\n");
    for run in platform_task_runs() {
        let (q, l) = run["answers"].as_object().unwrap().iter().next().unwrap();
        annotations.push_str(&format!(
            "{}/{q},{},{},{q},{}\n",
            run["id"],
            run["task_id"],
            run["worker_id"].as_str().unwrap(),
            l.as_str().unwrap()
        ));
    }
    let mut tasks = String::from("task_id,media_url\n");
    for t in 0..10 {
        tasks.push_str(&format!("{},http://img/{t}.jpg\n", t + 1));
    }
    (annotations.into_bytes(), tasks.into_bytes())
}

/// Every regular file under `dir`, as (relative path with `/`, bytes), sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap();
                let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
