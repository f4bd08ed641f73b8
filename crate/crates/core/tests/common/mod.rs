#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use smalicov::instrument::{find_logchecker, probes_in, Granularity, InstrumentationConfig};
use smalicov::simulate::ExecutionPath;
use smalicov::{load_app, App};

pub const CORPUS_APPS: &[&str] = &["app1", "fixture", "single", "collision"];

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

pub fn corpus_app(name: &str) -> App {
    load_app(&corpus_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn corpus_apps() -> Vec<(String, App)> {
    CORPUS_APPS
        .iter()
        .map(|n| (n.to_string(), corpus_app(n)))
        .collect()
}

pub fn smali_files(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir(root)
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "smali"))
        .collect();
    out.sort();
    out
}

fn walkdir(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out
}

/// Counts taken straight from the smali text, without the crate's parser.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct TextCounts {
    pub classes: usize,
    pub classes_with_ctor: usize,
    pub methods: usize,
    pub bodiless_methods: usize,
    pub statements: usize,
}

pub fn count_text(src: &str) -> TextCounts {
    let mut c = TextCounts {
        classes: 1,
        ..TextCounts::default()
    };
    let mut in_method = false;
    let mut block_end: Option<&str> = None;
    let mut has_ctor = false;
    let lines: Vec<&str> = src.lines().map(str::trim).collect();
    for (i, line) in lines.iter().enumerate() {
        if let Some(end) = block_end {
            if line.starts_with(end) {
                block_end = None;
            }
            continue;
        }
        if line.starts_with(".method ") {
            in_method = true;
            c.methods += 1;
            let header: Vec<&str> = line.split_whitespace().collect();
            if header.contains(&"native") || header.contains(&"abstract") {
                c.bodiless_methods += 1;
            }
            if line.contains(" <init>(") || line.contains(" <clinit>(") {
                has_ctor = true;
            }
            continue;
        }
        if *line == ".end method" {
            in_method = false;
            continue;
        }
        if !in_method || line.is_empty() || line.starts_with('#') || line.starts_with(':') {
            continue;
        }
        if line.starts_with('.') {
            block_end = match line.split_whitespace().next().unwrap() {
                ".annotation" => Some(".end annotation"),
                ".packed-switch" => Some(".end packed-switch"),
                ".sparse-switch" => Some(".end sparse-switch"),
                ".array-data" => Some(".end array-data"),
                ".param" if lines.get(i + 1).is_some_and(|l| l.starts_with(".annotation")) => {
                    Some(".end param")
                }
                _ => None,
            };
            continue;
        }
        c.statements += 1;
    }
    c.classes_with_ctor = usize::from(has_ctor);
    c
}

pub fn count_tree(root: &Path) -> TextCounts {
    let mut total = TextCounts::default();
    for f in smali_files(root) {
        let c = count_text(&std::fs::read_to_string(f).unwrap());
        total.classes += c.classes;
        total.classes_with_ctor += c.classes_with_ctor;
        total.methods += c.methods;
        total.bodiless_methods += c.bodiless_methods;
        total.statements += c.statements;
    }
    total
}

/// Every probe payload present in an instrumented app.
pub fn injected_payloads(app: &App) -> BTreeSet<String> {
    let lc = find_logchecker(app).expect("instrumented");
    app.iter()
        .filter(|c| c.descriptor != lc)
        .flat_map(|c| c.methods.iter())
        .flat_map(|m| probes_in(m, &lc).into_iter().map(|(_, p)| p.payload))
        .collect()
}

pub fn random_config(rng: &mut impl Rng) -> InstrumentationConfig {
    let mut gs: Vec<Granularity> = Granularity::ALL
        .into_iter()
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    if gs.is_empty() {
        gs.push(*Granularity::ALL.choose(rng).unwrap());
    }
    let mut cfg = InstrumentationConfig::with_granularities(gs);
    cfg.identifier = ["ANDROLOG", "COVTAG", "X_1"].choose(rng).unwrap().to_string();
    cfg.exclude_libraries = rng.gen_bool(0.5);
    cfg
}

/// A corpus app, or a random subset of the classes of the largest one.
pub fn random_app(rng: &mut impl Rng, apps: &[(String, App)]) -> App {
    let (_, base) = apps.choose(rng).unwrap();
    if rng.gen_bool(0.5) || base.len() < 3 {
        return base.clone();
    }
    let mut sub = App::new(format!("{}-subset", base.name));
    for entry in base.classes.values() {
        if rng.gen_bool(0.6) {
            sub.insert(entry.path.clone(), entry.class.clone()).unwrap();
        }
    }
    sub
}

/// Random walk: methods entered in random order, each executing a random
/// sequence of its statements, with revisits.
pub fn random_path(rng: &mut impl Rng, app: &App) -> ExecutionPath {
    let methods: Vec<(String, usize)> = app
        .iter()
        .flat_map(|c| {
            c.methods
                .iter()
                .filter(|m| m.statement_count() > 0)
                .map(move |m| (c.method_id(m), m.statement_count()))
        })
        .collect();
    let mut steps = Vec::new();
    if methods.is_empty() {
        return ExecutionPath::new(steps);
    }
    let visits = rng.gen_range(0..=methods.len() * 2);
    for _ in 0..visits {
        let (id, n) = methods.choose(rng).unwrap();
        let len = rng.gen_range(1..=n * 2);
        for _ in 0..len {
            steps.push((id.clone(), rng.gen_range(0..*n)));
        }
    }
    ExecutionPath::new(steps)
}

/// Occurrences of each payload in a log text.
pub fn payload_counts(log: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for line in log.lines() {
        let payload = line.split_once("): ").map(|(_, p)| p).unwrap_or(line);
        *out.entry(payload.to_string()).or_default() += 1;
    }
    out
}
