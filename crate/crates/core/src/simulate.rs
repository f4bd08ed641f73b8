//! Desk-scale execution model.
//!
//! A path is a declared sequence of `(method id, statement index)` steps over
//! the original program. [`simulate_trace`] walks an instrumented app along
//! such a path and prints what the device log would contain, by interpreting
//! where the probes sit relative to the original instructions. It never
//! evaluates registers. [`oracle_coverage`] computes the expected report from
//! the path alone, without looking at any probe.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::app::App;
use crate::coverage::{percentage, render_log_line, summarize_app, CoverageReport, KindCoverage};
use crate::error::{Error, Result};
use crate::instrument::{
    component_kinds, find_logchecker, probe_at, probe_eligibility, probe_goes_before, probe_mask,
    InstrumentationConfig, LogCheckerModel,
};
use crate::ir::{
    parse_statement_body, split_payload, statement_payload, BodyKind, ProbeKind, SmaliClass,
    SmaliMethod,
};

/// Process id printed in simulated log lines.
pub const SIMULATED_PID: u32 = 4242;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionPath {
    pub steps: Vec<(String, usize)>,
}

impl ExecutionPath {
    pub fn new(steps: Vec<(String, usize)>) -> Self {
        ExecutionPath { steps }
    }

    /// One `methodId<TAB>index` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let invalid = |reason: String| Error::InvalidPath {
                step: steps.len() + 1,
                reason: format!("line {}: {reason}", n + 1),
            };
            let (method, index) = line
                .rsplit_once('\t')
                .or_else(|| line.rsplit_once(' '))
                .ok_or_else(|| invalid("expected `methodId<TAB>index`".into()))?;
            let index = index
                .trim()
                .parse()
                .map_err(|_| invalid(format!("`{}` is not a statement index", index.trim())))?;
            steps.push((method.trim().to_string(), index));
        }
        Ok(ExecutionPath { steps })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (m, i) in &self.steps {
            let _ = writeln!(out, "{m}\t{i}");
        }
        out
    }

    pub fn entered_methods(&self) -> BTreeSet<&str> {
        self.steps.iter().map(|(m, _)| m.as_str()).collect()
    }

    /// Classes one of whose constructors appears in the path.
    pub fn entered_classes(&self) -> BTreeSet<&str> {
        self.steps
            .iter()
            .filter_map(|(m, _)| {
                let (class, rest) = m.split_once("->")?;
                (rest.starts_with("<init>(") || rest.starts_with("<clinit>(")).then_some(class)
            })
            .collect()
    }

    /// Every statement of every method with code, in class and method order.
    pub fn exhaustive(app: &App) -> Self {
        let mut steps = Vec::new();
        for class in app.iter() {
            for method in class.methods.iter().filter(|m| m.has_code()) {
                let id = class.method_id(method);
                for (i, _) in method.statements() {
                    steps.push((id.clone(), i));
                }
            }
        }
        ExecutionPath { steps }
    }
}

fn method_table<'a>(app: &'a App, skip: Option<&str>) -> HashMap<String, (&'a SmaliClass, &'a SmaliMethod)> {
    app.iter()
        .filter(|c| Some(c.descriptor.as_str()) != skip)
        .flat_map(|c| c.methods.iter().map(move |m| (c.method_id(m), (c, m))))
        .collect()
}

/// Probe layout of one instrumented method, relative to its original
/// instructions.
struct MethodLayout {
    /// Non-statement probes that run whenever the method is entered.
    entry: Vec<String>,
    /// Statement probes guaranteed to run with each original instruction.
    per_statement: Vec<Vec<String>>,
}

impl MethodLayout {
    fn build(method_id: &str, method: &SmaliMethod, logchecker: &str) -> Self {
        let body = &method.body;
        let mask = probe_mask(body, logchecker);
        let originals: Vec<usize> = (0..body.len())
            .filter(|&p| body[p].kind == BodyKind::Instruction && !mask[p])
            .collect();

        let mut entry = Vec::new();
        let mut p = 0;
        while p < body.len() {
            match body[p].kind {
                BodyKind::Directive | BodyKind::Comment => p += 1,
                BodyKind::Label => break,
                BodyKind::Instruction if mask[p] => {
                    let probe = probe_at(body, p, logchecker).expect("masked probe start");
                    if probe.kind.is_some_and(|k| k != ProbeKind::Statement) {
                        entry.push(probe.payload);
                    }
                    p += 2;
                }
                BodyKind::Instruction => break,
            }
        }

        let own = |payload: &str, index: usize| -> bool {
            let Some((ProbeKind::Statement, rest)) = split_payload(payload) else {
                return false;
            };
            parse_statement_body(rest)
                .is_some_and(|s| s.method_id == method_id && s.index == index)
        };

        let mut per_statement = Vec::with_capacity(originals.len());
        for (index, &pos) in originals.iter().enumerate() {
            let mut fired = Vec::new();
            // Probes in the straight-line run just before the instruction.
            let mut before = Vec::new();
            let mut q = pos;
            while q > 0 {
                let prev = q - 1;
                match body[prev].kind {
                    BodyKind::Directive | BodyKind::Comment => q -= 1,
                    BodyKind::Instruction if mask[prev] && prev > 0 => {
                        if let Some(probe) = probe_at(body, prev - 1, logchecker) {
                            before.push(probe.payload);
                            q -= 2;
                        } else {
                            break;
                        }
                    }
                    _ => break,
                }
            }
            before.reverse();
            fired.extend(before.into_iter().filter(|p| own(p, index)));

            // Probes in the run right after it, for instructions that fall through.
            if !probe_goes_before(body[pos].mnemonic()) {
                let mut q = pos + 1;
                let mut passed_result = false;
                while q < body.len() {
                    match body[q].kind {
                        BodyKind::Directive | BodyKind::Comment => q += 1,
                        BodyKind::Instruction if mask[q] => {
                            let probe = probe_at(body, q, logchecker).expect("masked probe start");
                            if own(&probe.payload, index) {
                                fired.push(probe.payload);
                            }
                            q += 2;
                        }
                        BodyKind::Instruction
                            if !passed_result && body[q].mnemonic().starts_with("move-result") =>
                        {
                            passed_result = true;
                            q += 1;
                        }
                        _ => break,
                    }
                }
            }
            per_statement.push(fired);
        }
        MethodLayout {
            entry,
            per_statement,
        }
    }
}

fn check_step<'a>(
    table: &HashMap<String, (&'a SmaliClass, &'a SmaliMethod)>,
    step: usize,
    method_id: &str,
    index: usize,
    count: impl Fn(&SmaliMethod) -> usize,
) -> Result<(&'a SmaliClass, &'a SmaliMethod)> {
    let Some(&(class, method)) = table.get(method_id) else {
        return Err(Error::InvalidPath {
            step,
            reason: format!("unknown method {method_id}"),
        });
    };
    let n = count(method);
    if index >= n {
        return Err(Error::InvalidPath {
            step,
            reason: format!("{method_id} has {n} statements, index {index} is out of range"),
        });
    }
    Ok((class, method))
}

/// Log text an instrumented app would print when executed along `path`.
pub fn simulate_trace(instrumented: &App, path: &ExecutionPath, identifier: &str) -> Result<String> {
    let logchecker = find_logchecker(instrumented).ok_or(Error::NotInstrumented)?;
    let table = method_table(instrumented, Some(&logchecker));
    let mut layouts: HashMap<&str, MethodLayout> = HashMap::new();
    let model = LogCheckerModel::default();

    let mut previous: Option<&str> = None;
    for (n, (method_id, index)) in path.steps.iter().enumerate() {
        let (_, method) = check_step(&table, n + 1, method_id, *index, |m| {
            let mask = probe_mask(&m.body, &logchecker);
            (0..m.body.len())
                .filter(|&p| m.body[p].kind == BodyKind::Instruction && !mask[p])
                .count()
        })?;
        let layout = layouts
            .entry(method_id.as_str())
            .or_insert_with(|| MethodLayout::build(method_id, method, &logchecker));
        if previous != Some(method_id.as_str()) {
            for payload in &layout.entry {
                model.log(payload, identifier);
            }
        }
        for payload in &layout.per_statement[*index] {
            model.log(payload, identifier);
        }
        previous = Some(method_id.as_str());
    }

    let mut out = String::new();
    for (tag, payload) in model.records() {
        out.push_str(&render_log_line(&tag, SIMULATED_PID, &payload));
        out.push('\n');
    }
    Ok(out)
}

/// Expected report for `path`, derived from the path and the original app.
pub fn oracle_coverage(
    app: &App,
    cfg: &InstrumentationConfig,
    path: &ExecutionPath,
) -> Result<CoverageReport> {
    let summary = summarize_app(app, cfg)?;
    let table = method_table(app, None);
    let components = component_kinds(app, &cfg.component_bases)?;

    let mut fired: BTreeSet<String> = BTreeSet::new();
    for (n, (method_id, index)) in path.steps.iter().enumerate() {
        let (class, method) = check_step(&table, n + 1, method_id, *index, |m| m.statement_count())?;
        // Entry through a probe-less method is invisible to every kind.
        if !method.has_code() || probe_eligibility(method).is_err() {
            continue;
        }
        let desc = &class.descriptor;
        fired.insert(format!("METHOD={method_id}"));
        let (_, item) = method
            .statements()
            .find(|(i, _)| i == index)
            .expect("index validated");
        fired.insert(statement_payload(method_id, &item.text, *index));
        if method.is_constructor() {
            fired.insert(format!("CLASS={desc}"));
        }
        if let Some(kind) = components.get(desc) {
            if kind.is_lifecycle(&method.name) {
                fired.insert(format!("{}={desc}", kind.probe_kind().key()));
            }
        }
    }

    let kinds: BTreeMap<ProbeKind, KindCoverage> = summary
        .kinds
        .iter()
        .map(|(&kind, expected)| {
            let (hit, miss): (Vec<&String>, Vec<&String>) =
                expected.iter().partition(|p| fired.contains(*p));
            (
                kind,
                KindCoverage {
                    covered: hit.len(),
                    total: expected.len(),
                    percentage: percentage(hit.len(), expected.len()),
                    uncovered: miss.into_iter().cloned().collect(),
                    unknown: Vec::new(),
                },
            )
        })
        .collect();

    Ok(CoverageReport {
        app: summary.app,
        identifier: summary.identifier,
        kinds,
        skipped: summary.skipped,
        unmatched: Vec::new(),
    })
}
