//! Coverage computation: the denominator side (what could be observed) and
//! the numerator side (what the logs show was observed).

mod log;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::app::App;
use crate::error::{Error, Result};
use crate::instrument::{
    component_kinds, find_logchecker, probe_eligibility, Granularity,
    InstrumentationConfig,
};
use crate::ir::{statement_payload, ProbeKind};

pub use log::{dedup_events, parse_log_line, render_log_line, EventSet, LogHit, LogScan, ProbeEvent};
pub use render::{from_machine, render_machine, render_text};

/// Every probe payload the instrumenter places for an app, per kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSummary {
    pub app: String,
    pub identifier: String,
    pub kinds: BTreeMap<ProbeKind, BTreeSet<String>>,
    /// Units left out of the denominators because they cannot carry a probe.
    pub skipped: BTreeMap<ProbeKind, usize>,
    pub config: InstrumentationConfig,
}

impl AppSummary {
    pub fn total(&self, kind: ProbeKind) -> usize {
        self.kinds.get(&kind).map_or(0, BTreeSet::len)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Compute the summary of an uninstrumented app without instrumenting it.
pub fn summarize_app(app: &App, cfg: &InstrumentationConfig) -> Result<AppSummary> {
    cfg.validate()?;
    if let Some(existing) = find_logchecker(app) {
        return Err(Error::AlreadyInstrumented(existing));
    }
    let mut kinds: BTreeMap<ProbeKind, BTreeSet<String>> =
        cfg.kinds().into_iter().map(|k| (k, BTreeSet::new())).collect();
    let mut skipped: BTreeMap<ProbeKind, usize> = BTreeMap::new();
    let components = if cfg.enabled(Granularity::Components) {
        component_kinds(app, &cfg.component_bases)?
    } else {
        BTreeMap::new()
    };
    let mut bump = |kind: ProbeKind, n: usize| {
        if n > 0 {
            *skipped.entry(kind).or_default() += n;
        }
    };

    for class in app.iter().filter(|c| !cfg.is_library(&c.descriptor)) {
        let desc = &class.descriptor;
        let eligible: Vec<bool> = class
            .methods
            .iter()
            .map(|m| m.has_code() && probe_eligibility(m).is_ok())
            .collect();

        if cfg.enabled(Granularity::Classes) {
            let has_ctor = class
                .methods
                .iter()
                .zip(&eligible)
                .any(|(m, &ok)| ok && m.is_constructor());
            if has_ctor {
                kinds.get_mut(&ProbeKind::Class).unwrap().insert(format!("CLASS={desc}"));
            } else {
                bump(ProbeKind::Class, 1);
            }
        }

        for (method, &ok) in class.methods.iter().zip(&eligible) {
            let id = class.method_id(method);
            if cfg.enabled(Granularity::Methods) {
                if ok {
                    kinds.get_mut(&ProbeKind::Method).unwrap().insert(format!("METHOD={id}"));
                } else {
                    bump(ProbeKind::Method, 1);
                }
            }
            if cfg.enabled(Granularity::Statements) && method.has_code() {
                if ok {
                    let set = kinds.get_mut(&ProbeKind::Statement).unwrap();
                    for (index, item) in method.statements() {
                        set.insert(statement_payload(&id, &item.text, index));
                    }
                } else {
                    bump(ProbeKind::Statement, method.statement_count());
                }
            }
        }

        if let Some(kind) = components.get(desc) {
            let pk = kind.probe_kind();
            let lifecycle = class
                .methods
                .iter()
                .zip(&eligible)
                .any(|(m, &ok)| ok && kind.is_lifecycle(&m.name));
            if lifecycle {
                kinds.get_mut(&pk).unwrap().insert(format!("{}={desc}", pk.key()));
            } else {
                bump(pk, 1);
            }
        }
    }

    Ok(AppSummary {
        app: app.name.clone(),
        identifier: cfg.identifier.clone(),
        kinds,
        skipped,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindCoverage {
    pub covered: usize,
    pub total: usize,
    /// Percentage rounded half-up to two decimals; 0 when nothing is measurable.
    pub percentage: f64,
    pub uncovered: Vec<String>,
    /// Observed payloads of this kind that the summary does not list.
    pub unknown: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub app: String,
    pub identifier: String,
    pub kinds: BTreeMap<ProbeKind, KindCoverage>,
    pub skipped: BTreeMap<ProbeKind, usize>,
    /// Identifier-tagged payloads that belong to no measured kind.
    pub unmatched: Vec<String>,
}

/// `100 * covered / total`, rounded half-up to hundredths in integer arithmetic.
pub fn percentage(covered: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (c, t) = (covered as u128, total as u128);
    let hundredths = (c * 20_000 + t) / (2 * t);
    hundredths as f64 / 100.0
}

pub fn compute_coverage(summary: &AppSummary, events: &EventSet) -> CoverageReport {
    let mut by_kind: BTreeMap<ProbeKind, BTreeSet<&str>> = BTreeMap::new();
    let mut unmatched: BTreeSet<String> = events.malformed.iter().cloned().collect();
    for event in events.events.values() {
        if summary.kinds.contains_key(&event.kind) {
            by_kind.entry(event.kind).or_default().insert(&event.payload);
        } else {
            unmatched.insert(event.payload.clone());
        }
    }

    let kinds = summary
        .kinds
        .iter()
        .map(|(&kind, expected)| {
            let observed = by_kind.remove(&kind).unwrap_or_default();
            let covered = expected.iter().filter(|p| observed.contains(p.as_str())).count();
            let uncovered = expected
                .iter()
                .filter(|p| !observed.contains(p.as_str()))
                .cloned()
                .collect();
            let unknown = observed
                .iter()
                .filter(|p| !expected.contains(**p))
                .map(|p| p.to_string())
                .collect();
            let total = expected.len();
            (
                kind,
                KindCoverage {
                    covered,
                    total,
                    percentage: percentage(covered, total),
                    uncovered,
                    unknown,
                },
            )
        })
        .collect();

    CoverageReport {
        app: summary.app.clone(),
        identifier: summary.identifier.clone(),
        kinds,
        skipped: summary.skipped.clone(),
        unmatched: unmatched.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(percentage(0, 0), 0.0);
        assert_eq!(percentage(1, 3), 33.33);
        assert_eq!(percentage(2, 3), 66.67);
        assert_eq!(percentage(1, 32), 3.13);
        assert_eq!(percentage(5, 5), 100.0);
    }

    fn summary(payloads: &[&str]) -> AppSummary {
        let cfg = InstrumentationConfig::with_granularities([Granularity::Methods]);
        AppSummary {
            app: "t".into(),
            identifier: "ANDROLOG".into(),
            kinds: BTreeMap::from([(
                ProbeKind::Method,
                payloads.iter().map(|s| s.to_string()).collect(),
            )]),
            skipped: BTreeMap::new(),
            config: cfg,
        }
    }

    #[test]
    fn covered_uncovered_unknown() {
        let s = summary(&["METHOD=La;->f()V", "METHOD=La;->g()V"]);
        let mut scan = LogScan::new();
        scan.feed(
            "ANDROLOG: METHOD=La;->f()V\nANDROLOG: METHOD=Lb;->h()V\nANDROLOG: CLASS=La;\nANDROLOG: junk\n",
            "ANDROLOG",
        );
        let r = compute_coverage(&s, &scan.into_event_set());
        let m = &r.kinds[&ProbeKind::Method];
        assert_eq!((m.covered, m.total, m.percentage), (1, 2, 50.0));
        assert_eq!(m.uncovered, vec!["METHOD=La;->g()V"]);
        assert_eq!(m.unknown, vec!["METHOD=Lb;->h()V"]);
        assert_eq!(r.unmatched, vec!["CLASS=La;", "junk"]);
    }

    #[test]
    fn zero_total_is_zero_percent() {
        let r = compute_coverage(&summary(&[]), &EventSet::default());
        assert_eq!(r.kinds[&ProbeKind::Method].percentage, 0.0);
    }
}
