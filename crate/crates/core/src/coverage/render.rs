use std::fmt::Write as _;

use crate::error::Result;

use super::CoverageReport;

/// Aligned table, one row per measured kind, optionally followed by the
/// uncovered units of each kind.
pub fn render_text(report: &CoverageReport, show_uncovered: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Coverage for {} (identifier {})", report.app, report.identifier);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<18} {:>10} {:>10} {:>11}", "KIND", "COVERED", "TOTAL", "PERCENTAGE");
    for (kind, k) in &report.kinds {
        let _ = writeln!(
            out,
            "{:<18} {:>10} {:>10} {:>11.2}",
            kind.key(),
            k.covered,
            k.total,
            k.percentage
        );
    }
    if !report.skipped.is_empty() {
        let _ = writeln!(out);
        let parts: Vec<String> = report
            .skipped
            .iter()
            .map(|(kind, n)| format!("{kind} {n}"))
            .collect();
        let _ = writeln!(out, "Not instrumentable: {}", parts.join(", "));
    }
    let unknown: usize = report.kinds.values().map(|k| k.unknown.len()).sum();
    if unknown > 0 || !report.unmatched.is_empty() {
        let _ = writeln!(
            out,
            "Unrecognized records: {} unknown, {} unmatched",
            unknown,
            report.unmatched.len()
        );
    }
    if show_uncovered {
        for (kind, k) in report.kinds.iter().filter(|(_, k)| !k.uncovered.is_empty()) {
            let _ = writeln!(out);
            let _ = writeln!(out, "Uncovered {kind}:");
            for p in &k.uncovered {
                let _ = writeln!(out, "  {p}");
            }
        }
    }
    out
}

/// Stable JSON encoding; byte-identical for equal reports.
pub fn render_machine(report: &CoverageReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn from_machine(text: &str) -> Result<CoverageReport> {
    Ok(serde_json::from_str(text)?)
}
