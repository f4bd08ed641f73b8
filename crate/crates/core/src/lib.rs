//! Coverage measurement for disassembled Android apps.
//!
//! The pipeline is: parse a tree of smali files into an [`App`], insert
//! logging probes with [`instrument_app`], run the rebuilt app, then turn the
//! captured log into a [`CoverageReport`] with [`compute_coverage`] against
//! the [`AppSummary`] of what was instrumented.

pub mod app;
pub mod cli;
pub mod coverage;
pub mod error;
pub mod instrument;
pub mod ir;
pub mod literal;
pub mod parser;
pub mod simulate;

pub use app::{load_app, App, ClassEntry};
pub use coverage::{
    compute_coverage, dedup_events, parse_log_line, summarize_app, AppSummary, CoverageReport,
    EventSet, KindCoverage, LogScan, ProbeEvent,
};
pub use error::{Error, Result};
pub use instrument::{instrument_app, Granularity, InstrumentationConfig, InstrumentationReport};
pub use ir::{BodyItem, BodyKind, ProbeKind, SmaliClass, SmaliMethod};
pub use parser::{parse_class, print_class, ParseDiagnostic};
pub use simulate::{oracle_coverage, simulate_trace, ExecutionPath};
