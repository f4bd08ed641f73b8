//! Probe insertion.
//!
//! Four phases run over every class, each enabled independently:
//! constructor probes (`CLASS=`), method entry probes (`METHOD=`),
//! per-instruction probes (`STATEMENT=`) and component lifecycle probes.
//! Every probe is a `const-string` into a reserved register followed by a
//! static call into the injected log checker.

mod component;
mod logchecker;
mod probe;
mod registers;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::app::{path_for_descriptor, App, ClassEntry};
use crate::error::{Error, Result};
use crate::ir::{statement_payload, BodyKind, Probe, ProbeAnchor, ProbeKind, SmaliClass, SmaliMethod};

pub use component::{detect_component_kind, BaseList, ComponentKind};
pub use logchecker::{
    choose_descriptor, find_logchecker, is_logchecker, synthesize_logchecker, LogCheckerModel,
    DEFAULT_LOGCHECKER,
};
pub use probe::{insert_probe, log_entry, probe_at, probe_instructions, probe_mask, probes_in, FoundProbe};
pub use registers::{
    allocate_probe_registers, operands, unshift_registers, width_limit, width_violations, Ineligible,
    Reg,
};
pub use verify::{check_app, check_method};

pub const DEFAULT_IDENTIFIER: &str = "ANDROLOG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Classes,
    Methods,
    Statements,
    Components,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Classes,
        Granularity::Methods,
        Granularity::Statements,
        Granularity::Components,
    ];

    pub fn kinds(self) -> &'static [ProbeKind] {
        match self {
            Granularity::Classes => &[ProbeKind::Class],
            Granularity::Methods => &[ProbeKind::Method],
            Granularity::Statements => &[ProbeKind::Statement],
            Granularity::Components => &ProbeKind::COMPONENTS,
        }
    }
}

pub const DEFAULT_LIBRARY_PREFIXES: &[&str] = &[
    "Landroid/support/",
    "Landroidx/",
    "Lkotlin/",
    "Lkotlinx/",
    "Lcom/google/android/",
    "Lcom/google/firebase/",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationConfig {
    pub identifier: String,
    pub granularities: BTreeSet<Granularity>,
    pub library_prefixes: Vec<String>,
    pub exclude_libraries: bool,
    #[serde(default)]
    pub component_bases: BaseList,
}

impl Default for InstrumentationConfig {
    fn default() -> Self {
        InstrumentationConfig {
            identifier: DEFAULT_IDENTIFIER.to_string(),
            granularities: Granularity::ALL.into_iter().collect(),
            library_prefixes: DEFAULT_LIBRARY_PREFIXES.iter().map(|s| s.to_string()).collect(),
            exclude_libraries: false,
            component_bases: BaseList::default(),
        }
    }
}

impl InstrumentationConfig {
    pub fn with_granularities(granularities: impl IntoIterator<Item = Granularity>) -> Self {
        InstrumentationConfig {
            granularities: granularities.into_iter().collect(),
            ..InstrumentationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.identifier.is_empty() {
            return Err(Error::InvalidConfig("log identifier is empty".into()));
        }
        if self
            .identifier
            .chars()
            .any(|c| c.is_whitespace() || c == ':' || c == '(' || c == ')')
        {
            return Err(Error::InvalidConfig(format!(
                "log identifier `{}` contains whitespace, `:` or parentheses",
                self.identifier
            )));
        }
        if self.granularities.is_empty() {
            return Err(Error::InvalidConfig("no granularity selected".into()));
        }
        Ok(())
    }

    pub fn enabled(&self, g: Granularity) -> bool {
        self.granularities.contains(&g)
    }

    /// Probe kinds measured under this configuration.
    pub fn kinds(&self) -> Vec<ProbeKind> {
        let mut kinds: Vec<ProbeKind> = self
            .granularities
            .iter()
            .flat_map(|g| g.kinds().iter().copied())
            .collect();
        kinds.sort();
        kinds
    }

    pub fn is_library(&self, descriptor: &str) -> bool {
        self.exclude_libraries
            && self
                .library_prefixes
                .iter()
                .any(|p| descriptor.starts_with(p.as_str()))
    }
}

/// Normalize a library prefix given as `androidx.core` or `Landroidx/core/`.
pub fn normalize_prefix(prefix: &str) -> String {
    let p = prefix.trim();
    if p.starts_with('L') && (p.contains('/') || p.ends_with(';')) {
        return p.to_string();
    }
    format!("L{}", p.replace('.', "/"))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Skip {
    pub class: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<ProbeKind>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseLog {
    pub inserted: Vec<Probe>,
    pub skipped: Vec<Skip>,
}

impl PhaseLog {
    fn merge(&mut self, other: PhaseLog) {
        self.inserted.extend(other.inserted);
        self.skipped.extend(other.skipped);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationReport {
    pub identifier: String,
    pub logchecker_descriptor: String,
    pub probes_inserted: BTreeMap<ProbeKind, usize>,
    pub classes_skipped: Vec<Skip>,
}

/// Terminators and branches get their statement probe before them.
pub fn probe_goes_before(mnemonic: &str) -> bool {
    mnemonic.starts_with("return")
        || mnemonic.starts_with("goto")
        || mnemonic == "throw"
        || mnemonic.starts_with("if-")
        || mnemonic == "packed-switch"
        || mnemonic == "sparse-switch"
}

/// Method-level eligibility, as decided by register allocation.
pub fn probe_eligibility(method: &SmaliMethod) -> std::result::Result<(), Ineligible> {
    allocate_probe_registers(method).map(|_| ())
}

/// Probe-inserting pass bound to one app and configuration.
pub struct Instrumenter<'a> {
    pub cfg: &'a InstrumentationConfig,
    pub logchecker: String,
}

impl<'a> Instrumenter<'a> {
    pub fn new(cfg: &'a InstrumentationConfig, logchecker: impl Into<String>) -> Self {
        Instrumenter {
            cfg,
            logchecker: logchecker.into(),
        }
    }

    fn ensure_register(method: &mut SmaliMethod) -> std::result::Result<(), Ineligible> {
        if method.probe_register.is_none() {
            *method = allocate_probe_registers(method)?;
        }
        Ok(())
    }

    /// First executable position, after any entry probes already placed.
    fn entry_position(&self, method: &SmaliMethod) -> usize {
        let mut pos = method
            .body
            .iter()
            .position(|i| matches!(i.kind, BodyKind::Instruction | BodyKind::Label))
            .unwrap_or(method.body.len());
        while let Some(p) = probe_at(&method.body, pos, &self.logchecker) {
            if p.kind == Some(ProbeKind::Statement) {
                break;
            }
            pos += 2;
        }
        pos
    }

    fn insert_entry(
        &self,
        class: &str,
        method: &mut SmaliMethod,
        kind: ProbeKind,
        body: &str,
        log: &mut PhaseLog,
    ) -> bool {
        let method_id = format!("{class}->{}{}", method.name, method.descriptor);
        if let Err(why) = Self::ensure_register(method) {
            log.skipped.push(Skip {
                class: class.to_string(),
                method: Some(method_id),
                kind: Some(kind),
                reason: why.to_string(),
            });
            return false;
        }
        let position = self.entry_position(method);
        let probe = Probe::new(
            kind,
            body,
            ProbeAnchor {
                class: class.to_string(),
                method_id,
                position,
            },
        );
        insert_probe(method, position, &probe, &self.logchecker)
            .expect("entry position is within the body");
        log.inserted.push(probe);
        true
    }

    /// Constructor probes: `CLASS=<descriptor>` at the start of every
    /// `<init>` and `<clinit>` body.
    pub fn instrument_class_probes(&self, mut class: SmaliClass) -> (SmaliClass, PhaseLog) {
        let mut log = PhaseLog::default();
        let desc = class.descriptor.clone();
        let mut any = false;
        for method in class.methods.iter_mut().filter(|m| m.is_constructor() && m.has_code()) {
            any |= self.insert_entry(&desc, method, ProbeKind::Class, &desc, &mut log);
        }
        if !any {
            log.skipped.push(Skip {
                class: desc,
                method: None,
                kind: Some(ProbeKind::Class),
                reason: "no instrumentable constructor".into(),
            });
        }
        (class, log)
    }

    /// Entry probes: `METHOD=<method id>` at the start of every method body.
    pub fn instrument_method_probes(&self, mut class: SmaliClass) -> (SmaliClass, PhaseLog) {
        let mut log = PhaseLog::default();
        let desc = class.descriptor.clone();
        for method in &mut class.methods {
            if !method.has_code() {
                log.skipped.push(Skip {
                    class: desc.clone(),
                    method: Some(format!("{desc}->{}{}", method.name, method.descriptor)),
                    kind: Some(ProbeKind::Method),
                    reason: Ineligible::NoCode.to_string(),
                });
                continue;
            }
            let id = format!("{desc}->{}{}", method.name, method.descriptor);
            self.insert_entry(&desc, method, ProbeKind::Method, &id, &mut log);
        }
        (class, log)
    }

    /// One `STATEMENT=` probe per original instruction.
    pub fn instrument_statement_probes(&self, mut class: SmaliClass) -> (SmaliClass, PhaseLog) {
        let mut log = PhaseLog::default();
        let desc = class.descriptor.clone();
        for method in class.methods.iter_mut().filter(|m| m.has_code()) {
            let method_id = format!("{desc}->{}{}", method.name, method.descriptor);
            if let Err(why) = Self::ensure_register(method) {
                log.skipped.push(Skip {
                    class: desc.clone(),
                    method: Some(method_id),
                    kind: Some(ProbeKind::Statement),
                    reason: why.to_string(),
                });
                continue;
            }
            let originals: Vec<(usize, usize)> = method
                .body
                .iter()
                .enumerate()
                .filter_map(|(pos, item)| item.index.map(|i| (pos, i)))
                .collect();
            let mut inserted = Vec::with_capacity(originals.len());
            for &(pos, index) in originals.iter().rev() {
                let item = &method.body[pos];
                let text = match method.probe_register {
                    Some(r) => unshift_registers(item, r),
                    None => item.text.clone(),
                };
                let position = if probe_goes_before(item.mnemonic()) {
                    pos
                } else {
                    self.after_position(method, pos)
                };
                let probe = Probe {
                    kind: ProbeKind::Statement,
                    payload: statement_payload(&method_id, &text, index),
                    anchor: ProbeAnchor {
                        class: desc.clone(),
                        method_id: method_id.clone(),
                        position,
                    },
                };
                insert_probe(method, position, &probe, &self.logchecker)
                    .expect("statement position is within the body");
                inserted.push(probe);
            }
            inserted.reverse();
            log.inserted.extend(inserted);
        }
        (class, log)
    }

    /// Position right after the instruction at `pos`, extended past a
    /// following `move-result*` so the pair stays adjacent.
    fn after_position(&self, method: &SmaliMethod, pos: usize) -> usize {
        let next = (pos + 1..method.body.len()).find(|&i| {
            matches!(method.body[i].kind, BodyKind::Instruction | BodyKind::Label)
        });
        match next {
            Some(n)
                if method.body[n].kind == BodyKind::Instruction
                    && method.body[n].mnemonic().starts_with("move-result")
                    && method.body[n].index.is_some() =>
            {
                n + 1
            }
            _ => pos + 1,
        }
    }

    /// Lifecycle probes: `<KINDKEY>=<descriptor>` at the start of every
    /// present lifecycle method.
    pub fn instrument_component_probes(
        &self,
        mut class: SmaliClass,
        kind: ComponentKind,
    ) -> (SmaliClass, PhaseLog) {
        let mut log = PhaseLog::default();
        let desc = class.descriptor.clone();
        let probe_kind = kind.probe_kind();
        let mut any = false;
        for method in class
            .methods
            .iter_mut()
            .filter(|m| kind.is_lifecycle(&m.name) && m.has_code())
        {
            any |= self.insert_entry(&desc, method, probe_kind, &desc, &mut log);
        }
        if !any {
            log.skipped.push(Skip {
                class: desc,
                method: None,
                kind: Some(probe_kind),
                reason: "no instrumentable lifecycle method".into(),
            });
        }
        (class, log)
    }

    /// All enabled phases, in order, over one class.
    pub fn instrument_class(
        &self,
        class: SmaliClass,
        component: Option<ComponentKind>,
    ) -> (SmaliClass, PhaseLog) {
        let mut log = PhaseLog::default();
        let mut class = class;
        if self.cfg.enabled(Granularity::Classes) {
            let (c, l) = self.instrument_class_probes(class);
            class = c;
            log.merge(l);
        }
        if self.cfg.enabled(Granularity::Methods) {
            let (c, l) = self.instrument_method_probes(class);
            class = c;
            log.merge(l);
        }
        if self.cfg.enabled(Granularity::Statements) {
            let (c, l) = self.instrument_statement_probes(class);
            class = c;
            log.merge(l);
        }
        if self.cfg.enabled(Granularity::Components) {
            if let Some(kind) = component {
                let (c, l) = self.instrument_component_probes(class, kind);
                class = c;
                log.merge(l);
            }
        }
        (class, log)
    }
}

/// Where the log checker file goes: next to the other classes under an
/// apktool-style `smali/` directory when there is one.
fn logchecker_path(app: &App, descriptor: &str) -> PathBuf {
    let apktool = app
        .classes
        .values()
        .any(|e| e.path.components().next().is_some_and(|c| c.as_os_str() == "smali"));
    let rel = path_for_descriptor(descriptor);
    if apktool {
        PathBuf::from("smali").join(rel)
    } else {
        rel
    }
}

/// Component kind of every class, failing on a cyclic hierarchy.
pub fn component_kinds(
    app: &App,
    bases: &BaseList,
) -> Result<BTreeMap<String, ComponentKind>> {
    let mut out = BTreeMap::new();
    for class in app.iter() {
        if let Some(kind) = detect_component_kind(class, app, bases)? {
            out.insert(class.descriptor.clone(), kind);
        }
    }
    Ok(out)
}

/// Instrument a whole app and inject the log checker.
pub fn instrument_app(app: &App, cfg: &InstrumentationConfig) -> Result<(App, InstrumentationReport)> {
    cfg.validate()?;
    if let Some(existing) = find_logchecker(app) {
        return Err(Error::AlreadyInstrumented(existing));
    }
    let logchecker = choose_descriptor(app);
    let pre_existing = check_app(app, &logchecker);
    if !pre_existing.is_empty() {
        return Err(Error::InvalidInput(pre_existing));
    }
    let components = if cfg.enabled(Granularity::Components) {
        component_kinds(app, &cfg.component_bases)?
    } else {
        BTreeMap::new()
    };
    let instrumenter = Instrumenter::new(cfg, logchecker.clone());

    let results: Vec<(ClassEntry, PhaseLog)> = app
        .classes
        .values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|entry| {
            if cfg.is_library(&entry.class.descriptor) {
                let log = PhaseLog {
                    inserted: Vec::new(),
                    skipped: vec![Skip {
                        class: entry.class.descriptor.clone(),
                        method: None,
                        kind: None,
                        reason: "library class excluded".into(),
                    }],
                };
                return (entry.clone(), log);
            }
            let kind = components.get(&entry.class.descriptor).copied();
            let (class, log) = instrumenter.instrument_class(entry.class.clone(), kind);
            (
                ClassEntry {
                    path: entry.path.clone(),
                    class,
                },
                log,
            )
        })
        .collect();

    let mut out = App::new(app.name.clone());
    out.warnings = app.warnings.clone();
    let mut probes_inserted: BTreeMap<ProbeKind, usize> =
        cfg.kinds().into_iter().map(|k| (k, 0)).collect();
    let mut skipped = Vec::new();
    for (entry, log) in results {
        for probe in &log.inserted {
            *probes_inserted.entry(probe.kind).or_default() += 1;
        }
        skipped.extend(log.skipped);
        out.insert(entry.path, entry.class)?;
    }
    out.insert(
        logchecker_path(app, &logchecker),
        synthesize_logchecker(&cfg.identifier, &logchecker),
    )?;

    let violations = check_app(&out, &logchecker);
    if !violations.is_empty() {
        return Err(Error::Verification(violations));
    }
    skipped.sort();
    skipped.dedup();
    Ok((
        out,
        InstrumentationReport {
            identifier: cfg.identifier.clone(),
            logchecker_descriptor: logchecker,
            probes_inserted,
            classes_skipped: skipped,
        },
    ))
}
