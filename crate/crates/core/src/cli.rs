//! Command-line front end: `instrument` and `coverage`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::app::{load_app, App};
use crate::coverage::{compute_coverage, render_machine, render_text, summarize_app, AppSummary, LogScan};
use crate::error::{Error, Result};
use crate::instrument::{
    instrument_app, normalize_prefix, Granularity, InstrumentationConfig, DEFAULT_IDENTIFIER,
};

/// Environment variable naming the hooks file when `--hooks` is absent.
pub const HOOKS_ENV: &str = "SMALICOV_HOOKS";

pub const REPORT_FILE: &str = "instrumentation-report.json";
pub const SUMMARY_FILE: &str = "app-summary.json";

#[derive(Debug, Parser)]
#[command(name = "smalicov", version, about = "Probe-based coverage for disassembled Android apps")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Insert logging probes into a smali tree or an APK.
    Instrument(InstrumentArgs),
    /// Compute coverage from logs of an instrumented run.
    Coverage(CoverageArgs),
}

#[derive(Debug, Args)]
struct Selection {
    /// Measure classes (constructor probes).
    #[arg(long)]
    classes: bool,
    /// Measure methods (entry probes).
    #[arg(long)]
    methods: bool,
    /// Measure statements (one probe per instruction).
    #[arg(long)]
    statements: bool,
    /// Measure Android components (lifecycle probes).
    #[arg(long)]
    components: bool,
    /// Enable every granularity.
    #[arg(long)]
    all: bool,
    /// File of library package prefixes, one per line.
    #[arg(long, value_name = "FILE")]
    libraries: Option<PathBuf>,
    /// Leave classes under library prefixes untouched.
    #[arg(long)]
    exclude_libraries: bool,
}

impl Selection {
    fn granularities(&self) -> Vec<Granularity> {
        if self.all {
            return Granularity::ALL.to_vec();
        }
        [
            (self.classes, Granularity::Classes),
            (self.methods, Granularity::Methods),
            (self.statements, Granularity::Statements),
            (self.components, Granularity::Components),
        ]
        .into_iter()
        .filter_map(|(on, g)| on.then_some(g))
        .collect()
    }

    fn config(&self, identifier: &str) -> Result<InstrumentationConfig> {
        let mut cfg = InstrumentationConfig::with_granularities(self.granularities());
        cfg.identifier = identifier.to_string();
        cfg.exclude_libraries = self.exclude_libraries;
        if let Some(path) = &self.libraries {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.library_prefixes = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(normalize_prefix)
                .collect();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct InstrumentArgs {
    /// Smali directory or APK.
    input: PathBuf,
    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    output: PathBuf,
    /// Tag of the emitted log records.
    #[arg(long, value_name = "TAG", default_value = DEFAULT_IDENTIFIER)]
    log_identifier: String,
    #[command(flatten)]
    selection: Selection,
    /// Hooks file with `disassemble`, `assemble`, `align`, `sign` command templates.
    #[arg(long, value_name = "FILE", env = HOOKS_ENV)]
    hooks: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Machine,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    /// Original app (smali directory or APK); not needed with `--summary`.
    #[arg(conflicts_with = "summary")]
    app: Option<PathBuf>,
    /// Summary file written by `instrument`.
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
    /// Log files captured while exercising the instrumented app.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    /// Tag of the log records; defaults to the one the app was instrumented with.
    #[arg(long, value_name = "TAG")]
    log_identifier: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// List uncovered units in the text report.
    #[arg(long)]
    uncovered: bool,
    #[command(flatten)]
    selection: Selection,
    #[arg(long, value_name = "FILE", env = HOOKS_ENV)]
    hooks: Option<PathBuf>,
}

/// External commands for the steps around instrumentation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolHooks {
    pub disassemble: Option<String>,
    pub assemble: Option<String>,
    pub align: Option<String>,
    pub sign: Option<String>,
}

impl ToolHooks {
    /// `key = template` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut hooks = ToolHooks::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("hooks line {}: expected `key = command`", n + 1))
            })?;
            let slot = match key.trim() {
                "disassemble" => &mut hooks.disassemble,
                "assemble" => &mut hooks.assemble,
                "align" => &mut hooks.align,
                "sign" => &mut hooks.sign,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "hooks line {}: unknown hook `{other}`",
                        n + 1
                    )))
                }
            };
            *slot = Some(value.trim().to_string());
        }
        Ok(hooks)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ToolHooks::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text)
            }
        }
    }
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

/// Run one hook template through `sh -c` with `{in}` and `{out}` filled in.
pub fn run_hook(name: &str, template: &str, input: &Path, output: &Path) -> Result<()> {
    let cmd = template
        .replace("{in}", &shell_quote(input))
        .replace("{out}", &shell_quote(output));
    log::info!("running {name} hook: {cmd}");
    let result = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| Error::io("sh", e))?;
    if !result.status.success() {
        return Err(Error::Hook {
            name: name.to_string(),
            status: result.status.to_string(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    Ok(())
}

fn require<'a>(hook: &'a Option<String>, name: &str) -> Result<&'a str> {
    hook.as_deref().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "APK input needs `disassemble` and `assemble` hooks; `{name}` is missing. \
             Provide a hooks file via --hooks or {HOOKS_ENV}, e.g.\n  \
             disassemble = apktool d -f -o {{out}} {{in}}\n  \
             assemble = apktool b -o {{out}} {{in}}"
        ))
    })
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    for entry in walkdir::WalkDir::new(from).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(from).to_path_buf();
            Error::io(path, e.into())
        })?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        } else {
            std::fs::copy(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
    }
    Ok(())
}

fn smali_tree(input: &Path, hooks: &ToolHooks, scratch: &Path) -> Result<PathBuf> {
    if input.is_dir() {
        return Ok(input.to_path_buf());
    }
    if !input.is_file() {
        return Err(Error::io(
            input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
        ));
    }
    let disassemble = require(&hooks.disassemble, "disassemble")?;
    run_hook("disassemble", disassemble, input, scratch)?;
    Ok(scratch.to_path_buf())
}

fn instrument(args: &InstrumentArgs) -> Result<()> {
    let cfg = args.selection.config(&args.log_identifier)?;
    cfg.validate()?;
    let hooks = ToolHooks::load(args.hooks.as_deref())?;
    let is_apk = !args.input.is_dir();
    if is_apk {
        require(&hooks.disassemble, "disassemble")?;
        require(&hooks.assemble, "assemble")?;
    }
    let out = &args.output;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "app".into());
    let scratch = out.join(format!("{stem}.disassembled"));
    let tree = smali_tree(&args.input, &hooks, &scratch)?;
    let app = load_app(&tree)?;
    for w in &app.warnings {
        log::warn!("{w}");
    }
    let name = if is_apk { stem.clone() } else { app.name.clone() };

    let target = out.join(&name);
    let input_abs = std::fs::canonicalize(&tree).map_err(|e| Error::io(&tree, e))?;
    if target.exists() {
        let target_abs = std::fs::canonicalize(&target).map_err(|e| Error::io(&target, e))?;
        if input_abs.starts_with(&target_abs) {
            return Err(Error::InvalidConfig(format!(
                "output tree {} would overwrite the input",
                target.display()
            )));
        }
    }

    let (instrumented, report) = instrument_app(&app, &cfg)?;
    let summary = summarize_app(&app, &cfg)?;

    if target.exists() {
        std::fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
    }
    copy_tree(&tree, &target)?;
    instrumented.write_to(&target)?;
    write_file(&out.join(REPORT_FILE), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_file(&out.join(SUMMARY_FILE), &summary.to_json()?)?;

    if is_apk {
        let assemble = require(&hooks.assemble, "assemble")?;
        let mut artifact = out.join(format!("{stem}.unsigned.apk"));
        run_hook("assemble", assemble, &target, &artifact)?;
        for (step, hook) in [("align", &hooks.align), ("sign", &hooks.sign)] {
            if let Some(t) = hook {
                let next = out.join(format!("{stem}.{step}ed.apk"));
                run_hook(step, t, &artifact, &next)?;
                artifact = next;
            }
        }
        let final_apk = out.join(format!("{stem}-instrumented.apk"));
        std::fs::rename(&artifact, &final_apk).map_err(|e| Error::io(&final_apk, e))?;
        std::fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    }
    log::info!(
        "instrumented {} classes into {}",
        app.len(),
        target.display()
    );
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn coverage_summary(args: &CoverageArgs) -> Result<AppSummary> {
    if let Some(path) = &args.summary {
        return AppSummary::load(path);
    }
    let Some(input) = &args.app else {
        return Err(Error::InvalidConfig(
            "give either --summary or the original app".into(),
        ));
    };
    let identifier = args.log_identifier.as_deref().unwrap_or(DEFAULT_IDENTIFIER);
    let cfg = args.selection.config(identifier)?;
    cfg.validate()?;
    let hooks = ToolHooks::load(args.hooks.as_deref())?;
    if input.is_dir() {
        return summarize_app(&load_app(input)?, &cfg);
    }
    let scratch = std::env::temp_dir().join(format!("smalicov-{}", std::process::id()));
    let result = smali_tree(input, &hooks, &scratch)
        .and_then(|tree| load_app(&tree))
        .and_then(|app: App| summarize_app(&app, &cfg));
    let _ = std::fs::remove_dir_all(&scratch);
    result
}

fn coverage(args: &CoverageArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let mut summary = coverage_summary(args)?;
    if let Some(id) = &args.log_identifier {
        summary.identifier = id.clone();
    }
    let mut scan = LogScan::new();
    for path in &args.logs {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        scan.feed(&String::from_utf8_lossy(&bytes), &summary.identifier);
    }
    if scan.hits == 0 {
        let _ = writeln!(
            stderr,
            "warning: no log line carries the identifier `{}`",
            summary.identifier
        );
    }
    let report = compute_coverage(&summary, &scan.into_event_set());
    let text = match args.format {
        Format::Text => render_text(&report, args.uncovered),
        Format::Machine => render_machine(&report)?,
    };
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Run the CLI with explicit output streams; returns the exit status.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let needs_selection = match &cli.command {
        Cmd::Instrument(a) => Some(&a.selection),
        Cmd::Coverage(a) if a.summary.is_none() => Some(&a.selection),
        Cmd::Coverage(_) => None,
    };
    if needs_selection.is_some_and(|s| s.granularities().is_empty()) {
        let _ = writeln!(
            stderr,
            "error: select at least one of --classes, --methods, --statements, --components or --all"
        );
        return 2;
    }
    let result = match &cli.command {
        Cmd::Instrument(a) => instrument(a),
        Cmd::Coverage(a) => coverage(a, stdout, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
