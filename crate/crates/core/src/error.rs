use std::fmt;
use std::path::PathBuf;

use crate::parser::ParseDiagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to parse smali:\n{}", DiagnosticList(.0))]
    Parse(Vec<ParseDiagnostic>),

    #[error("class {descriptor} is declared twice: {} and {}", .first.display(), .second.display())]
    DuplicateClass {
        descriptor: String,
        first: PathBuf,
        second: PathBuf,
    },

    #[error("app is already instrumented: found log checker class {0}")]
    AlreadyInstrumented(String),

    #[error("app is not instrumented: no log checker class found")]
    NotInstrumented,

    #[error("cyclic superclass chain through {0}")]
    CyclicHierarchy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("probe position {position} out of range for {method} (body has {len} items)")]
    ProbePosition {
        method: String,
        position: usize,
        len: usize,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("input already violates dalvik rules:\n{}", .0.join("\n"))]
    InvalidInput(Vec<String>),

    #[error("instrumented code violates dalvik rules:\n{}", .0.join("\n"))]
    Verification(Vec<String>),

    #[error("invalid execution path at step {step}: {reason}")]
    InvalidPath { step: usize, reason: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("hook `{name}` failed ({status}): {stderr}")]
    Hook {
        name: String,
        status: String,
        stderr: String,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

struct DiagnosticList<'a>(&'a [ParseDiagnostic]);

impl fmt::Display for DiagnosticList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {d}")?;
        }
        Ok(())
    }
}
