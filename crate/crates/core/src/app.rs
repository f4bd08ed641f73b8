use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::ir::SmaliClass;
use crate::parser::{parse_class, print_class, ParseDiagnostic};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    /// Location relative to the tree root.
    pub path: PathBuf,
    pub class: SmaliClass,
}

/// A disassembled app: every class of the tree, keyed by descriptor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct App {
    pub name: String,
    pub classes: BTreeMap<String, ClassEntry>,
    pub warnings: Vec<ParseDiagnostic>,
}

impl App {
    pub fn new(name: impl Into<String>) -> Self {
        App {
            name: name.into(),
            ..App::default()
        }
    }

    /// Add a class, rejecting a descriptor that is already present.
    pub fn insert(&mut self, path: impl Into<PathBuf>, class: SmaliClass) -> Result<()> {
        let path = path.into();
        if let Some(existing) = self.classes.get(&class.descriptor) {
            return Err(Error::DuplicateClass {
                descriptor: class.descriptor.clone(),
                first: existing.path.clone(),
                second: path,
            });
        }
        self.classes
            .insert(class.descriptor.clone(), ClassEntry { path, class });
        Ok(())
    }

    pub fn class(&self, descriptor: &str) -> Option<&SmaliClass> {
        self.classes.get(descriptor).map(|e| &e.class)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SmaliClass> {
        self.classes.values().map(|e| &e.class)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Write every class as `<root>/<path>`.
    pub fn write_to(&self, root: &Path) -> Result<()> {
        for entry in self.classes.values() {
            let target = root.join(&entry.path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&target, print_class(&entry.class)).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    }
}

/// Conventional file location for a class under a smali root.
pub fn path_for_descriptor(descriptor: &str) -> PathBuf {
    let inner = descriptor
        .strip_prefix('L')
        .and_then(|d| d.strip_suffix(';'))
        .unwrap_or(descriptor);
    PathBuf::from(format!("{inner}.smali"))
}

/// Parse every `*.smali` file under `root`.
pub fn load_app(root: &Path) -> Result<App> {
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "smali") {
            files.push(entry.into_path());
        }
    }

    let parsed: Vec<_> = files
        .par_iter()
        .map(|path| {
            let relative = path.strip_prefix(root).unwrap_or(path).to_path_buf();
            let with_file = |mut diags: Vec<ParseDiagnostic>| {
                for d in &mut diags {
                    d.file = relative.clone();
                }
                diags
            };
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(match parse_class(&text) {
                Ok(p) => Ok((relative.clone(), p.class, with_file(p.warnings))),
                Err(diags) => Err(with_file(diags)),
            })
        })
        .collect::<Result<_>>()?;

    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut app = App::new(name);
    let mut errors = Vec::new();
    for result in parsed {
        match result {
            Ok((path, class, warnings)) => {
                app.warnings.extend(warnings);
                app.insert(path, class)?;
            }
            Err(diags) => errors.extend(diags),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Parse(errors));
    }
    Ok(app)
}
