//! In-memory model of one disassembled class.
//!
//! Only the structure needed for probe insertion is modeled: class header,
//! method boundaries, register frame and instruction granularity. Everything
//! else (annotations, fields, `.catch`, switch payloads, debug directives) is
//! carried as verbatim text.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::literal::{escape_field, unescape_field};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmaliClass {
    pub descriptor: String,
    pub access_flags: Vec<String>,
    pub super_descriptor: Option<String>,
    pub interfaces: Vec<String>,
    pub source_file: Option<String>,
    pub annotations_raw: Vec<String>,
    pub fields_raw: Vec<String>,
    pub methods: Vec<SmaliMethod>,
}

impl SmaliClass {
    pub fn new(descriptor: impl Into<String>, super_descriptor: impl Into<String>) -> Self {
        SmaliClass {
            descriptor: descriptor.into(),
            access_flags: vec!["public".into()],
            super_descriptor: Some(super_descriptor.into()),
            interfaces: Vec::new(),
            source_file: None,
            annotations_raw: Vec::new(),
            fields_raw: Vec::new(),
            methods: Vec::new(),
        }
    }

    pub fn is_interface(&self) -> bool {
        self.access_flags.iter().any(|f| f == "interface")
    }

    pub fn method(&self, name: &str, descriptor: &str) -> Option<&SmaliMethod> {
        self.methods
            .iter()
            .find(|m| m.name == name && m.descriptor == descriptor)
    }

    pub fn method_id(&self, method: &SmaliMethod) -> String {
        canonical_method_id(self, method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterDecl {
    /// `.registers N`: total frame size including parameters.
    Registers(u32),
    /// `.locals N`: non-parameter registers only.
    Locals(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmaliMethod {
    pub name: String,
    pub descriptor: String,
    pub access_flags: Vec<String>,
    pub registers: Option<RegisterDecl>,
    pub body: Vec<BodyItem>,
    pub is_abstract_or_native: bool,
    /// Register reserved for probe constants, once one has been allocated.
    pub probe_register: Option<u32>,
}

impl SmaliMethod {
    pub fn is_static(&self) -> bool {
        self.access_flags.iter().any(|f| f == "static")
    }

    pub fn is_constructor(&self) -> bool {
        self.name == "<init>" || self.name == "<clinit>"
    }

    /// Registers taken by the incoming arguments, including `this`.
    pub fn param_registers(&self) -> u32 {
        param_register_count(&self.descriptor, self.is_static())
    }

    pub fn locals(&self) -> Option<u32> {
        match self.registers? {
            RegisterDecl::Locals(n) => Some(n),
            RegisterDecl::Registers(n) => Some(n.saturating_sub(self.param_registers())),
        }
    }

    pub fn total_registers(&self) -> Option<u32> {
        self.locals().map(|l| l + self.param_registers())
    }

    pub fn has_code(&self) -> bool {
        !self.is_abstract_or_native && self.registers.is_some()
    }

    /// Instructions of the original body with their statement index.
    pub fn statements(&self) -> impl Iterator<Item = (usize, &BodyItem)> {
        self.body
            .iter()
            .filter_map(|item| item.index.map(|i| (i, item)))
    }

    pub fn statement_count(&self) -> usize {
        self.statements().count()
    }

    /// Assign consecutive statement indices to every instruction.
    pub fn reindex(&mut self) {
        let mut next = 0;
        for item in &mut self.body {
            if item.kind == BodyKind::Instruction {
                item.index = Some(next);
                next += 1;
            } else {
                item.index = None;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyKind {
    Instruction,
    Label,
    Directive,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyItem {
    pub kind: BodyKind,
    pub text: String,
    /// Statement index; only original instructions carry one.
    pub index: Option<usize>,
}

impl BodyItem {
    pub fn instruction(text: impl Into<String>) -> Self {
        BodyItem {
            kind: BodyKind::Instruction,
            text: text.into(),
            index: None,
        }
    }

    pub fn label(name: impl Into<String>) -> Self {
        BodyItem {
            kind: BodyKind::Label,
            text: name.into(),
            index: None,
        }
    }

    pub fn directive(text: impl Into<String>) -> Self {
        BodyItem {
            kind: BodyKind::Directive,
            text: text.into(),
            index: None,
        }
    }

    pub fn is_instruction(&self) -> bool {
        self.kind == BodyKind::Instruction
    }

    pub fn mnemonic(&self) -> &str {
        if self.kind != BodyKind::Instruction {
            return "";
        }
        self.text.split_whitespace().next().unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProbeKind {
    #[serde(rename = "CLASS")]
    Class,
    #[serde(rename = "METHOD")]
    Method,
    #[serde(rename = "STATEMENT")]
    Statement,
    #[serde(rename = "ACTIVITY")]
    Activity,
    #[serde(rename = "SERVICE")]
    Service,
    #[serde(rename = "BROADCASTRECEIVER")]
    Receiver,
    #[serde(rename = "CONTENTPROVIDER")]
    Provider,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 7] = [
        ProbeKind::Class,
        ProbeKind::Method,
        ProbeKind::Statement,
        ProbeKind::Activity,
        ProbeKind::Service,
        ProbeKind::Receiver,
        ProbeKind::Provider,
    ];

    pub const COMPONENTS: [ProbeKind; 4] = [
        ProbeKind::Activity,
        ProbeKind::Service,
        ProbeKind::Receiver,
        ProbeKind::Provider,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ProbeKind::Class => "CLASS",
            ProbeKind::Method => "METHOD",
            ProbeKind::Statement => "STATEMENT",
            ProbeKind::Activity => "ACTIVITY",
            ProbeKind::Service => "SERVICE",
            ProbeKind::Receiver => "BROADCASTRECEIVER",
            ProbeKind::Provider => "CONTENTPROVIDER",
        }
    }

    pub fn from_key(key: &str) -> Option<ProbeKind> {
        ProbeKind::ALL.into_iter().find(|k| k.key() == key)
    }

    pub fn is_component(self) -> bool {
        ProbeKind::COMPONENTS.contains(&self)
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Where a probe lands: class, method and body index at insertion time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeAnchor {
    pub class: String,
    pub method_id: String,
    pub position: usize,
}

/// One injected log call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub kind: ProbeKind,
    /// Full log payload, `<KIND>=<body>`.
    pub payload: String,
    pub anchor: ProbeAnchor,
}

impl Probe {
    pub fn new(kind: ProbeKind, body: &str, anchor: ProbeAnchor) -> Self {
        Probe {
            kind,
            payload: format!("{}={}", kind.key(), body),
            anchor,
        }
    }
}

/// Split a payload at its first `=` into kind and body.
pub fn split_payload(payload: &str) -> Option<(ProbeKind, &str)> {
    let (key, body) = payload.split_once('=')?;
    Some((ProbeKind::from_key(key)?, body))
}

/// `<classDescriptor>-><name><methodDescriptor>`
pub fn canonical_method_id(class: &SmaliClass, method: &SmaliMethod) -> String {
    format!("{}->{}{}", class.descriptor, method.name, method.descriptor)
}

/// Payload of a statement probe. The instruction text is escaped so the
/// three `|`-separated fields stay unambiguous.
pub fn statement_payload(method_id: &str, instr_text: &str, index: usize) -> String {
    format!(
        "{}={}|{}|{}",
        ProbeKind::Statement.key(),
        method_id,
        escape_field(instr_text),
        index
    )
}

/// Decoded body of a `STATEMENT=` payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatementRef {
    pub method_id: String,
    pub instr_text: String,
    pub index: usize,
}

pub fn parse_statement_body(body: &str) -> Option<StatementRef> {
    let (method_id, rest) = body.split_once('|')?;
    let (text, index) = rest.rsplit_once('|')?;
    Some(StatementRef {
        method_id: method_id.to_string(),
        instr_text: unescape_field(text)?,
        index: index.parse().ok()?,
    })
}

/// Registers occupied by the arguments of a method with this descriptor.
pub fn param_register_count(descriptor: &str, is_static: bool) -> u32 {
    let mut count = if is_static { 0 } else { 1 };
    let params = descriptor
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .unwrap_or("");
    let mut chars = params.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            'J' | 'D' => count += 2,
            'L' => {
                for c in chars.by_ref() {
                    if c == ';' {
                        break;
                    }
                }
                count += 1;
            }
            '[' => {
                while chars.peek() == Some(&'[') {
                    chars.next();
                }
                if chars.next() == Some('L') {
                    for c in chars.by_ref() {
                        if c == ';' {
                            break;
                        }
                    }
                }
                count += 1;
            }
            _ => count += 1,
        }
    }
    count
}

/// `L` (identifier `/`)* identifier `;`
pub fn is_class_descriptor(text: &str) -> bool {
    let Some(inner) = text.strip_prefix('L').and_then(|s| s.strip_suffix(';')) else {
        return false;
    };
    !inner.is_empty()
        && inner.split('/').all(|part| {
            !part.is_empty() && !part.chars().any(|c| c.is_whitespace() || c == ';')
        })
}
