//! Line-oriented smali reader and normalizing printer.

use std::fmt;
use std::path::PathBuf;

use crate::ir::{is_class_descriptor, BodyItem, BodyKind, RegisterDecl, SmaliClass, SmaliMethod};
use crate::literal::normalize_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub file: PathBuf,
    pub line: usize,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.file.display(), self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedClass {
    pub class: SmaliClass,
    pub warnings: Vec<ParseDiagnostic>,
}

/// Directives that open a multi-line block and the line that closes it.
const BLOCKS: &[(&str, &str)] = &[
    (".annotation", ".end annotation"),
    (".packed-switch", ".end packed-switch"),
    (".sparse-switch", ".end sparse-switch"),
    (".array-data", ".end array-data"),
    (".subannotation", ".end subannotation"),
];

/// Single-line directives that may appear inside a method body.
const METHOD_DIRECTIVES: &[&str] = &[
    ".line",
    ".prologue",
    ".epilogue",
    ".local",
    ".end local",
    ".restart local",
    ".catch",
    ".catchall",
    ".source",
    ".param",
];

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(source: &'a str) -> Self {
        Lines {
            lines: source.lines().collect(),
            pos: 0,
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let line = *self.lines.get(self.pos)?;
        self.pos += 1;
        Some((self.pos, line.strip_suffix('\r').unwrap_or(line)))
    }

    /// Next non-blank line, without consuming it.
    fn peek_content(&self) -> Option<&'a str> {
        self.lines[self.pos..]
            .iter()
            .map(|l| l.trim())
            .find(|l| !l.is_empty())
    }

    /// Collect raw lines from an already consumed `first` line through the
    /// first line whose trimmed text equals `end`.
    fn block(&mut self, first: &'a str, end: &str) -> Option<String> {
        let mut raw = vec![first];
        while let Some((_, line)) = self.next() {
            raw.push(line);
            if line.trim() == end {
                return Some(raw.join("\n"));
            }
        }
        None
    }
}

struct Diagnostics {
    items: Vec<ParseDiagnostic>,
}

impl Diagnostics {
    fn error(&mut self, line: usize, message: impl Into<String>) {
        self.push(line, message, Severity::Error);
    }

    fn warn(&mut self, line: usize, message: impl Into<String>) {
        self.push(line, message, Severity::Warning);
    }

    fn push(&mut self, line: usize, message: impl Into<String>, severity: Severity) {
        self.items.push(ParseDiagnostic {
            file: PathBuf::new(),
            line,
            message: message.into(),
            severity,
        });
    }

    fn has_errors(&self) -> bool {
        self.items.iter().any(|d| d.severity == Severity::Error)
    }
}

fn directive_name(line: &str) -> &str {
    line.split_whitespace().next().unwrap_or("")
}

fn block_end(line: &str) -> Option<&'static str> {
    let name = directive_name(line);
    BLOCKS.iter().find(|(open, _)| *open == name).map(|(_, end)| *end)
}

/// Split `.class public final La;` into flags and the trailing operand.
fn flags_and_operand(rest: &str) -> (Vec<String>, String) {
    let mut tokens: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
    let last = tokens.pop().unwrap_or_default();
    (tokens, last)
}

fn is_mnemonic(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '/')
}

pub fn parse_class(source: &str) -> Result<ParsedClass, Vec<ParseDiagnostic>> {
    let mut diags = Diagnostics { items: Vec::new() };
    let mut lines = Lines::new(source);

    let mut descriptor: Option<String> = None;
    let mut access_flags = Vec::new();
    let mut super_descriptor: Option<String> = None;
    let mut interfaces = Vec::new();
    let mut source_file = None;
    let mut annotations_raw = Vec::new();
    let mut fields_raw = Vec::new();
    let mut methods: Vec<SmaliMethod> = Vec::new();

    while let Some((lineno, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match directive_name(line) {
            ".class" => {
                if descriptor.is_some() {
                    diags.error(lineno, "duplicate .class directive");
                    continue;
                }
                let (flags, desc) = flags_and_operand(&line[".class".len()..]);
                if !is_class_descriptor(&desc) {
                    diags.error(lineno, format!("malformed class descriptor `{desc}`"));
                }
                access_flags = flags;
                descriptor = Some(desc);
            }
            ".super" => {
                let desc = line[".super".len()..].trim().to_string();
                if !is_class_descriptor(&desc) {
                    diags.error(lineno, format!("malformed superclass descriptor `{desc}`"));
                }
                super_descriptor = Some(desc);
            }
            ".implements" => {
                let desc = line[".implements".len()..].trim().to_string();
                if !is_class_descriptor(&desc) {
                    diags.error(lineno, format!("malformed interface descriptor `{desc}`"));
                }
                interfaces.push(desc);
            }
            ".source" => {
                let value = line[".source".len()..].trim();
                match value.strip_prefix('"').and_then(|v| v.strip_suffix('"')) {
                    Some(v) => source_file = Some(v.to_string()),
                    None => diags.error(lineno, "expected quoted .source value"),
                }
            }
            ".field" => {
                if lines.peek_content().is_some_and(|l| l.starts_with(".annotation")) {
                    match lines.block(raw, ".end field") {
                        Some(block) => fields_raw.push(block),
                        None => diags.error(lineno, "unterminated .field block"),
                    }
                } else {
                    fields_raw.push(raw.to_string());
                }
            }
            ".annotation" => match lines.block(raw, ".end annotation") {
                Some(block) => annotations_raw.push(block),
                None => diags.error(lineno, "unterminated .annotation block"),
            },
            ".method" => {
                if let Some(method) = parse_method(lineno, line, &mut lines, &mut diags) {
                    if methods
                        .iter()
                        .any(|m| m.name == method.name && m.descriptor == method.descriptor)
                    {
                        diags.error(
                            lineno,
                            format!("duplicate method {}{}", method.name, method.descriptor),
                        );
                    } else {
                        methods.push(method);
                    }
                }
            }
            _ => {
                diags.warn(lineno, format!("unrecognized class-level line `{line}` preserved"));
                annotations_raw.push(raw.to_string());
            }
        }
    }

    let Some(descriptor) = descriptor else {
        diags.error(1, "missing .class header");
        return Err(diags.items);
    };
    if super_descriptor.is_none() && descriptor != "Ljava/lang/Object;" {
        diags.error(1, "missing .super directive");
    }
    if diags.has_errors() {
        return Err(diags.items);
    }
    Ok(ParsedClass {
        class: SmaliClass {
            descriptor,
            access_flags,
            super_descriptor,
            interfaces,
            source_file,
            annotations_raw,
            fields_raw,
            methods,
        },
        warnings: diags.items,
    })
}

fn parse_method(
    start: usize,
    header: &str,
    lines: &mut Lines<'_>,
    diags: &mut Diagnostics,
) -> Option<SmaliMethod> {
    let (flags, signature) = flags_and_operand(&header[".method".len()..]);
    let Some(paren) = signature.find('(') else {
        diags.error(start, format!("malformed method signature `{signature}`"));
        skip_to_end_method(lines);
        return None;
    };
    let name = signature[..paren].to_string();
    let descriptor = signature[paren..].to_string();
    let is_abstract_or_native = flags.iter().any(|f| f == "abstract" || f == "native");

    let mut registers = None;
    let mut body = Vec::new();
    let mut closed = false;

    while let Some((lineno, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == ".end method" {
            closed = true;
            break;
        }
        if line.starts_with('#') {
            body.push(BodyItem {
                kind: BodyKind::Comment,
                text: line.to_string(),
                index: None,
            });
            continue;
        }
        if let Some(label) = line.strip_prefix(':') {
            if label.is_empty() || label.contains(char::is_whitespace) {
                diags.error(lineno, format!("malformed label `{line}`"));
            }
            body.push(BodyItem::label(line));
            continue;
        }
        if line.starts_with('.') {
            let name = directive_name(line);
            match name {
                ".registers" | ".locals" => {
                    let value = line[name.len()..].trim();
                    let Ok(n) = value.parse::<u32>() else {
                        diags.error(lineno, format!("bad register count `{value}`"));
                        continue;
                    };
                    if registers.is_some() {
                        diags.error(lineno, "duplicate register directive");
                    }
                    registers = Some(if name == ".registers" {
                        RegisterDecl::Registers(n)
                    } else {
                        RegisterDecl::Locals(n)
                    });
                }
                ".method" => {
                    diags.error(start, "unterminated .method (next .method found)");
                    return None;
                }
                ".param" if lines.peek_content().is_some_and(|l| l.starts_with(".annotation")) => {
                    match lines.block(raw, ".end param") {
                        Some(block) => body.push(BodyItem::directive(block)),
                        None => {
                            diags.error(lineno, "unterminated .param block");
                            return None;
                        }
                    }
                }
                _ => {
                    if let Some(end) = block_end(line) {
                        match lines.block(raw, end) {
                            Some(block) => body.push(BodyItem::directive(block)),
                            None => {
                                diags.error(lineno, format!("unterminated {name} block"));
                                return None;
                            }
                        }
                    } else {
                        let known = METHOD_DIRECTIVES
                            .iter()
                            .any(|d| line == *d || line.starts_with(&format!("{d} ")));
                        if !known {
                            diags.warn(lineno, format!("unrecognized directive `{name}` preserved"));
                        }
                        body.push(BodyItem::directive(normalize_line(line)));
                    }
                }
            }
            continue;
        }
        let mnemonic = line.split_whitespace().next().unwrap_or("");
        if is_mnemonic(mnemonic) {
            body.push(BodyItem::instruction(normalize_line(line)));
        } else {
            diags.warn(lineno, format!("unrecognized line `{line}` preserved"));
            body.push(BodyItem::directive(line));
        }
    }

    if !closed {
        diags.error(start, format!("unterminated .method {name}{descriptor}"));
        return None;
    }
    let mut method = SmaliMethod {
        name,
        descriptor,
        access_flags: flags,
        registers,
        body,
        is_abstract_or_native,
        probe_register: None,
    };
    method.reindex();
    let count = method.statement_count();
    if method.is_abstract_or_native && count > 0 {
        diags.error(start, "abstract/native method has instructions");
    }
    if !method.is_abstract_or_native && count > 0 && method.registers.is_none() {
        diags.error(start, "method with code lacks .registers/.locals");
    }
    if let Some(RegisterDecl::Registers(n)) = method.registers {
        if n < method.param_registers() {
            diags.error(start, format!(".registers {n} is smaller than the parameter count"));
        }
    }
    Some(method)
}

fn skip_to_end_method(lines: &mut Lines<'_>) {
    while let Some((_, line)) = lines.next() {
        if line.trim() == ".end method" {
            break;
        }
    }
}

/// Print a class back to smali. Output is normalized: canonical header
/// order, one item per line, opaque blocks reproduced byte for byte.
pub fn print_class(class: &SmaliClass) -> String {
    let mut out = String::new();
    out.push_str(".class ");
    for flag in &class.access_flags {
        out.push_str(flag);
        out.push(' ');
    }
    out.push_str(&class.descriptor);
    out.push('\n');
    if let Some(sup) = &class.super_descriptor {
        out.push_str(&format!(".super {sup}\n"));
    }
    if let Some(src) = &class.source_file {
        out.push_str(&format!(".source \"{src}\"\n"));
    }
    if !class.interfaces.is_empty() {
        out.push('\n');
        for iface in &class.interfaces {
            out.push_str(&format!(".implements {iface}\n"));
        }
    }
    for block in &class.annotations_raw {
        out.push('\n');
        out.push_str(block);
        out.push('\n');
    }
    if !class.fields_raw.is_empty() {
        out.push('\n');
        for field in &class.fields_raw {
            out.push_str(field);
            out.push('\n');
        }
    }
    for method in &class.methods {
        out.push('\n');
        print_method(method, &mut out);
    }
    out
}

fn print_method(method: &SmaliMethod, out: &mut String) {
    out.push_str(".method ");
    for flag in &method.access_flags {
        out.push_str(flag);
        out.push(' ');
    }
    out.push_str(&method.name);
    out.push_str(&method.descriptor);
    out.push('\n');
    match method.registers {
        Some(RegisterDecl::Registers(n)) => out.push_str(&format!("    .registers {n}\n")),
        Some(RegisterDecl::Locals(n)) => out.push_str(&format!("    .locals {n}\n")),
        None => {}
    }
    for item in &method.body {
        if item.text.contains('\n') || item.text.starts_with(char::is_whitespace) {
            // opaque block: verbatim
            out.push_str(&item.text);
        } else {
            out.push_str("    ");
            out.push_str(&item.text);
        }
        out.push('\n');
    }
    out.push_str(".end method\n");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> SmaliClass {
        parse_class(src).unwrap().class
    }

    const SAMPLE: &str = r#"
.class public La;
.super Ljava/lang/Object;
.source "a.java"

# direct methods
.method public constructor <init>()V
    .registers 1

    .prologue
    .line 3
    invoke-direct {p0}, Ljava/lang/Object;-><init>()V

    return-void
.end method

.method public foo(I)I
    .locals 1
    .param p1, "x"    # I
        .annotation runtime Lx/Y;
        .end annotation
    .end param

    :try_start_0
    const/4   v0,    0x1
    :try_end_0
    .catch Ljava/lang/Exception; {:try_start_0 .. :try_end_0} :catch_0
    return v0

    :catch_0
    move-exception v0
    return p1
.end method
"#;

    #[test]
    fn minimal_class() {
        let c = parse(".class public La;\n.super Ljava/lang/Object;\n");
        assert_eq!(c.descriptor, "La;");
        assert!(c.methods.is_empty());
        assert_eq!(print_class(&c), ".class public La;\n.super Ljava/lang/Object;\n");
    }

    #[test]
    fn single_instruction_method() {
        let c = parse(
            ".class public La;\n.super Ljava/lang/Object;\n.method public foo()V\n.locals 0\nreturn-void\n.end method\n",
        );
        let m = &c.methods[0];
        assert_eq!(m.statement_count(), 1);
        assert_eq!(m.statements().next().unwrap().0, 0);
    }

    #[test]
    fn sample_roundtrips() {
        let first = parse(SAMPLE);
        let printed = print_class(&first);
        let second = parse(&printed);
        assert_eq!(first, second);
        assert_eq!(first.methods[1].statement_count(), 4);
        assert_eq!(first.methods[1].body[first.methods[1].body.len() - 2].text, "move-exception v0");
        assert!(printed.contains("const/4 v0, 0x1"));
    }

    #[test]
    fn opaque_annotation_is_byte_identical() {
        let src = ".class public La;\n.super Ljava/lang/Object;\n\n.annotation system Ldalvik/annotation/Signature;\n    value = {\n        \"Ljava/lang/Object;\"\n    }\n.end annotation\n";
        let c = parse(src);
        let block = ".annotation system Ldalvik/annotation/Signature;\n    value = {\n        \"Ljava/lang/Object;\"\n    }\n.end annotation";
        assert_eq!(c.annotations_raw, vec![block.to_string()]);
        assert!(print_class(&c).contains(block));
    }

    #[test]
    fn missing_header_is_error() {
        let err = parse_class(".super Ljava/lang/Object;\n").unwrap_err();
        assert!(err.iter().any(|d| d.message.contains(".class")));
        let err = parse_class(".class public La;\n").unwrap_err();
        assert!(err.iter().any(|d| d.message.contains(".super")));
    }

    #[test]
    fn object_root_needs_no_super() {
        assert!(parse_class(".class public Ljava/lang/Object;\n").is_ok());
    }

    #[test]
    fn unterminated_method_is_error() {
        let err = parse_class(
            ".class public La;\n.super Ljava/lang/Object;\n.method public foo()V\n.locals 0\nreturn-void\n",
        )
        .unwrap_err();
        assert!(err[0].message.contains("unterminated"));
    }

    #[test]
    fn duplicate_method_is_error() {
        let m = ".method public foo()V\n.locals 0\nreturn-void\n.end method\n";
        let src = format!(".class public La;\n.super Ljava/lang/Object;\n{m}{m}");
        let err = parse_class(&src).unwrap_err();
        assert!(err.iter().any(|d| d.message.contains("duplicate method")));
    }

    #[test]
    fn unknown_directive_is_warning() {
        let parsed = parse_class(
            ".class public La;\n.super Ljava/lang/Object;\n.method public foo()V\n.locals 0\n.weird thing\nreturn-void\n.end method\n",
        )
        .unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.warnings[0].severity, Severity::Warning);
        assert_eq!(parsed.class.methods[0].body[0].text, ".weird thing");
    }

    #[test]
    fn field_with_annotation_block() {
        let src = ".class public La;\n.super Ljava/lang/Object;\n.field private x:I\n    .annotation runtime Lq;\n    .end annotation\n.end field\n.field private y:I\n";
        let c = parse(src);
        assert_eq!(c.fields_raw.len(), 2);
        assert!(c.fields_raw[0].ends_with(".end field"));
        assert_eq!(parse(&print_class(&c)), c);
    }
}
