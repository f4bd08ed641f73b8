//! Register operands, encoding width limits and probe register allocation.

use std::fmt;
use std::ops::Range;

use crate::ir::{BodyItem, BodyKind, RegisterDecl, SmaliMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reg {
    /// Raw frame register `vN`.
    V(u32),
    /// Parameter alias `pN`.
    P(u32),
}

impl Reg {
    fn parse(token: &str) -> Option<Reg> {
        let (kind, digits) = token.split_at_checked(1)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let n = digits.parse().ok()?;
        match kind {
            "v" => Some(Reg::V(n)),
            "p" => Some(Reg::P(n)),
            _ => None,
        }
    }

    /// Frame index given the number of locals.
    pub fn absolute(self, locals: u32) -> u32 {
        match self {
            Reg::V(n) => n,
            Reg::P(n) => locals + n,
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::V(n) => write!(f, "v{n}"),
            Reg::P(n) => write!(f, "p{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegRef {
    pub reg: Reg,
    pub span: Range<usize>,
    /// Operand position (0-based); all registers of a `{..}` list share one.
    pub operand: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Operands {
    pub refs: Vec<RegRef>,
    /// `{vA .. vB}` endpoints, when the instruction uses a register range.
    pub range: Option<(Reg, Reg)>,
}

/// Split `text[start..]` on commas outside string literals and braces.
fn split_operands(text: &str, start: usize) -> Vec<Range<usize>> {
    let bytes = text.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut begin = start;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => depth = depth.saturating_sub(1),
            b',' if depth == 0 => {
                parts.push(begin..i);
                begin = i + 1;
            }
            _ => {}
        }
    }
    if begin < bytes.len() {
        parts.push(begin..bytes.len());
    }
    parts
}

fn trimmed(text: &str, range: Range<usize>) -> Range<usize> {
    let slice = &text[range.clone()];
    let lead = slice.len() - slice.trim_start().len();
    let tail = slice.len() - slice.trim_end().len();
    range.start + lead..range.end - tail
}

fn operands_from(text: &str, start: usize) -> Operands {
    let mut out = Operands::default();
    for (operand, part) in split_operands(text, start).into_iter().enumerate() {
        let part = trimmed(text, part);
        let slice = &text[part.clone()];
        if let Some(inner) = slice.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            let inner_start = part.start + 1;
            if let Some(dots) = inner.find("..") {
                let a = trimmed(text, inner_start..inner_start + dots);
                let b = trimmed(text, inner_start + dots + 2..inner_start + inner.len());
                if let (Some(ra), Some(rb)) = (Reg::parse(&text[a.clone()]), Reg::parse(&text[b.clone()])) {
                    out.refs.push(RegRef { reg: ra, span: a, operand });
                    out.refs.push(RegRef { reg: rb, span: b, operand });
                    out.range = Some((ra, rb));
                }
            } else {
                for item in split_operands(&text[..inner_start + inner.len()], inner_start) {
                    let item = trimmed(text, item);
                    if let Some(reg) = Reg::parse(&text[item.clone()]) {
                        out.refs.push(RegRef { reg, span: item, operand });
                    }
                }
            }
        } else if let Some(reg) = Reg::parse(slice) {
            out.refs.push(RegRef { reg, span: part, operand });
        }
    }
    out
}

/// Register operands of a body item; only instructions and the debug
/// directives that name a register have any.
pub fn operands(item: &BodyItem) -> Operands {
    let text = item.text.as_str();
    match item.kind {
        BodyKind::Instruction => {
            let start = text.find(char::is_whitespace).unwrap_or(text.len());
            operands_from(text, start)
        }
        BodyKind::Directive => {
            for prefix in [".local ", ".end local ", ".restart local "] {
                if text.starts_with(prefix) {
                    let mut ops = operands_from(text, prefix.len());
                    ops.refs.truncate(1);
                    return ops;
                }
            }
            Operands::default()
        }
        _ => Operands::default(),
    }
}

/// Largest encodable register for each operand position of `mnemonic`.
pub fn width_limit(mnemonic: &str, operand: usize) -> u32 {
    const NIBBLE: u32 = 15;
    const BYTE: u32 = 255;
    const SHORT: u32 = 65535;
    if mnemonic.ends_with("/range") {
        return SHORT;
    }
    if mnemonic.ends_with("/16") && mnemonic.starts_with("move") {
        return SHORT;
    }
    if mnemonic.ends_with("/from16") {
        return if operand == 0 { BYTE } else { SHORT };
    }
    let nibble = matches!(mnemonic, "move" | "move-wide" | "move-object" | "array-length" | "instance-of" | "new-array" | "const/4" | "rsub-int")
        || mnemonic.starts_with("iget")
        || mnemonic.starts_with("iput")
        || mnemonic.starts_with("invoke-")
        || mnemonic.starts_with("filled-new-array")
        || mnemonic.starts_with("neg-")
        || mnemonic.starts_with("not-")
        || mnemonic.contains("-to-")
        || mnemonic.ends_with("/2addr")
        || mnemonic.ends_with("/lit16")
        || (mnemonic.starts_with("if-") && !mnemonic.ends_with('z'));
    if nibble {
        NIBBLE
    } else {
        BYTE
    }
}

fn wide_type(t: &str) -> bool {
    t == "long" || t == "double"
}

/// Which register operands of an instruction name the low half of a
/// 64-bit pair. Non-range invokes are resolved through the callee
/// descriptor; everything else by mnemonic.
fn wide_operands(item: &BodyItem, count: usize) -> Vec<bool> {
    let m = item.mnemonic();
    let mut wide = vec![false; count];
    let mut set = |flags: &[bool]| {
        for (w, f) in wide.iter_mut().zip(flags) {
            *w = *f;
        }
    };
    if m.starts_with("invoke-") && !m.ends_with("/range") {
        let descriptor = item.text.split("->").nth(1).unwrap_or("");
        let params = descriptor
            .find('(')
            .and_then(|a| descriptor[a..].find(')').map(|b| &descriptor[a..a + b + 1]))
            .unwrap_or("()");
        let mut flags = Vec::new();
        if m != "invoke-static" {
            flags.push(false);
        }
        let mut chars = params[1..params.len() - 1].chars();
        while let Some(c) = chars.next() {
            match c {
                'J' | 'D' => flags.extend([true, false]),
                'L' => {
                    chars.by_ref().find(|&c| c == ';');
                    flags.push(false);
                }
                '[' => {
                    let mut c = chars.next();
                    while c == Some('[') {
                        c = chars.next();
                    }
                    if c == Some('L') {
                        chars.by_ref().find(|&c| c == ';');
                    }
                    flags.push(false);
                }
                _ => flags.push(false),
            }
        }
        set(&flags);
        return wide;
    }
    let (w, n) = (true, false);
    if m.starts_with("move-wide") {
        set(&[w, w]);
    } else if m == "move-result-wide" || m == "return-wide" || m.starts_with("const-wide") {
        set(&[w]);
    } else if m.starts_with("aget-wide")
        || m.starts_with("aput-wide")
        || m.starts_with("iget-wide")
        || m.starts_with("iput-wide")
        || m.starts_with("sget-wide")
        || m.starts_with("sput-wide")
    {
        set(&[w, n, n]);
    } else if m == "cmp-long" || m == "cmpl-double" || m == "cmpg-double" {
        set(&[n, w, w]);
    } else if let Some((from, to)) = m.split_once("-to-") {
        set(&[wide_type(to), wide_type(from)]);
    } else if let Some((op, rest)) = m.split_once('-') {
        let ty = rest.split('/').next().unwrap_or("");
        if wide_type(ty) {
            let shift = matches!(op, "shl" | "shr" | "ushr");
            if matches!(op, "neg" | "not") {
                set(&[w, w]);
            } else if rest.ends_with("/2addr") {
                set(&[w, !shift]);
            } else {
                set(&[w, w, !shift]);
            }
        }
    }
    wide
}

/// Operand-width and frame-bound violations of one body item.
pub fn width_violations(item: &BodyItem, locals: u32, params: u32) -> Vec<String> {
    if item.kind != BodyKind::Instruction {
        return Vec::new();
    }
    let mnemonic = item.mnemonic();
    let total = locals + params;
    let mut out = Vec::new();
    for r in operands(item).refs {
        if let Reg::P(n) = r.reg {
            if n >= params {
                out.push(format!("`{}`: {} exceeds parameter count {params}", item.text, r.reg));
                continue;
            }
        }
        let abs = r.reg.absolute(locals);
        if abs >= total {
            out.push(format!("`{}`: {} outside frame of {total} registers", item.text, r.reg));
        }
        let limit = width_limit(mnemonic, r.operand);
        if abs > limit {
            out.push(format!("`{}`: {} (v{abs}) exceeds operand limit v{limit}", item.text, r.reg));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ineligible {
    NoCode,
    EmptyBody,
    FrameTooWide { register: u32 },
    RangeStraddle { instruction: String },
    WidePairStraddle { instruction: String },
    OperandWidth { detail: String },
}

impl fmt::Display for Ineligible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ineligible::NoCode => f.write_str("abstract or native method has no body"),
            Ineligible::EmptyBody => f.write_str("method body has no instructions"),
            Ineligible::FrameTooWide { register } => {
                write!(f, "probe register v{register} exceeds const-string operand limit v255")
            }
            Ineligible::RangeStraddle { instruction } => {
                write!(f, "register range straddles the parameter boundary: `{instruction}`")
            }
            Ineligible::WidePairStraddle { instruction } => {
                write!(f, "wide register pair may straddle the parameter boundary: `{instruction}`")
            }
            Ineligible::OperandWidth { detail } => {
                write!(f, "shifted registers no longer fit their operands: {detail}")
            }
        }
    }
}

fn rewrite(text: &str, refs: &[RegRef], locals: u32) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    let mut last = 0;
    for r in refs {
        if let Reg::V(n) = r.reg {
            if n >= locals {
                out.push_str(&text[last..r.span.start]);
                out.push_str(&format!("v{}", n + 1));
                last = r.span.end;
            }
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Undo the allocation shift on one item: `v` references above the
/// reserved register move back down by one.
pub fn unshift_registers(item: &BodyItem, reserved: u32) -> String {
    let ops = operands(item);
    let text = item.text.as_str();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for r in &ops.refs {
        if let Reg::V(n) = r.reg {
            if n > reserved {
                out.push_str(&text[last..r.span.start]);
                out.push_str(&format!("v{}", n - 1));
                last = r.span.end;
            }
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Reserve one fresh local register for probe constants.
///
/// The new register takes index `locals`; raw `v` references at or above
/// the old local count (i.e. raw parameter references) move up by one.
/// `p` aliases follow the frame automatically.
pub fn allocate_probe_registers(method: &SmaliMethod) -> Result<SmaliMethod, Ineligible> {
    if !method.has_code() {
        return Err(Ineligible::NoCode);
    }
    if method.probe_register.is_some() {
        return Ok(method.clone());
    }
    if method.statement_count() == 0 {
        return Err(Ineligible::EmptyBody);
    }
    let locals = method.locals().unwrap_or(0);
    let params = method.param_registers();
    if locals > 255 {
        return Err(Ineligible::FrameTooWide { register: locals });
    }

    let mut out = method.clone();
    for item in &mut out.body {
        let ops = operands(item);
        if ops.refs.is_empty() {
            continue;
        }
        if let Some((a, b)) = ops.range {
            if a.absolute(locals) < locals && b.absolute(locals) >= locals {
                return Err(Ineligible::RangeStraddle {
                    instruction: item.text.clone(),
                });
            }
        }
        if locals > 0
            && item.kind == BodyKind::Instruction
            && ops
                .refs
                .iter()
                .zip(wide_operands(item, ops.refs.len()))
                .any(|(r, wide)| wide && r.reg.absolute(locals) == locals - 1)
        {
            return Err(Ineligible::WidePairStraddle {
                instruction: item.text.clone(),
            });
        }
        item.text = rewrite(&item.text, &ops.refs, locals);
    }
    out.registers = Some(match method.registers {
        Some(RegisterDecl::Registers(n)) => RegisterDecl::Registers(n + 1),
        _ => RegisterDecl::Locals(locals + 1),
    });
    out.probe_register = Some(locals);

    let problems: Vec<String> = out
        .body
        .iter()
        .flat_map(|item| width_violations(item, locals + 1, params))
        .collect();
    if !problems.is_empty() {
        return Err(Ineligible::OperandWidth {
            detail: problems.join("; "),
        });
    }
    Ok(out)
}
