//! Static checks for the Dalvik rules that probe insertion can break.

use std::collections::BTreeSet;

use crate::app::App;
use crate::ir::{BodyKind, SmaliClass, SmaliMethod};

use super::probe::probe_mask;
use super::registers::{operands, width_violations};

/// Previous item that emits code or splits blocks (labels), skipping
/// directives and comments.
fn previous_significant(method: &SmaliMethod, pos: usize) -> Option<usize> {
    (0..pos)
        .rev()
        .find(|&i| matches!(method.body[i].kind, BodyKind::Instruction | BodyKind::Label))
}

pub fn check_method(class: &SmaliClass, method: &SmaliMethod, logchecker: &str) -> Vec<String> {
    let id = class.method_id(method);
    let mut out = Vec::new();
    let Some(locals) = method.locals() else {
        return out;
    };
    let params = method.param_registers();
    let mask = probe_mask(&method.body, logchecker);

    let mut probe_regs = BTreeSet::new();
    for (i, item) in method.body.iter().enumerate() {
        if mask[i] {
            for r in operands(item).refs {
                probe_regs.insert(r.reg.absolute(locals));
            }
        }
    }

    for (i, item) in method.body.iter().enumerate() {
        if item.kind != BodyKind::Instruction {
            continue;
        }
        let mnemonic = item.mnemonic();
        if mnemonic.starts_with("move-result") {
            let ok = previous_significant(method, i).is_some_and(|p| {
                let prev = &method.body[p];
                prev.kind == BodyKind::Instruction
                    && !mask[p]
                    && (prev.mnemonic().starts_with("invoke-")
                        || prev.mnemonic().starts_with("filled-new-array"))
            });
            if !ok {
                out.push(format!("{id}: `{}` does not directly follow an invoke", item.text));
            }
        }
        if mnemonic == "move-exception" {
            let ok = previous_significant(method, i)
                .is_some_and(|p| method.body[p].kind == BodyKind::Label);
            if !ok {
                out.push(format!("{id}: `{}` is not at the start of a handler", item.text));
            }
        }
        for v in width_violations(item, locals, params) {
            out.push(format!("{id}: {v}"));
        }
        if !mask[i] {
            for r in operands(item).refs {
                if probe_regs.contains(&r.reg.absolute(locals)) {
                    out.push(format!(
                        "{id}: original instruction `{}` touches probe register",
                        item.text
                    ));
                }
            }
        }
    }
    out
}

/// Run [`check_method`] over every method of the app.
pub fn check_app(app: &App, logchecker: &str) -> Vec<String> {
    app.iter()
        .flat_map(|c| c.methods.iter().flat_map(move |m| check_method(c, m, logchecker)))
        .collect()
}
