use crate::error::{Error, Result};
use crate::ir::{split_payload, BodyItem, BodyKind, Probe, ProbeKind, SmaliMethod};
use crate::literal::{first_string_literal, quote_smali_string};

use super::registers::{operands, Reg};

/// Descriptor of the single-argument entry point probes call.
pub fn log_entry(logchecker: &str) -> String {
    format!("{logchecker}->log(Ljava/lang/String;)V")
}

/// The two instructions of a probe: constant load, then the log call.
pub fn probe_instructions(payload: &str, register: u32, logchecker: &str) -> [BodyItem; 2] {
    let load = BodyItem::instruction(format!(
        "const-string v{register}, {}",
        quote_smali_string(payload)
    ));
    let call = if register <= 15 {
        format!("invoke-static {{v{register}}}, {}", log_entry(logchecker))
    } else {
        format!(
            "invoke-static/range {{v{register} .. v{register}}}, {}",
            log_entry(logchecker)
        )
    };
    [load, BodyItem::instruction(call)]
}

/// Insert `probe` at body index `position` of a method that already owns
/// a probe register.
pub fn insert_probe(
    method: &mut SmaliMethod,
    position: usize,
    probe: &Probe,
    logchecker: &str,
) -> Result<()> {
    let len = method.body.len();
    let name = || format!("{}{}", method.name, method.descriptor);
    let Some(register) = method.probe_register else {
        return Err(Error::Internal(format!("{} has no probe register", name())));
    };
    if position > len {
        return Err(Error::ProbePosition {
            method: name(),
            position,
            len,
        });
    }
    let [load, call] = probe_instructions(&probe.payload, register, logchecker);
    method.body.splice(position..position, [load, call]);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoundProbe {
    pub payload: String,
    pub kind: Option<ProbeKind>,
    pub register: u32,
}

/// Recognize a probe starting at `body[pos]`.
pub fn probe_at(body: &[BodyItem], pos: usize, logchecker: &str) -> Option<FoundProbe> {
    let load = body.get(pos)?;
    let call = body.get(pos + 1)?;
    if load.kind != BodyKind::Instruction || call.kind != BodyKind::Instruction {
        return None;
    }
    if !matches!(load.mnemonic(), "const-string" | "const-string/jumbo") {
        return None;
    }
    let Some(Reg::V(register)) = operands(load).refs.first().map(|r| r.reg) else {
        return None;
    };
    if !matches!(call.mnemonic(), "invoke-static" | "invoke-static/range")
        || !call.text.ends_with(&format!(", {}", log_entry(logchecker)))
    {
        return None;
    }
    let args = operands(call).refs;
    if args.is_empty() || args.iter().any(|r| r.reg != Reg::V(register)) {
        return None;
    }
    let payload = first_string_literal(&load.text)?;
    let kind = split_payload(&payload).map(|(k, _)| k);
    Some(FoundProbe {
        payload,
        kind,
        register,
    })
}

/// Body positions that belong to probes (both instructions of each pair).
pub fn probe_mask(body: &[BodyItem], logchecker: &str) -> Vec<bool> {
    let mut mask = vec![false; body.len()];
    let mut i = 0;
    while i < body.len() {
        if probe_at(body, i, logchecker).is_some() {
            mask[i] = true;
            mask[i + 1] = true;
            i += 2;
        } else {
            i += 1;
        }
    }
    mask
}

pub fn probes_in(method: &SmaliMethod, logchecker: &str) -> Vec<(usize, FoundProbe)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < method.body.len() {
        if let Some(p) = probe_at(&method.body, i, logchecker) {
            out.push((i, p));
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}
