//! Reading probe records out of execution logs.
//!
//! A record is any line carrying the identifier as a token, optionally
//! followed by a `( pid)` decoration, then `: ` and the payload. That covers
//! the bare form (`ANDROLOG: METHOD=...`) as well as logcat's `brief`
//! (`I/ANDROLOG( 1234): ...`) and `threadtime`
//! (`10-14 09:00:00.000  1234  1234 I ANDROLOG: ...`) layouts.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{split_payload, ProbeKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeEvent {
    pub kind: ProbeKind,
    pub payload: String,
    pub first_seen_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogHit {
    Event(ProbeEvent),
    /// Identifier matched but the payload is not `<KIND>=<body>`.
    Malformed(String),
}

fn token_boundary_before(line: &str, at: usize) -> bool {
    line[..at]
        .chars()
        .next_back()
        .is_none_or(|c| c.is_whitespace() || c == '/')
}

/// Payload following the identifier at byte offset `end`, if the record
/// grammar matches there.
fn payload_after(line: &str, end: usize) -> Option<&str> {
    let mut rest = &line[end..];
    if rest.starts_with('(') {
        rest = &rest[rest.find(')')? + 1..];
    }
    let rest = rest.trim_start_matches(' ');
    let payload = rest.strip_prefix(": ")?;
    Some(payload.trim_end())
}

/// Classify one log line. `None` for lines that do not carry the identifier.
pub fn parse_log_line(line: &str, identifier: &str) -> Option<LogHit> {
    if identifier.is_empty() {
        return None;
    }
    for (at, _) in line.match_indices(identifier) {
        if !token_boundary_before(line, at) {
            continue;
        }
        let Some(payload) = payload_after(line, at + identifier.len()) else {
            continue;
        };
        return Some(match split_payload(payload) {
            Some((kind, _)) => LogHit::Event(ProbeEvent {
                kind,
                payload: payload.to_string(),
                first_seen_line: 0,
            }),
            None => LogHit::Malformed(payload.to_string()),
        });
    }
    None
}

/// Render a payload the way logcat's `brief` format shows it.
pub fn render_log_line(identifier: &str, pid: u32, payload: &str) -> String {
    format!("I/{identifier}({pid:>5}): {payload}")
}

/// Streaming fold over one or more log files.
#[derive(Debug, Clone, Default)]
pub struct LogScan {
    pub events: Vec<ProbeEvent>,
    pub malformed: Vec<String>,
    /// Lines that carried the identifier, well-formed or not.
    pub hits: usize,
    pub lines: usize,
}

impl LogScan {
    pub fn new() -> Self {
        LogScan::default()
    }

    /// Consume `text`; line numbers continue from previous calls.
    pub fn feed(&mut self, text: &str, identifier: &str) {
        for line in text.lines() {
            self.lines += 1;
            match parse_log_line(line, identifier) {
                Some(LogHit::Event(mut e)) => {
                    e.first_seen_line = self.lines;
                    self.hits += 1;
                    self.events.push(e);
                }
                Some(LogHit::Malformed(p)) => {
                    self.hits += 1;
                    self.malformed.push(p);
                }
                None => {}
            }
        }
    }

    pub fn into_event_set(self) -> EventSet {
        let mut set = dedup_events(self.events);
        set.malformed = self.malformed.into_iter().collect();
        set
    }
}

/// Deduplicated observations, keyed by payload.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventSet {
    pub events: BTreeMap<String, ProbeEvent>,
    pub malformed: BTreeSet<String>,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, payload: &str) -> bool {
        self.events.contains_key(payload)
    }

    /// Associative merge: union, keeping the earliest line per payload.
    pub fn merge(&mut self, other: EventSet) {
        for (payload, event) in other.events {
            self.events
                .entry(payload)
                .and_modify(|e| {
                    if event.first_seen_line < e.first_seen_line {
                        e.first_seen_line = event.first_seen_line;
                    }
                })
                .or_insert(event);
        }
        self.malformed.extend(other.malformed);
    }
}

/// Unique by payload, earliest `first_seen_line` wins.
pub fn dedup_events(events: impl IntoIterator<Item = ProbeEvent>) -> EventSet {
    let mut set = EventSet::default();
    for event in events {
        set.merge(EventSet {
            events: BTreeMap::from([(event.payload.clone(), event)]),
            malformed: BTreeSet::new(),
        });
    }
    set
}
