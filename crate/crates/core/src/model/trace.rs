//! Trace events: one JSON object per line (`.o2ctrace.jsonl`).
//!
//! A trace is a replayable record of runtime behavior: allocations, frees,
//! memory accesses, control transfers, compartment entry/exit, and interface
//! crossings. Ticks increase strictly; object content travels as lowercase
//! hex in `payload`.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Alloc,
    Free,
    Read,
    Write,
    IndirectCall,
    IndirectJump,
    Return,
    DirectCall,
    EnterCompartment,
    ExitCompartment,
    ArgPass,
    ReturnValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AllocatorKind {
    Slab,
    Buddy,
    Vmalloc,
}

mod hex_payload {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_str(&hex::encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        match raw {
            None => Ok(None),
            Some(text) => hex::decode(text.as_bytes())
                .map(Some)
                .map_err(|e| serde::de::Error::custom(format!("bad hex payload: {e}"))),
        }
    }
}

/// One replayed runtime event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Strictly increasing within a trace.
    pub tick: u64,
    pub kind: EventKind,
    /// Instruction address that produced the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<u64>,
    /// Data address for memory and allocation events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocator: Option<AllocatorKind>,
    /// Object content at free time, lowercase hex on the wire.
    #[serde(default, with = "hex_payload", skip_serializing_if = "Option::is_none")]
    pub payload: Option<Vec<u8>>,
    /// Runtime transfer target, argument, or return value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
    /// Object was live before compartmentalization time 0 (untracked).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pre_t0: bool,
}

impl TraceEvent {
    pub fn new(tick: u64, kind: EventKind) -> Self {
        TraceEvent {
            tick,
            kind,
            site: None,
            addr: None,
            size: None,
            type_id: None,
            allocator: None,
            payload: None,
            value: None,
            pre_t0: false,
        }
    }

    /// Required-field schema per event kind.
    fn validate(&self, line: usize) -> Result<(), ModelError> {
        let need = |cond: bool, what: &str| -> Result<(), ModelError> {
            if cond {
                Ok(())
            } else {
                Err(ModelError::Schema {
                    line,
                    msg: format!("{:?} event missing required field {what}", self.kind),
                })
            }
        };
        match self.kind {
            EventKind::Alloc => {
                need(self.site.is_some(), "site")?;
                need(self.addr.is_some(), "addr")?;
                need(self.size.is_some(), "size")?;
                need(self.type_id.is_some(), "type_id")?;
                need(self.allocator.is_some(), "allocator")?;
                if self.size == Some(0) {
                    return Err(ModelError::Schema { line, msg: "Alloc size must be > 0".into() });
                }
            }
            EventKind::Free => {
                need(self.addr.is_some(), "addr")?;
            }
            EventKind::Read | EventKind::Write => {
                need(self.site.is_some(), "site")?;
                need(self.addr.is_some(), "addr")?;
                need(self.size.is_some(), "size")?;
            }
            EventKind::IndirectCall | EventKind::IndirectJump | EventKind::Return => {
                need(self.site.is_some(), "site")?;
                need(self.value.is_some(), "value")?;
            }
            EventKind::DirectCall
            | EventKind::EnterCompartment
            | EventKind::ExitCompartment => {
                need(self.site.is_some(), "site")?;
            }
            EventKind::ArgPass | EventKind::ReturnValue => {
                need(self.site.is_some(), "site")?;
                need(self.value.is_some(), "value")?;
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines trace events, enforcing strictly increasing ticks and
/// the per-kind required-field schema.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>, ModelError> {
    let mut out: Vec<TraceEvent> = Vec::new();
    let mut prev_tick: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent =
            serde_json::from_str(&line).map_err(|source| ModelError::Malformed { line: lineno, source })?;
        ev.validate(lineno)?;
        if let Some(prev) = prev_tick {
            if ev.tick <= prev {
                return Err(ModelError::NonMonotoneTick { line: lineno, tick: ev.tick, prev });
            }
        }
        prev_tick = Some(ev.tick);
        out.push(ev);
    }
    Ok(out)
}

/// Serializes trace events back to JSON lines (inverse of [`parse_trace`]).
pub fn serialize_trace(events: &[TraceEvent]) -> String {
    let mut s = String::new();
    for ev in events {
        s.push_str(&serde_json::to_string(ev).expect("event serializes"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_alloc_and_free() {
        let text = "{\"tick\":1,\"kind\":\"Alloc\",\"site\":4096,\"addr\":65536,\"size\":64,\"type_id\":7,\"allocator\":\"Slab\"}\n\
                    {\"tick\":2,\"kind\":\"Free\",\"addr\":65536,\"payload\":\"00ff\"}\n";
        let tr = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[0].kind, EventKind::Alloc);
        assert_eq!(tr[0].allocator, Some(AllocatorKind::Slab));
        assert_eq!(tr[1].payload.as_deref(), Some(&[0x00u8, 0xff][..]));
    }

    #[test]
    fn non_monotone_ticks_rejected() {
        let text = "{\"tick\":1,\"kind\":\"Free\",\"addr\":1}\n{\"tick\":1,\"kind\":\"Free\",\"addr\":2}\n";
        let err = parse_trace(text.as_bytes()).unwrap_err();
        assert!(matches!(err, ModelError::NonMonotoneTick { line: 2, tick: 1, prev: 1 }));
    }

    #[test]
    fn alloc_without_allocator_rejected() {
        let text = r#"{"tick":1,"kind":"Alloc","site":1,"addr":2,"size":8,"type_id":1}"#;
        let err = parse_trace(text.as_bytes()).unwrap_err();
        assert!(matches!(err, ModelError::Schema { line: 1, .. }), "{err}");
    }

    #[test]
    fn alloc_with_zero_size_rejected() {
        let text = r#"{"tick":1,"kind":"Alloc","site":1,"addr":2,"size":0,"type_id":1,"allocator":"Slab"}"#;
        assert!(parse_trace(text.as_bytes()).is_err());
    }

    /// Exhaustive required-field schema check: for every kind, dropping each
    /// required field must fail the parse.
    #[test]
    fn required_fields_enforced_for_every_kind() {
        use EventKind::*;
        let full = |kind: EventKind| {
            let mut ev = TraceEvent::new(1, kind);
            ev.site = Some(10);
            ev.addr = Some(20);
            ev.size = Some(8);
            ev.type_id = Some(1);
            ev.allocator = Some(AllocatorKind::Slab);
            ev.value = Some(30);
            ev
        };
        let required: &[(EventKind, &[&str])] = &[
            (Alloc, &["site", "addr", "size", "type_id", "allocator"]),
            (Free, &["addr"]),
            (Read, &["site", "addr", "size"]),
            (Write, &["site", "addr", "size"]),
            (IndirectCall, &["site", "value"]),
            (IndirectJump, &["site", "value"]),
            (Return, &["site", "value"]),
            (DirectCall, &["site"]),
            (EnterCompartment, &["site"]),
            (ExitCompartment, &["site"]),
            (ArgPass, &["site", "value"]),
            (ReturnValue, &["site", "value"]),
        ];
        for (kind, fields) in required {
            let ok = serde_json::to_string(&full(*kind)).unwrap();
            assert!(parse_trace(ok.as_bytes()).is_ok(), "{kind:?} full event should parse");
            for field in *fields {
                let mut v: serde_json::Value = serde_json::from_str(&ok).unwrap();
                v.as_object_mut().unwrap().remove(*field);
                let text = serde_json::to_string(&v).unwrap();
                assert!(
                    parse_trace(text.as_bytes()).is_err(),
                    "{kind:?} without {field} should be rejected"
                );
            }
        }
    }

    #[test]
    fn payload_round_trips_as_lowercase_hex() {
        let mut ev = TraceEvent::new(3, EventKind::Free);
        ev.addr = Some(0x100);
        ev.payload = Some(vec![0xde, 0xad, 0x00, 0x01]);
        let text = serde_json::to_string(&ev).unwrap();
        assert!(text.contains("\"dead0001\""), "{text}");
        let back: TraceEvent = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ev);
    }
}
