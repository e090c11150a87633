//! Replay verdicts, one JSON object per line (`.o2cverdicts.jsonl`).

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    Allow,
    Deny,
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationReason {
    CfiViolation,
    UnknownSite,
    ProtocolViolation,
    OverlapViolation,
    InvalidFree,
    DoubleFree,
    UseAfterFree,
    TypeMismatch,
    BoundsViolation,
    WildAddress,
    PolicyViolation,
    ConfusedDeputy,
    IagoViolation,
}

/// One replay decision. Deny/Audit always carry a reason; audition results
/// are flagged `async` because the live system logs them off the hot path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub tick: u64,
    pub site: u64,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ViolationReason>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(rename = "async", default, skip_serializing_if = "std::ops::Not::not")]
    pub asynchronous: bool,
}

impl Verdict {
    pub fn allow(tick: u64, site: u64, detail: impl Into<String>) -> Self {
        Verdict { tick, site, decision: Decision::Allow, reason: None, detail: detail.into(), asynchronous: false }
    }

    pub fn deny(tick: u64, site: u64, reason: ViolationReason, detail: impl Into<String>) -> Self {
        Verdict { tick, site, decision: Decision::Deny, reason: Some(reason), detail: detail.into(), asynchronous: false }
    }

    pub fn audit(tick: u64, site: u64, reason: ViolationReason, detail: impl Into<String>) -> Self {
        Verdict { tick, site, decision: Decision::Audit, reason: Some(reason), detail: detail.into(), asynchronous: true }
    }
}

pub fn serialize_verdicts(verdicts: &[Verdict]) -> String {
    let mut s = String::new();
    for v in verdicts {
        s.push_str(&serde_json::to_string(v).expect("verdict serializes"));
        s.push('\n');
    }
    s
}

pub fn parse_verdicts<R: BufRead>(reader: R) -> Result<Vec<Verdict>, ModelError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(&line)
            .map_err(|source| ModelError::Malformed { line: idx + 1, source })?;
        out.push(v);
    }
    Ok(out)
}
