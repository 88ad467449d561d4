//! Ingested state files.
//!
//! A state file is JSON-lines: a header naming the last sealed epoch, then
//! every accepted stream record. Mutation records carry the version the
//! ingest node assigned under `applied_at`; loading replays the records and
//! rejects a file whose versions no longer line up.

use protoflow_core::stream::{replay, Ingested};
use protoflow_core::{EpochId, IngestError, IngestNode, Replayed, StreamRecord, Version};
use serde_json::{json, Map, Value};

const FORMAT: &str = "protoflow-state";
/// Key of the stamped version. Declarations already use `version`.
const STAMP: &str = "applied_at";

fn bad(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse { line, message: message.into() }
}

/// Renders `records` (already validated) as a state file.
pub fn render(records: &[StreamRecord]) -> Result<String, IngestError> {
    let mut node = IngestNode::new();
    let mut sealed: Option<EpochId> = None;
    let mut body = String::new();
    for rec in records {
        let mut line = serde_json::to_value(rec).expect("records serialize");
        match node.ingest(rec)? {
            Ingested::Mutation(m) => {
                line.as_object_mut().expect("record object").insert(STAMP.into(), json!(m.version));
            }
            Ingested::EpochClosed(e) => sealed = Some(e),
            Ingested::Declared(_) => {}
        }
        body.push_str(&line.to_string());
        body.push('\n');
    }
    let header = json!({ "format": FORMAT, "sealed": sealed, "records": records.len() });
    Ok(format!("{header}\n{body}"))
}

/// Parses a state file back into records, checking every stamped version.
pub fn load(text: &str) -> Result<(Vec<StreamRecord>, Replayed), IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty state file"))?;
    let header: Map<String, Value> = serde_json::from_str(header).map_err(|e| bad(1, e.to_string()))?;
    if header.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(bad(1, format!("not a {FORMAT} file")));
    }
    let mut records = Vec::new();
    let mut stamps = Vec::new();
    for (i, line) in lines {
        let mut obj: Map<String, Value> = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
        let stamp = match obj.remove(STAMP) {
            Some(v) => Some(serde_json::from_value::<Version>(v).map_err(|e| bad(i + 1, e.to_string()))?),
            None => None,
        };
        let rec: StreamRecord = serde_json::from_value(Value::Object(obj)).map_err(|e| bad(i + 1, e.to_string()))?;
        records.push(rec);
        stamps.push((i + 1, stamp));
    }
    let replayed = replay(&records)?;
    let mut versions = replayed.mutations.iter().map(|m| m.version);
    for (line, stamp) in stamps.into_iter().filter(|(_, s)| s.is_some()) {
        let actual = versions.next();
        if actual != stamp {
            return Err(bad(line, format!("stored version {stamp:?} but replay assigns {actual:?}")));
        }
    }
    if versions.next().is_some() {
        return Err(bad(0, "mutation without a stored version"));
    }
    let sealed = header.get("sealed").and_then(Value::as_u64);
    if sealed != replayed.sealed {
        return Err(bad(1, format!("header says sealed {sealed:?}, records seal {:?}", replayed.sealed)));
    }
    Ok((records, replayed))
}
