//! Pseudonymized research export of the event log.

use std::io::Write;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Event, EventStore, StoreError};

/// Payload keys that hold direct identifiers or contact handles.
pub const REDACTED_KEYS: [&str; 4] = ["phone", "recipient", "gp_contact", "external_ref"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format {other:?}; expected jsonl or csv")),
        }
    }
}

/// One exported event. `payload` is the event payload as compact JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub seq: u64,
    pub at: String,
    pub patient_id: String,
    pub kind: String,
    pub payload: String,
}

fn scrub(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !REDACTED_KEYS.contains(&k.as_str()));
            map.values_mut().for_each(scrub);
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        _ => {}
    }
}

pub fn export_row(event: &Event) -> ExportRow {
    let mut json = serde_json::to_value(event).expect("events serialize");
    let mut payload = json.get_mut("payload").map(Value::take).unwrap_or(Value::Null);
    scrub(&mut payload);
    ExportRow {
        seq: event.seq,
        at: event.at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        patient_id: event.patient_id.as_ref().map(|p| p.to_string()).unwrap_or_default(),
        kind: event.kind.name().to_owned(),
        payload: payload.to_string(),
    }
}

/// Writes every event whose seq falls in `range`; returns the row count.
pub fn export(
    store: &EventStore,
    range: RangeInclusive<u64>,
    format: ExportFormat,
    out: impl Write,
) -> Result<u64, StoreError> {
    let mut rows = 0u64;
    let start = range.start().saturating_sub(1);
    let mut result = Ok(());
    match format {
        ExportFormat::Jsonl => {
            let mut out = out;
            store.for_each_after(start, |e| {
                if result.is_ok() && range.contains(&e.seq) {
                    let line = serde_json::to_string(&export_row(e)).expect("rows serialize");
                    result = writeln!(out, "{line}");
                    rows += 1;
                }
            })?;
            result?;
            out.flush()?;
        }
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let mut csv_result = Ok(());
            store.for_each_after(start, |e| {
                if csv_result.is_ok() && range.contains(&e.seq) {
                    csv_result = w.serialize(export_row(e));
                    rows += 1;
                }
            })?;
            csv_result.map_err(|e| StoreError::StorageFailure(e.to_string()))?;
            w.flush()?;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Eligibility, MonitoringSchedule, PatientId, TriageCategory};
    use crate::store::{EventDraft, EventKind};

    fn store(n: u64) -> EventStore {
        let t = "2020-03-09T08:00:00Z".parse().unwrap();
        let mut s = EventStore::in_memory();
        for i in 0..n {
            let p = PatientId::new(format!("p{}", i % 7));
            let kind = if i % 3 == 0 {
                EventKind::Enrolled {
                    external_ref: format!("MRN-{i}"),
                    phone: "+33600000000".into(),
                    gp_contact: Some("gp@example.org".into()),
                    eligibility: Eligibility::all_true(),
                    schedule: MonitoringSchedule::baseline(2, t).unwrap(),
                }
            } else {
                EventKind::FlagChanged {
                    from: TriageCategory::Green,
                    to: TriageCategory::Yellow,
                    ruleset_version: "default-v1".into(),
                }
            };
            s.append(EventDraft::patient(&p, t, kind)).unwrap();
        }
        s
    }

    #[test]
    fn row_count_matches_event_count() {
        let s = store(100);
        let mut buf = Vec::new();
        assert_eq!(export(&s, 1..=100, ExportFormat::Jsonl, &mut buf).unwrap(), 100);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 100);
        let mut buf = Vec::new();
        assert_eq!(export(&s, 11..=20, ExportFormat::Csv, &mut buf).unwrap(), 10);
    }

    #[test]
    fn csv_and_jsonl_agree() {
        let s = store(30);
        let (mut j, mut c) = (Vec::new(), Vec::new());
        export(&s, 1..=30, ExportFormat::Jsonl, &mut j).unwrap();
        export(&s, 1..=30, ExportFormat::Csv, &mut c).unwrap();
        let from_jsonl: Vec<ExportRow> =
            String::from_utf8(j).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let from_csv: Vec<ExportRow> =
            csv::Reader::from_reader(&c[..]).deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(from_jsonl, from_csv);
    }

    #[test]
    fn identifiers_are_stripped() {
        let s = store(12);
        let mut j = Vec::new();
        export(&s, 1..=12, ExportFormat::Jsonl, &mut j).unwrap();
        let text = String::from_utf8(j).unwrap();
        for key in REDACTED_KEYS {
            assert!(!text.contains(&format!("\\\"{key}\\\"")), "{key} leaked");
        }
        assert!(!text.contains("+33600000000"));
        assert!(!text.contains("MRN-"));
        let mut c = Vec::new();
        export(&s, 1..=12, ExportFormat::Csv, &mut c).unwrap();
        let header = String::from_utf8(c).unwrap().lines().next().unwrap().to_owned();
        assert_eq!(header, "seq,at,patient_id,kind,payload");
    }
}
