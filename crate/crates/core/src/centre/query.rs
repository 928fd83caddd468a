//! Dashboard queries. All of them are pure functions of the read model.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::state::{CentreState, Counters, PatientRecord};
use crate::model::{
    ActionItem, CategoryCounts, Eligibility, MonitoringSchedule, PatientId, PatientStatus, Timestamp,
    TriageCategory,
};
use crate::store::{export, Event, EventKind};

pub const PAGE_SIZE: usize = 50;

/// Symptoms shown on the board.
pub const KEY_SYMPTOMS: [&str; 2] = ["temperature_c", "dyspnea"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentreStats {
    /// Category histogram of patients under monitoring.
    pub counts: CategoryCounts,
    pub overdue: u64,
    pub open_actions: u64,
    pub monitoring: u64,
    /// Every patient ever enrolled, whatever their status.
    pub enrolled_total: u64,
    pub totals: Counters,
}

pub fn stats(state: &CentreState) -> CentreStats {
    let mut counts = CategoryCounts::default();
    let mut overdue = 0;
    let mut monitoring = 0;
    for p in state.patients.values().filter(|p| p.patient.status == PatientStatus::Monitoring) {
        counts.add(p.patient.current_category);
        overdue += u64::from(p.patient.overdue);
        monitoring += 1;
    }
    CentreStats {
        counts,
        overdue,
        open_actions: state.actions.values().filter(|a| a.is_open()).count() as u64,
        monitoring,
        enrolled_total: state.patients.len() as u64,
        totals: state.counters.clone(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientFilter {
    pub category: Option<TriageCategory>,
    pub overdue: Option<bool>,
    pub needs_action: Option<bool>,
    pub status: Option<PatientStatus>,
    /// Case-insensitive substring of the patient id, or an exact external reference.
    pub search: Option<String>,
}

/// One board row. Carries no contact handles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub patient_id: PatientId,
    pub category: TriageCategory,
    pub overdue: bool,
    pub status: PatientStatus,
    pub last_report_at: Option<Timestamp>,
    pub key_symptoms: Vec<(String, f64)>,
    pub open_actions: u32,
    pub reports_per_day: u32,
    pub escalated: bool,
}

impl PatientRow {
    pub fn of(r: &PatientRecord) -> Self {
        let key_symptoms = r
            .last_report
            .as_ref()
            .map(|rep| KEY_SYMPTOMS.iter().filter_map(|k| rep.value(k).map(|v| ((*k).to_owned(), v))).collect())
            .unwrap_or_default();
        PatientRow {
            patient_id: r.patient.patient_id.clone(),
            category: r.patient.current_category,
            overdue: r.patient.overdue,
            status: r.patient.status,
            last_report_at: r.last_report_at(),
            key_symptoms,
            open_actions: r.open_actions,
            reports_per_day: r.patient.schedule.reports_per_day,
            escalated: r.patient.schedule.escalated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub rows: Vec<PatientRow>,
    pub total: usize,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid cursor")]
pub struct BadCursor;

fn encode_cursor(offset: usize) -> String {
    URL_SAFE_NO_PAD.encode(format!("o:{offset}"))
}

fn decode_cursor(c: &str) -> Result<usize, BadCursor> {
    let bytes = URL_SAFE_NO_PAD.decode(c).map_err(|_| BadCursor)?;
    let s = String::from_utf8(bytes).map_err(|_| BadCursor)?;
    s.strip_prefix("o:").and_then(|n| n.parse().ok()).ok_or(BadCursor)
}

fn matches(f: &PatientFilter, r: &PatientRecord) -> bool {
    let p = &r.patient;
    f.category.is_none_or(|c| c == p.current_category)
        && f.overdue.is_none_or(|o| o == p.overdue)
        && f.needs_action.is_none_or(|n| n == (r.open_actions > 0))
        && f.status.is_none_or(|s| s == p.status)
        && f.search.as_deref().map(str::trim).filter(|s| !s.is_empty()).is_none_or(|s| {
            p.patient_id.as_str().to_lowercase().contains(&s.to_lowercase()) || r.external_ref == s
        })
}

/// Filtered rows, most severe first, then longest without a report
/// (never reported first), then by id.
pub fn list_patients(state: &CentreState, filter: &PatientFilter, cursor: Option<&str>) -> Result<Page, BadCursor> {
    let offset = cursor.map(decode_cursor).transpose()?.unwrap_or(0);
    let mut hits: Vec<&PatientRecord> = state.patients.values().filter(|r| matches(filter, r)).collect();
    hits.sort_by(|a, b| {
        b.patient
            .current_category
            .cmp(&a.patient.current_category)
            .then_with(|| a.last_report_at().cmp(&b.last_report_at()))
            .then_with(|| a.patient.patient_id.cmp(&b.patient.patient_id))
    });
    let total = hits.len();
    let rows: Vec<PatientRow> = hits.iter().skip(offset).take(PAGE_SIZE).map(|r| PatientRow::of(r)).collect();
    let end = offset + rows.len();
    Ok(Page { rows, total, next_cursor: (end < total).then(|| encode_cursor(end)) })
}

/// One entry of a patient's timeline: an event with identifiers stripped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub seq: u64,
    pub at: Timestamp,
    pub kind: String,
    pub detail: Value,
}

pub fn timeline_entry(e: &Event) -> TimelineEntry {
    let row = export::export_row(e);
    TimelineEntry { seq: e.seq, at: e.at, kind: row.kind, detail: serde_json::from_str(&row.payload).unwrap_or(Value::Null) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDetail {
    pub row: PatientRow,
    pub enrolled_at: Timestamp,
    pub eligibility: Eligibility,
    pub schedule: MonitoringSchedule,
    pub has_gp_contact: bool,
    pub actions: Vec<ActionItem>,
    pub timeline: Vec<TimelineEntry>,
}

/// `events` must be the patient's events in log order.
pub fn patient_detail(state: &CentreState, id: &PatientId, events: &[Event]) -> Option<PatientDetail> {
    let r = state.patient(id)?;
    Some(PatientDetail {
        row: PatientRow::of(r),
        enrolled_at: r.patient.enrolled_at,
        eligibility: r.patient.eligibility,
        schedule: r.patient.schedule.clone(),
        has_gp_contact: r.patient.gp_contact.is_some(),
        actions: state.actions.values().filter(|a| &a.patient_id == id).cloned().collect(),
        timeline: events.iter().map(timeline_entry).collect(),
    })
}

/// A state-change notification for dashboards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    pub seq: u64,
    pub at: Timestamp,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<PatientId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<TriageCategory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<PatientStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionItem>,
}

impl FeedItem {
    /// `None` for events that change nothing on the board (messages, rejections).
    pub fn from_event(e: &Event) -> Option<Self> {
        let mut item = FeedItem {
            seq: e.seq,
            at: e.at,
            kind: e.kind.name().to_owned(),
            patient_id: e.patient_id.clone(),
            category: None,
            status: None,
            action: None,
        };
        match &e.kind {
            EventKind::MessageSent { .. } | EventKind::GpSummarySent { .. } | EventKind::CommandRejected { .. } => {
                return None
            }
            EventKind::ReportReceived { category, .. } => item.category = Some(*category),
            EventKind::FlagChanged { to, .. } => item.category = Some(*to),
            EventKind::StatusChanged { to, .. } => item.status = Some(*to),
            EventKind::ActionCreated { action } => item.action = Some(action.clone()),
            _ => {}
        }
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_round_trips_and_rejects_garbage() {
        assert_eq!(decode_cursor(&encode_cursor(150)), Ok(150));
        assert_eq!(decode_cursor("!!"), Err(BadCursor));
        assert_eq!(decode_cursor(&URL_SAFE_NO_PAD.encode("x:1")), Err(BadCursor));
    }

    #[test]
    fn empty_centre_has_zero_stats() {
        let s = stats(&CentreState::default());
        assert_eq!(s.counts, CategoryCounts::default());
        assert_eq!((s.overdue, s.open_actions, s.monitoring, s.enrolled_total), (0, 0, 0, 0));
    }
}
