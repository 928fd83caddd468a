use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    ActionId, ActionItem, ActionStatus, ActionTrigger, CategoryCounts, DispatchId, Patient,
    PatientId, PatientStatus, SymptomReport, Timestamp, TriageCategory,
};
use crate::notify::{ActionDigest, DeliveryState};
use crate::schedule::{OutstandingDispatch, MAX_CALM_STREAK};
use crate::store::{Event, EventKind, Fold, MessagePurpose};
use crate::token::{token_ttl, TokenRecord};

/// Everything the centre knows about one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient: Patient,
    pub external_ref: String,
    pub last_report: Option<SymptomReport>,
    /// Newest last, at most [`MAX_CALM_STREAK`] entries.
    pub recent_categories: Vec<TriageCategory>,
    pub outstanding: Vec<OutstandingDispatch>,
    pub dispatch_count: u64,
    pub report_count: u64,
    pub open_actions: u32,
    /// Action transitions not yet reported to the GP.
    pub pending_digest: Vec<ActionDigest>,
    pub gp_notified: bool,
    /// Hashes of this patient's live tokens.
    pub tokens: Vec<String>,
}

impl PatientRecord {
    pub fn last_report_at(&self) -> Option<Timestamp> {
        self.last_report.as_ref().map(|r| r.received_at)
    }
}

/// Running totals over the whole log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub events: u64,
    pub enrolled: u64,
    pub dispatches: u64,
    pub reports: CategoryCounts,
    pub flag_changes: u64,
    pub overdue_detections: u64,
    pub actions_created: u64,
    pub actions_by_trigger: BTreeMap<ActionTrigger, u64>,
    pub actions_resolved: u64,
    pub automatic_messages: u64,
    pub gp_enrollment_notices: u64,
    pub gp_summaries: u64,
    pub failed_messages: u64,
    pub rejected_commands: u64,
}

impl Counters {
    pub fn actions_for(&self, trigger: ActionTrigger) -> u64 {
        self.actions_by_trigger.get(&trigger).copied().unwrap_or(0)
    }
}

/// The read model: a pure fold over the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CentreState {
    pub last_seq: u64,
    pub patients: BTreeMap<PatientId, PatientRecord>,
    pub external_refs: BTreeMap<String, PatientId>,
    pub tokens: BTreeMap<String, TokenRecord>,
    pub actions: BTreeMap<ActionId, ActionItem>,
    pub counters: Counters,
}

impl CentreState {
    pub fn patient(&self, id: &PatientId) -> Option<&PatientRecord> {
        self.patients.get(id)
    }

    fn digest(&mut self, action_id: &ActionId, at: Timestamp) {
        let Some(a) = self.actions.get(action_id) else { return };
        let d = ActionDigest { action_id: a.action_id.clone(), trigger: a.trigger, kind: a.kind, status: a.status, at };
        if let Some(p) = self.patients.get_mut(&a.patient_id) {
            p.pending_digest.push(d);
        }
    }

    fn count_message(&mut self, state: DeliveryState) {
        if state == DeliveryState::Failed {
            self.counters.failed_messages += 1;
        }
    }
}

impl Fold for CentreState {
    fn apply(&mut self, event: &Event) {
        self.last_seq = event.seq;
        self.counters.events += 1;
        let at = event.at;
        let pid = event.patient_id.as_ref();
        match &event.kind {
            EventKind::Enrolled { external_ref, phone, gp_contact, eligibility, schedule } => {
                let Some(pid) = pid else { return };
                let patient = Patient {
                    patient_id: pid.clone(),
                    phone: phone.clone(),
                    gp_contact: gp_contact.clone(),
                    enrolled_at: at,
                    eligibility: *eligibility,
                    schedule: schedule.clone(),
                    current_category: TriageCategory::Green,
                    overdue: false,
                    status: PatientStatus::Enrolled,
                };
                self.external_refs.insert(external_ref.clone(), pid.clone());
                self.patients.insert(
                    pid.clone(),
                    PatientRecord {
                        patient,
                        external_ref: external_ref.clone(),
                        last_report: None,
                        recent_categories: Vec::new(),
                        outstanding: Vec::new(),
                        dispatch_count: 0,
                        report_count: 0,
                        open_actions: 0,
                        pending_digest: Vec::new(),
                        gp_notified: false,
                        tokens: Vec::new(),
                    },
                );
                self.counters.enrolled += 1;
            }
            EventKind::StatusChanged { to, .. } => {
                if let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) {
                    p.patient.status = *to;
                }
            }
            EventKind::Dispatched { dispatch_id, token_hash, expires_at, next_dispatch_at, message } => {
                self.counters.dispatches += 1;
                self.count_message(message.delivery_state);
                let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) else { return };
                p.dispatch_count += 1;
                p.patient.schedule.next_dispatch_at = *next_dispatch_at;
                p.outstanding.push(OutstandingDispatch {
                    dispatch_id: dispatch_id.clone(),
                    sent_at: at,
                    overdue_reported: false,
                });
                // Forget tokens a full TTL after they expired; they can no longer matter.
                let tokens = &mut self.tokens;
                p.tokens.retain(|h| match tokens.get(h) {
                    Some(r) if r.expires_at + token_ttl() < at => {
                        tokens.remove(h);
                        false
                    }
                    Some(_) => true,
                    None => false,
                });
                p.tokens.push(token_hash.clone());
                self.tokens.insert(
                    token_hash.clone(),
                    TokenRecord {
                        token_hash: token_hash.clone(),
                        patient_id: p.patient.patient_id.clone(),
                        dispatch_id: dispatch_id.clone(),
                        issued_at: at,
                        expires_at: *expires_at,
                        consumed: false,
                    },
                );
            }
            EventKind::ReportReceived { dispatch_id, token_hash, answers, category, .. } => {
                self.counters.reports.add(*category);
                if let Some(t) = self.tokens.get_mut(token_hash) {
                    t.consumed = true;
                }
                let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) else { return };
                p.outstanding.retain(|d| &d.dispatch_id != dispatch_id);
                p.patient.overdue = false;
                p.patient.current_category = *category;
                p.last_report = Some(SymptomReport {
                    patient_id: p.patient.patient_id.clone(),
                    received_at: at,
                    answers: answers.clone(),
                });
                p.recent_categories.push(*category);
                if p.recent_categories.len() > MAX_CALM_STREAK {
                    p.recent_categories.remove(0);
                }
                p.report_count += 1;
            }
            EventKind::FlagChanged { to, .. } => {
                self.counters.flag_changes += 1;
                if let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) {
                    p.patient.current_category = *to;
                }
            }
            EventKind::ScheduleChanged { schedule, .. } => {
                if let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) {
                    p.patient.schedule = schedule.clone();
                }
            }
            EventKind::OverdueDetected { dispatch_id, .. } => {
                self.counters.overdue_detections += 1;
                if let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) {
                    p.outstanding.retain(|d| &d.dispatch_id != dispatch_id);
                    p.patient.overdue = true;
                }
            }
            EventKind::ActionCreated { action } => {
                self.counters.actions_created += 1;
                *self.counters.actions_by_trigger.entry(action.trigger).or_default() += 1;
                if let Some(p) = self.patients.get_mut(&action.patient_id) {
                    p.open_actions += 1;
                }
                self.actions.insert(action.action_id.clone(), action.clone());
                self.digest(&action.action_id, at);
            }
            EventKind::ActionAcknowledged { action_id } => {
                if let Some(a) = self.actions.get_mut(action_id) {
                    a.status = ActionStatus::Acknowledged;
                }
                self.digest(action_id, at);
            }
            EventKind::ActionResolved { action_id, kind, note } => {
                self.counters.actions_resolved += 1;
                if let Some(a) = self.actions.get_mut(action_id) {
                    a.status = ActionStatus::Resolved;
                    a.resolution_kind = Some(*kind);
                    a.resolution_note = Some(note.clone());
                    if let Some(p) = self.patients.get_mut(&a.patient_id) {
                        p.open_actions = p.open_actions.saturating_sub(1);
                    }
                }
                self.digest(action_id, at);
            }
            EventKind::MessageSent { purpose, message } => {
                self.count_message(message.delivery_state);
                match purpose {
                    MessagePurpose::Reassurance => self.counters.automatic_messages += 1,
                    MessagePurpose::GpEnrollment => {
                        self.counters.gp_enrollment_notices += 1;
                        if let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) {
                            p.gp_notified = true;
                        }
                    }
                }
            }
            EventKind::GpSummarySent { message, .. } => {
                self.counters.gp_summaries += 1;
                self.count_message(message.delivery_state);
                if let Some(p) = pid.and_then(|id| self.patients.get_mut(id)) {
                    p.pending_digest.clear();
                }
            }
            EventKind::CommandRejected { .. } => self.counters.rejected_commands += 1,
        }
    }
}

/// Per-dispatch ids are `{patient_id}-{n}`, counting from 1.
pub(crate) fn dispatch_id(patient: &PatientId, n: u64) -> DispatchId {
    DispatchId::new(format!("{patient}-{n}"))
}
