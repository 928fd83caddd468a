use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    ActionId, ActionItem, ActionKind, Answer, DispatchId, Eligibility, MonitoringSchedule,
    PatientId, PatientStatus, Timestamp, TriageCategory,
};
use crate::notify::{GpSummary, OutboundMessage};

/// An immutable entry of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<PatientId>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// An event before the store numbers it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub at: Timestamp,
    pub patient_id: Option<PatientId>,
    pub kind: EventKind,
}

impl EventDraft {
    pub fn patient(patient_id: &PatientId, at: Timestamp, kind: EventKind) -> Self {
        EventDraft { at, patient_id: Some(patient_id.clone()), kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleReason {
    Escalated,
    Deescalated,
    Intensified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePurpose {
    GpEnrollment,
    Reassurance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Enrolled {
        external_ref: String,
        phone: String,
        gp_contact: Option<String>,
        eligibility: Eligibility,
        schedule: MonitoringSchedule,
    },
    Dispatched {
        dispatch_id: DispatchId,
        token_hash: String,
        expires_at: Timestamp,
        next_dispatch_at: Timestamp,
        /// The SMS with its link redacted.
        message: OutboundMessage,
    },
    ReportReceived {
        dispatch_id: DispatchId,
        token_hash: String,
        answers: BTreeMap<String, Answer>,
        category: TriageCategory,
        fired_rules: Vec<String>,
        ruleset_version: String,
    },
    FlagChanged {
        from: TriageCategory,
        to: TriageCategory,
        ruleset_version: String,
    },
    ScheduleChanged {
        schedule: MonitoringSchedule,
        reason: ScheduleReason,
    },
    OverdueDetected {
        dispatch_id: DispatchId,
        sent_at: Timestamp,
    },
    ActionCreated {
        action: ActionItem,
    },
    ActionAcknowledged {
        action_id: ActionId,
    },
    ActionResolved {
        action_id: ActionId,
        kind: ActionKind,
        note: String,
    },
    StatusChanged {
        from: PatientStatus,
        to: PatientStatus,
    },
    MessageSent {
        purpose: MessagePurpose,
        message: OutboundMessage,
    },
    GpSummarySent {
        summary: GpSummary,
        message: OutboundMessage,
    },
    /// A command that failed part-way; nothing else from it was recorded.
    CommandRejected {
        command: String,
        code: String,
        detail: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Enrolled { .. } => "enrolled",
            EventKind::Dispatched { .. } => "dispatched",
            EventKind::ReportReceived { .. } => "report_received",
            EventKind::FlagChanged { .. } => "flag_changed",
            EventKind::ScheduleChanged { .. } => "schedule_changed",
            EventKind::OverdueDetected { .. } => "overdue_detected",
            EventKind::ActionCreated { .. } => "action_created",
            EventKind::ActionAcknowledged { .. } => "action_acknowledged",
            EventKind::ActionResolved { .. } => "action_resolved",
            EventKind::StatusChanged { .. } => "status_changed",
            EventKind::MessageSent { .. } => "message_sent",
            EventKind::GpSummarySent { .. } => "gp_summary_sent",
            EventKind::CommandRejected { .. } => "command_rejected",
        }
    }
}
