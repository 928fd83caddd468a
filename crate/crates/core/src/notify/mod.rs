//! Outbound communications: questionnaire links, automatic reassurance,
//! GP enrollment notices and per-report GP summaries.
//!
//! Bodies never carry the patient's contact handle; recipients are set on
//! the envelope only.

mod gateway;

pub use gateway::{FileGateway, GatewayError, MemoryGateway, MessageGateway, NullGateway, StdoutGateway};

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ActionId, ActionKind, ActionStatus, ActionTrigger, DispatchId, MessageId, Patient, PatientId,
    Timestamp, TriageCategory,
};

/// SMS bodies longer than this are refused.
pub const SMS_MAX_CHARS: usize = 480;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Sms,
    GpChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryState {
    Pending,
    Sent,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundMessage {
    pub message_id: MessageId,
    pub channel: Channel,
    pub recipient: String,
    pub body: String,
    pub related_patient_id: PatientId,
    pub created_at: Timestamp,
    pub delivery_state: DeliveryState,
    #[serde(default)]
    pub attempts: u32,
}

impl OutboundMessage {
    fn pending(channel: Channel, recipient: &str, body: String, patient: &PatientId, now: Timestamp) -> Self {
        OutboundMessage {
            message_id: MessageId::random(),
            channel,
            recipient: recipient.to_owned(),
            body,
            related_patient_id: patient.clone(),
            created_at: now,
            delivery_state: DeliveryState::Pending,
            attempts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotifyError {
    #[error("SMS body is {0} characters, over the {SMS_MAX_CHARS} limit")]
    BodyTooLong(usize),
    #[error("patient {0} has no GP contact")]
    MissingGpContact(PatientId),
}

/// An action transition reported to the GP in the next summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDigest {
    pub action_id: ActionId,
    pub trigger: ActionTrigger,
    pub kind: ActionKind,
    pub status: ActionStatus,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpSummary {
    pub patient_id: PatientId,
    /// The dispatch answered by the report; one summary per report.
    pub report_id: DispatchId,
    pub report_at: Timestamp,
    pub category: TriageCategory,
    pub category_change: bool,
    pub fired_rules: Vec<String>,
    pub actions: Vec<ActionDigest>,
}

pub fn render_questionnaire_sms(
    patient: &Patient,
    link: &str,
    now: Timestamp,
) -> Result<OutboundMessage, NotifyError> {
    let body = format!(
        "Command Centre follow-up: please answer your short health questionnaire. \
         Secure link, valid 24h, no login needed: {link}\n\
         In an emergency, call the Command Centre or the national emergency number."
    );
    let len = body.chars().count();
    if len > SMS_MAX_CHARS {
        return Err(NotifyError::BodyTooLong(len));
    }
    Ok(OutboundMessage::pending(Channel::Sms, &patient.phone, body, &patient.patient_id, now))
}

/// Reassurance text for Green and Yellow; clinicians take over from Orange up.
pub fn auto_reassure(category: TriageCategory) -> Option<&'static str> {
    match category {
        TriageCategory::Green => Some(
            "Thank you. Your answers show no warning signs. Keep following your quarantine \
             instructions and please keep answering the questionnaires.",
        ),
        TriageCategory::Yellow => Some(
            "Thank you. Your condition looks stable. Keep following your quarantine \
             instructions and please keep answering the questionnaires. If you feel worse, \
             contact the Command Centre.",
        ),
        TriageCategory::Orange | TriageCategory::Red => None,
    }
}

pub fn reassurance_message(patient: &Patient, category: TriageCategory, now: Timestamp) -> Option<OutboundMessage> {
    auto_reassure(category).map(|body| {
        OutboundMessage::pending(Channel::Sms, &patient.phone, body.to_owned(), &patient.patient_id, now)
    })
}

fn summary_body(s: &GpSummary) -> String {
    let mut body = format!(
        "Remote monitoring summary for patient {} ({}): status {}",
        s.patient_id,
        s.report_at.format("%Y-%m-%d %H:%M UTC"),
        s.category
    );
    if s.category_change {
        body.push_str(" (changed)");
    }
    body.push_str(&format!(". Rules: {}.", s.fired_rules.join(", ")));
    if s.actions.is_empty() {
        body.push_str(" No Command Centre actions since the last summary.");
    } else {
        let acts: Vec<String> = s
            .actions
            .iter()
            .map(|a| format!("{} {:?}/{:?} {:?}", a.action_id, a.trigger, a.kind, a.status))
            .collect();
        body.push_str(&format!(" Actions: {}.", acts.join("; ")));
    }
    body
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_secs(1), multiplier: 4 }
    }
}

impl RetryPolicy {
    /// Wait before attempt `n` (1-based); zero before the first.
    pub fn backoff_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            Duration::ZERO
        } else {
            self.initial_backoff * self.multiplier.pow(attempt - 2)
        }
    }
}

pub trait Sleeper: Send {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Skips backoff waits; for simulated time.
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _d: Duration) {}
}

pub struct Notifier {
    gateway: Box<dyn MessageGateway>,
    retry: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
    dead_letters: Vec<OutboundMessage>,
    enrollment_notified: HashSet<PatientId>,
    summarized: HashSet<DispatchId>,
}

impl Notifier {
    pub fn new(gateway: Box<dyn MessageGateway>, retry: RetryPolicy, sleeper: Box<dyn Sleeper>) -> Self {
        Notifier {
            gateway,
            retry,
            sleeper,
            dead_letters: Vec::new(),
            enrollment_notified: HashSet::new(),
            summarized: HashSet::new(),
        }
    }

    /// No backoff waits; suited to tests and simulated clocks.
    pub fn immediate(gateway: Box<dyn MessageGateway>) -> Self {
        Self::new(gateway, RetryPolicy::default(), Box::new(NoSleep))
    }

    pub fn dead_letters(&self) -> &[OutboundMessage] {
        &self.dead_letters
    }

    /// Restores dedup memory after a restart.
    pub fn mark_enrollment_notified(&mut self, patient: &PatientId) {
        self.enrollment_notified.insert(patient.clone());
    }

    pub fn mark_summarized(&mut self, report: &DispatchId) {
        self.summarized.insert(report.clone());
    }

    /// Delivers through the gateway with bounded retries. Gateway errors end
    /// up in `delivery_state`; exhausted messages are dead-lettered.
    pub fn send(&mut self, mut msg: OutboundMessage) -> OutboundMessage {
        if msg.delivery_state != DeliveryState::Pending {
            return msg;
        }
        for attempt in 1..=self.retry.max_attempts {
            self.sleeper.sleep(self.retry.backoff_before(attempt));
            msg.attempts = attempt;
            if self.gateway.deliver(&msg).is_ok() {
                msg.delivery_state = DeliveryState::Sent;
                return msg;
            }
        }
        msg.delivery_state = DeliveryState::Failed;
        self.dead_letters.push(msg.clone());
        msg
    }

    /// Tells the GP their patient is now monitored at home. `Ok(None)` when
    /// the patient was already announced.
    pub fn notify_gp_enrollment(
        &mut self,
        patient: &Patient,
        now: Timestamp,
    ) -> Result<Option<OutboundMessage>, NotifyError> {
        if self.enrollment_notified.contains(&patient.patient_id) {
            return Ok(None);
        }
        let gp = patient
            .gp_contact
            .as_deref()
            .ok_or_else(|| NotifyError::MissingGpContact(patient.patient_id.clone()))?;
        let body = format!(
            "Your patient {} has been confirmed with Covid-19 and is now being monitored at home \
             by the hospital Command Centre. You will receive a summary after each questionnaire.",
            patient.patient_id
        );
        let msg = OutboundMessage::pending(Channel::GpChannel, gp, body, &patient.patient_id, now);
        self.enrollment_notified.insert(patient.patient_id.clone());
        Ok(Some(self.send(msg)))
    }

    /// Sends the per-report GP summary. Exactly once per report id: `None`
    /// on a repeat. A missing GP contact yields a failed, dead-lettered message.
    pub fn emit_gp_summary(
        &mut self,
        patient: &Patient,
        summary: GpSummary,
        now: Timestamp,
    ) -> Option<(GpSummary, OutboundMessage)> {
        if !self.summarized.insert(summary.report_id.clone()) {
            return None;
        }
        let body = summary_body(&summary);
        let msg = match patient.gp_contact.as_deref() {
            Some(gp) => {
                self.send(OutboundMessage::pending(Channel::GpChannel, gp, body, &patient.patient_id, now))
            }
            None => {
                let mut m = OutboundMessage::pending(Channel::GpChannel, "", body, &patient.patient_id, now);
                m.delivery_state = DeliveryState::Failed;
                self.dead_letters.push(m.clone());
                m
            }
        };
        Some((summary, msg))
    }
}
