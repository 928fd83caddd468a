//! The Command Centre engine: the single writer that turns commands into
//! events, plus the in-memory read model folded from them.
//!
//! Every command validates against the current state, performs its side
//! effects (outbound messages), appends all resulting events as one batch and
//! only then folds them into the state. A command that fails before the
//! append leaves no trace.

pub mod query;
mod state;

pub use query::{CentreStats, FeedItem, Page, PatientDetail, PatientFilter, PatientRow, TimelineEntry};
pub use state::{CentreState, Counters, PatientRecord};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_report, ActionError, ActionId, ActionItem, ActionKind, ActionTrigger, DispatchId,
    Eligibility, MonitoringSchedule, Patient, PatientId, PatientStatus, QuestionnaireDefinition,
    RawAnswers, ReportError, Timestamp, TriageCategory,
};
use crate::notify::{
    self, ActionDigest, DeliveryState, GpSummary, NotifyError, Notifier, NullGateway, OutboundMessage,
};
use crate::schedule::{ScheduleConfig, Scheduler, TickCommand, TickView};
use crate::store::{
    Event, EventDraft, EventKind, EventStore, Fold, MessagePurpose, ScheduleReason, StoreError,
};
use crate::token::{self, hash_token, TokenError};
use crate::triage::RuleSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentreSettings {
    /// Public base of questionnaire links, e.g. `https://centre.example.org`.
    pub base_url: String,
    pub scheduling: ScheduleConfig,
    /// Write a state snapshot every this many events; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for CentreSettings {
    fn default() -> Self {
        CentreSettings {
            base_url: "http://localhost:8080".into(),
            scheduling: ScheduleConfig::default(),
            snapshot_every: 10_000,
        }
    }
}

fn default_per_day() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollmentForm {
    /// Hospital-side reference (e.g. record number); unique per patient.
    pub external_ref: String,
    pub phone: String,
    #[serde(default)]
    pub gp_contact: Option<String>,
    pub eligibility: Eligibility,
    #[serde(default = "default_per_day")]
    pub reports_per_day: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transition", rename_all = "snake_case")]
pub enum ActTransition {
    Acknowledge,
    Resolve { kind: ActionKind, note: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub patient_id: PatientId,
    pub dispatch_id: DispatchId,
    pub category: TriageCategory,
    pub fired_rules: Vec<String>,
    pub message_to_patient: Option<String>,
}

/// A questionnaire sent by a tick. `link` holds the raw token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchNotice {
    pub patient_id: PatientId,
    pub dispatch_id: DispatchId,
    pub link: String,
    pub delivery_state: DeliveryState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverdueNotice {
    pub patient_id: PatientId,
    pub dispatch_id: DispatchId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub dispatches: Vec<DispatchNotice>,
    pub overdue: Vec<OverdueNotice>,
}

/// Test hook: fail a command at a chosen point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    AfterClassify,
}

#[derive(Debug, Error)]
pub enum CentreError {
    #[error("not eligible: {0} not met")]
    NotEligible(&'static str),
    #[error("a patient with this external reference is already enrolled")]
    DuplicatePatient,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("illegal transition: {0}")]
    IllegalTransition(String),
    #[error(transparent)]
    Storage(#[from] StoreError),
    #[error("internal failure: {0}")]
    Internal(String),
}

impl CentreError {
    /// Stable client-visible error code.
    pub fn code(&self) -> &'static str {
        match self {
            CentreError::NotEligible(_) => "not_eligible",
            CentreError::DuplicatePatient => "duplicate_patient",
            CentreError::InvalidRequest(_) => "invalid_request",
            CentreError::NotFound(_) => "not_found",
            CentreError::Token(t) => t.code(),
            CentreError::Report(r) => r.code(),
            CentreError::IllegalTransition(_) => "illegal_transition",
            CentreError::Storage(_) => "storage_failure",
            CentreError::Internal(_) => "internal_error",
        }
    }
}

impl From<ActionError> for CentreError {
    fn from(e: ActionError) -> Self {
        CentreError::IllegalTransition(e.to_string())
    }
}

pub type Listener = Box<dyn Fn(&[Event]) + Send + Sync>;

/// Events under construction for one command.
struct Batch {
    drafts: Vec<EventDraft>,
    next_action: u64,
}

impl Batch {
    fn new(state: &CentreState) -> Self {
        Batch { drafts: Vec::new(), next_action: state.counters.actions_created + 1 }
    }

    fn push(&mut self, patient: &PatientId, at: Timestamp, kind: EventKind) {
        self.drafts.push(EventDraft::patient(patient, at, kind));
    }

    fn action(&mut self, patient: &PatientId, at: Timestamp, trigger: ActionTrigger, kind: ActionKind) -> ActionItem {
        let id = ActionId::new(format!("A{}", self.next_action));
        self.next_action += 1;
        let action = ActionItem::open(id, patient.clone(), at, trigger, kind);
        self.push(patient, at, EventKind::ActionCreated { action: action.clone() });
        action
    }
}

fn digest(a: &ActionItem) -> ActionDigest {
    ActionDigest { action_id: a.action_id.clone(), trigger: a.trigger, kind: a.kind, status: a.status, at: a.created_at }
}

pub struct Centre {
    settings: CentreSettings,
    def: QuestionnaireDefinition,
    rules: RuleSet,
    scheduler: Scheduler,
    store: EventStore,
    notifier: Notifier,
    state: CentreState,
    /// (next_dispatch_at, patient) for monitored patients.
    due: BTreeSet<(Timestamp, PatientId)>,
    /// (earliest unreported outstanding sent_at, patient).
    pending: BTreeSet<(Timestamp, PatientId)>,
    index_keys: HashMap<PatientId, (Option<Timestamp>, Option<Timestamp>)>,
    /// Built on first timeline query.
    patient_seqs: Option<HashMap<PatientId, Vec<u64>>>,
    listeners: Vec<Listener>,
    fault: Option<FaultPoint>,
    snapshot_error: Option<String>,
}

impl Centre {
    /// Restores state from the store (snapshot plus tail) and takes over as writer.
    pub fn open(
        settings: CentreSettings,
        def: QuestionnaireDefinition,
        rules: RuleSet,
        store: EventStore,
        mut notifier: Notifier,
    ) -> Result<Self, CentreError> {
        let scheduler = Scheduler::new(settings.scheduling.clone()).map_err(CentreError::InvalidRequest)?;
        let probe = format!("{}/q/{}", settings.base_url.trim_end_matches('/'), "x".repeat(43));
        if let Err(e) = notify::render_questionnaire_sms(&probe_patient(), &probe, chrono::DateTime::UNIX_EPOCH) {
            return Err(CentreError::InvalidRequest(format!("base_url unusable: {e}")));
        }
        let mut state = CentreState::default();
        if let Some((seq, bytes)) = store.read_snapshot()? {
            if let Ok(s) = serde_json::from_slice::<CentreState>(&bytes) {
                if s.last_seq == seq {
                    state = s;
                }
            }
        }
        let after = state.last_seq;
        store.replay_onto(&mut state, after)?;
        for p in state.patients.values().filter(|p| p.gp_notified) {
            notifier.mark_enrollment_notified(&p.patient.patient_id);
        }
        let mut centre = Centre {
            settings,
            def,
            rules,
            scheduler,
            store,
            notifier,
            state,
            due: BTreeSet::new(),
            pending: BTreeSet::new(),
            index_keys: HashMap::new(),
            patient_seqs: None,
            listeners: Vec::new(),
            fault: None,
            snapshot_error: None,
        };
        let ids: Vec<PatientId> = centre.state.patients.keys().cloned().collect();
        for id in &ids {
            centre.reindex(id);
        }
        Ok(centre)
    }

    /// Default questionnaire and ruleset, memory-backed log, messages discarded.
    pub fn in_memory() -> Self {
        Self::open(
            CentreSettings::default(),
            QuestionnaireDefinition::default_set(),
            RuleSet::default_v1(),
            EventStore::in_memory(),
            Notifier::immediate(Box::new(NullGateway)),
        )
        .expect("defaults are valid")
    }

    pub fn state(&self) -> &CentreState {
        &self.state
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn questionnaire(&self) -> &QuestionnaireDefinition {
        &self.def
    }

    pub fn settings(&self) -> &CentreSettings {
        &self.settings
    }

    pub fn snapshot_error(&self) -> Option<&str> {
        self.snapshot_error.as_deref()
    }

    /// Called with every committed batch, in commit order.
    pub fn subscribe(&mut self, listener: Listener) {
        self.listeners.push(listener);
    }

    /// Arms a one-shot fault.
    pub fn inject_fault(&mut self, fault: FaultPoint) {
        self.fault = Some(fault);
    }

    pub fn stats(&self) -> CentreStats {
        query::stats(&self.state)
    }

    /// Folds the whole log from scratch and compares with the live state.
    pub fn verify_replay(&self) -> Result<bool, StoreError> {
        Ok(self.store.replay::<CentreState>()? == self.state)
    }

    pub fn patient_events(&mut self, id: &PatientId) -> Result<Vec<Event>, CentreError> {
        if self.patient_seqs.is_none() {
            let mut idx: HashMap<PatientId, Vec<u64>> = HashMap::new();
            self.store.for_each_after(0, |e| {
                if let Some(p) = &e.patient_id {
                    idx.entry(p.clone()).or_default().push(e.seq);
                }
            })?;
            self.patient_seqs = Some(idx);
        }
        let seqs = self.patient_seqs.as_ref().and_then(|m| m.get(id)).cloned().unwrap_or_default();
        Ok(seqs.into_iter().map(|s| self.store.read(s)).collect::<Result<_, _>>()?)
    }

    pub fn patient_detail(&mut self, id: &PatientId) -> Result<PatientDetail, CentreError> {
        if self.state.patient(id).is_none() {
            return Err(CentreError::NotFound(format!("patient {id}")));
        }
        let events = self.patient_events(id)?;
        query::patient_detail(&self.state, id, &events).ok_or_else(|| CentreError::NotFound(format!("patient {id}")))
    }

    /// Dashboard-relevant items for events after `since`.
    pub fn feed_since(&self, since: u64) -> Result<Vec<FeedItem>, StoreError> {
        let mut out = Vec::new();
        self.store.for_each_after(since, |e| out.extend(FeedItem::from_event(e)))?;
        Ok(out)
    }

    pub fn enroll(&mut self, form: &EnrollmentForm, now: Timestamp) -> Result<PatientId, CentreError> {
        if let Some(unmet) = form.eligibility.first_unmet() {
            return Err(CentreError::NotEligible(unmet));
        }
        if form.external_ref.trim().is_empty() || form.phone.trim().is_empty() {
            return Err(CentreError::InvalidRequest("external_ref and phone are required".into()));
        }
        if self.state.external_refs.contains_key(&form.external_ref) {
            return Err(CentreError::DuplicatePatient);
        }
        let mut schedule =
            MonitoringSchedule::baseline(form.reports_per_day, now).map_err(CentreError::InvalidRequest)?;
        schedule.overdue_after_minutes = self.scheduler.config().overdue_after_minutes;
        schedule.next_dispatch_at = self.scheduler.next_dispatch(&schedule, now);
        let id = loop {
            let id = PatientId::random();
            if !self.state.patients.contains_key(&id) {
                break id;
            }
        };
        let gp_contact = form.gp_contact.clone().filter(|g| !g.trim().is_empty());
        let mut patient = Patient {
            patient_id: id.clone(),
            phone: form.phone.clone(),
            gp_contact: gp_contact.clone(),
            enrolled_at: now,
            eligibility: form.eligibility,
            schedule: schedule.clone(),
            current_category: TriageCategory::Green,
            overdue: false,
            status: PatientStatus::Enrolled,
        };
        let mut batch = Batch::new(&self.state);
        batch.push(
            &id,
            now,
            EventKind::Enrolled {
                external_ref: form.external_ref.clone(),
                phone: form.phone.clone(),
                gp_contact,
                eligibility: form.eligibility,
                schedule,
            },
        );
        patient.start_monitoring().map_err(CentreError::NotEligible)?;
        batch.push(&id, now, EventKind::StatusChanged { from: PatientStatus::Enrolled, to: PatientStatus::Monitoring });
        match self.notifier.notify_gp_enrollment(&patient, now) {
            Ok(Some(message)) => {
                batch.push(&id, now, EventKind::MessageSent { purpose: MessagePurpose::GpEnrollment, message })
            }
            Ok(None) => {}
            Err(NotifyError::MissingGpContact(_)) => {
                batch.action(&id, now, ActionTrigger::MissingGpContact, ActionKind::Call);
            }
            Err(e) => return Err(CentreError::Internal(e.to_string())),
        }
        self.commit(batch)?;
        Ok(id)
    }

    /// Sends due questionnaires and flags non-responders.
    pub fn tick(&mut self, now: Timestamp) -> Result<TickOutcome, CentreError> {
        let window = chrono::Duration::minutes(self.scheduler.config().overdue_after_minutes);
        let mut candidates: BTreeSet<&PatientId> = BTreeSet::new();
        candidates.extend(self.due.iter().take_while(|(t, _)| *t <= now).map(|(_, p)| p));
        candidates.extend(self.pending.iter().take_while(|(t, _)| now - *t > window).map(|(_, p)| p));
        let views = candidates.into_iter().filter_map(|id| self.state.patients.get(id)).map(|r| TickView {
            patient_id: &r.patient.patient_id,
            status: r.patient.status,
            schedule: &r.patient.schedule,
            outstanding: &r.outstanding,
        });
        let commands = self.scheduler.tick(now, views);

        let mut outcome = TickOutcome::default();
        let mut batch = Batch::new(&self.state);
        for cmd in commands {
            match cmd {
                TickCommand::Overdue { patient_id, dispatch_id, sent_at } => {
                    batch.push(&patient_id, now, EventKind::OverdueDetected { dispatch_id: dispatch_id.clone(), sent_at });
                    batch.action(&patient_id, now, ActionTrigger::NonResponder, ActionKind::Call);
                    outcome.overdue.push(OverdueNotice { patient_id, dispatch_id });
                }
                TickCommand::Dispatch { patient_id, .. } => {
                    if let Some(notice) = self.dispatch(&patient_id, now, &mut batch) {
                        outcome.dispatches.push(notice);
                    }
                }
            }
        }
        self.commit(batch)?;
        Ok(outcome)
    }

    fn dispatch(&mut self, id: &PatientId, now: Timestamp, batch: &mut Batch) -> Option<DispatchNotice> {
        let r = self.state.patients.get(id)?;
        let dispatch_id = state::dispatch_id(id, r.dispatch_count + 1);
        let access = loop {
            let t = token::new_token(id, &dispatch_id, now);
            if !self.state.tokens.contains_key(&hash_token(&t.token)) {
                break t;
            }
        };
        let link = token::link(&self.settings.base_url, &access.token);
        let next_dispatch_at = self.scheduler.next_dispatch(&r.patient.schedule, now);
        match notify::render_questionnaire_sms(&r.patient, &link, now) {
            Ok(sms) => {
                let mut message = self.notifier.send(sms);
                let delivery_state = message.delivery_state;
                message.body = message.body.replace(&access.token, "[redacted]");
                batch.push(
                    id,
                    now,
                    EventKind::Dispatched {
                        dispatch_id: dispatch_id.clone(),
                        token_hash: hash_token(&access.token),
                        expires_at: access.expires_at,
                        next_dispatch_at,
                        message,
                    },
                );
                Some(DispatchNotice { patient_id: id.clone(), dispatch_id, link, delivery_state })
            }
            Err(e) => {
                batch.push(
                    id,
                    now,
                    EventKind::CommandRejected { command: "dispatch".into(), code: "body_too_long".into(), detail: e.to_string() },
                );
                None
            }
        }
    }

    /// Checks a link without consuming it; returns the questionnaire to show.
    pub fn questionnaire_for(&self, raw_token: &str, now: Timestamp) -> Result<(PatientId, DispatchId), CentreError> {
        let rec = self.state.tokens.get(&hash_token(raw_token)).ok_or(TokenError::Unknown)?;
        rec.check(now)?;
        let p = self.state.patient(&rec.patient_id).ok_or(TokenError::Unknown)?;
        if p.patient.status != PatientStatus::Monitoring {
            return Err(TokenError::PatientNotMonitoring.into());
        }
        Ok((rec.patient_id.clone(), rec.dispatch_id.clone()))
    }

    /// The full report pipeline: redeem, validate, classify, escalate or
    /// reassure, open actions, summarize for the GP, append.
    pub fn submit(&mut self, raw_token: &str, answers: &RawAnswers, now: Timestamp) -> Result<SubmitOutcome, CentreError> {
        let (pid, dispatch_id) = self.questionnaire_for(raw_token, now)?;
        let r = &self.state.patients[&pid];
        let report = validate_report(&self.def, answers, now, &pid)?;
        let triage = self.rules.evaluate(&report, r.last_report.as_ref());

        if self.fault == Some(FaultPoint::AfterClassify) {
            self.fault = None;
            let mut batch = Batch::new(&self.state);
            batch.push(
                &pid,
                now,
                EventKind::CommandRejected {
                    command: "submit_report".into(),
                    code: "internal_error".into(),
                    detail: "injected fault after classification".into(),
                },
            );
            self.commit(batch)?;
            return Err(CentreError::Internal("injected fault after classification".into()));
        }

        let patient = r.patient.clone();
        let category = triage.category;
        let changed = category != patient.current_category;
        let mut batch = Batch::new(&self.state);
        batch.push(
            &pid,
            now,
            EventKind::ReportReceived {
                dispatch_id: dispatch_id.clone(),
                token_hash: hash_token(raw_token),
                answers: report.answers.clone(),
                category,
                fired_rules: triage.fired.clone(),
                ruleset_version: self.rules.version().to_owned(),
            },
        );
        if changed {
            batch.push(
                &pid,
                now,
                EventKind::FlagChanged {
                    from: patient.current_category,
                    to: category,
                    ruleset_version: self.rules.version().to_owned(),
                },
            );
        }
        let mut digests = r.pending_digest.clone();
        let mut message_to_patient = None;
        if category.needs_clinician() {
            if let Some(s) = self.escalated(&patient.schedule, now) {
                batch.push(&pid, now, EventKind::ScheduleChanged { schedule: s, reason: ScheduleReason::Escalated });
            }
            let trigger = if category == TriageCategory::Red { ActionTrigger::RedFlag } else { ActionTrigger::OrangeFlag };
            digests.push(digest(&batch.action(&pid, now, trigger, ActionKind::Review)));
        } else {
            let mut recent = r.recent_categories.clone();
            recent.push(category);
            let mut calm = self.scheduler.maybe_deescalate(&patient.schedule, &recent);
            if calm != patient.schedule {
                calm.next_dispatch_at = self.scheduler.next_dispatch(&calm, now);
                batch.push(&pid, now, EventKind::ScheduleChanged { schedule: calm, reason: ScheduleReason::Deescalated });
            }
            if let Some(msg) = notify::reassurance_message(&patient, category, now) {
                let message = self.notifier.send(msg);
                message_to_patient = Some(message.body.clone());
                batch.push(&pid, now, EventKind::MessageSent { purpose: MessagePurpose::Reassurance, message });
            }
        }
        let summary = GpSummary {
            patient_id: pid.clone(),
            report_id: dispatch_id.clone(),
            report_at: now,
            category,
            category_change: changed,
            fired_rules: triage.fired.clone(),
            actions: digests,
        };
        if let Some((summary, message)) = self.notifier.emit_gp_summary(&patient, summary, now) {
            batch.push(&pid, now, EventKind::GpSummarySent { summary, message });
        }
        self.commit(batch)?;
        Ok(SubmitOutcome { patient_id: pid, dispatch_id, category, fired_rules: triage.fired, message_to_patient })
    }

    /// Doubled cadence with the next send pulled forward, or `None` if already escalated.
    fn escalated(&self, schedule: &MonitoringSchedule, now: Timestamp) -> Option<MonitoringSchedule> {
        let mut s = self.scheduler.escalate(schedule, TriageCategory::Orange);
        if s == *schedule {
            return None;
        }
        s.next_dispatch_at = schedule.next_dispatch_at.min(self.scheduler.next_dispatch(&s, now));
        Some(s)
    }

    /// A patient asks the centre to call them.
    pub fn contact(&mut self, id: &PatientId, now: Timestamp) -> Result<ActionItem, CentreError> {
        let r = self.state.patient(id).ok_or_else(|| CentreError::NotFound(format!("patient {id}")))?;
        if r.patient.status != PatientStatus::Monitoring {
            return Err(TokenError::PatientNotMonitoring.into());
        }
        let mut batch = Batch::new(&self.state);
        let action = batch.action(id, now, ActionTrigger::PatientInitiated, ActionKind::Call);
        self.commit(batch)?;
        Ok(action)
    }

    pub fn act(&mut self, action_id: &ActionId, transition: &ActTransition, now: Timestamp) -> Result<ActionItem, CentreError> {
        let mut action = self
            .state
            .actions
            .get(action_id)
            .cloned()
            .ok_or_else(|| CentreError::NotFound(format!("action {action_id}")))?;
        let pid = action.patient_id.clone();
        let mut batch = Batch::new(&self.state);
        match transition {
            ActTransition::Acknowledge => {
                action.acknowledge()?;
                batch.push(&pid, now, EventKind::ActionAcknowledged { action_id: action_id.clone() });
            }
            ActTransition::Resolve { kind, note } => {
                action.resolve(*kind, note)?;
                batch.push(&pid, now, EventKind::ActionResolved { action_id: action_id.clone(), kind: *kind, note: note.clone() });
                if let Some(r) = self.state.patient(&pid) {
                    let status = r.patient.status;
                    match kind {
                        ActionKind::IntensifyMonitoring if status == PatientStatus::Monitoring => {
                            if let Some(s) = self.escalated(&r.patient.schedule, now) {
                                batch.push(&pid, now, EventKind::ScheduleChanged { schedule: s, reason: ScheduleReason::Intensified });
                            }
                        }
                        ActionKind::Hospitalize if matches!(status, PatientStatus::Monitoring | PatientStatus::Enrolled) => {
                            batch.push(&pid, now, EventKind::StatusChanged { from: status, to: PatientStatus::Hospitalized });
                        }
                        _ => {}
                    }
                }
            }
        }
        self.commit(batch)?;
        Ok(self.state.actions[action_id].clone())
    }

    pub fn discharge(&mut self, id: &PatientId, now: Timestamp) -> Result<(), CentreError> {
        let r = self.state.patient(id).ok_or_else(|| CentreError::NotFound(format!("patient {id}")))?;
        let from = r.patient.status;
        if from == PatientStatus::Discharged {
            return Err(CentreError::IllegalTransition("patient is already discharged".into()));
        }
        let mut batch = Batch::new(&self.state);
        batch.push(id, now, EventKind::StatusChanged { from, to: PatientStatus::Discharged });
        self.commit(batch).map(|_| ())
    }

    fn commit(&mut self, batch: Batch) -> Result<Vec<Event>, CentreError> {
        if batch.drafts.is_empty() {
            return Ok(Vec::new());
        }
        let before = self.state.last_seq;
        let events = self.store.append_batch(batch.drafts)?;
        let mut touched: Vec<PatientId> = Vec::new();
        for e in &events {
            self.state.apply(e);
            if let Some(p) = &e.patient_id {
                if touched.last() != Some(p) {
                    touched.push(p.clone());
                }
                if let Some(idx) = self.patient_seqs.as_mut() {
                    idx.entry(p.clone()).or_default().push(e.seq);
                }
            }
        }
        touched.sort();
        touched.dedup();
        for p in &touched {
            self.reindex(p);
        }
        let every = self.settings.snapshot_every;
        if every > 0 && self.state.last_seq / every > before / every {
            self.snapshot();
        }
        for l in &self.listeners {
            l(&events);
        }
        Ok(events)
    }

    /// Writes the current state to the snapshot slot.
    pub fn snapshot(&mut self) {
        let result = serde_json::to_vec(&self.state)
            .map_err(|e| StoreError::StorageFailure(e.to_string()))
            .and_then(|json| self.store.write_snapshot(self.state.last_seq, &json));
        self.snapshot_error = result.err().map(|e| e.to_string());
    }

    fn reindex(&mut self, id: &PatientId) {
        if let Some((due, pending)) = self.index_keys.remove(id) {
            if let Some(t) = due {
                self.due.remove(&(t, id.clone()));
            }
            if let Some(t) = pending {
                self.pending.remove(&(t, id.clone()));
            }
        }
        let Some(r) = self.state.patients.get(id) else { return };
        if r.patient.status != PatientStatus::Monitoring {
            return;
        }
        let due = r.patient.schedule.next_dispatch_at;
        let pending = r.outstanding.iter().filter(|d| !d.overdue_reported).map(|d| d.sent_at).min();
        self.due.insert((due, id.clone()));
        if let Some(t) = pending {
            self.pending.insert((t, id.clone()));
        }
        self.index_keys.insert(id.clone(), (Some(due), pending));
    }
}

fn probe_patient() -> Patient {
    let t = chrono::DateTime::UNIX_EPOCH;
    Patient {
        patient_id: PatientId::new("probe"),
        phone: String::new(),
        gp_contact: None,
        enrolled_at: t,
        eligibility: Eligibility::all_true(),
        schedule: MonitoringSchedule::baseline(1, t).expect("valid"),
        current_category: TriageCategory::Green,
        overdue: false,
        status: PatientStatus::Monitoring,
    }
}

/// Outbound messages recorded in `events`, in log order.
pub fn recorded_messages(events: &[Event]) -> Vec<&OutboundMessage> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Dispatched { message, .. }
            | EventKind::MessageSent { message, .. }
            | EventKind::GpSummarySent { message, .. } => Some(message),
            _ => None,
        })
        .collect()
}
