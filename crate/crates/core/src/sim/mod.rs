//! Synthetic cohort simulator: drives a centre through simulated minutes
//! and measures how much of the workload the automation absorbs.

mod cohort;
mod report;

use std::collections::{BTreeMap, HashMap};

use chrono::{Duration, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

pub use cohort::{
    generate_cohort, patient_rng, Archetype, CohortSpec, Mix, PatientScript, ResponseDelay, Vitals, RAMP_PER_REPORT,
};
pub use report::{render, InvariantCheck, ReportFormat, SimulationReport};

use crate::centre::query::CentreStats;
use crate::centre::{Centre, CentreError, EnrollmentForm, SubmitOutcome, TickOutcome};
use crate::model::{
    validate_report, ActionTrigger, CategoryCounts, Eligibility, PatientId, QuestionnaireDefinition, RawAnswers,
    SymptomReport, Timestamp, TriageCategory,
};
use crate::token::token_from_link;
use crate::triage::{reference, RuleSet};

/// Simulated time starts here, at midnight.
pub fn sim_epoch() -> Timestamp {
    Utc.with_ymd_and_hms(2020, 3, 9, 0, 0, 0).unwrap()
}

const MINUTES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("service unreachable: {0}")]
    ServiceUnreachable(String),
    #[error("{op} failed: {code}: {message}")]
    Service { op: &'static str, code: String, message: String },
    #[error("invariant violated at {at}: {}", failures.join("; "))]
    InvariantViolated { at: Timestamp, failures: Vec<String>, report: Option<Box<SimulationReport>> },
}

impl SimError {
    fn service(op: &'static str, e: CentreError) -> Self {
        SimError::Service { op, code: e.code().into(), message: e.to_string() }
    }
}

/// What the simulator needs from a centre, in process or over the network.
pub trait CentreHandle {
    fn enroll(&mut self, form: &EnrollmentForm, now: Timestamp) -> Result<PatientId, SimError>;
    fn tick(&mut self, now: Timestamp) -> Result<TickOutcome, SimError>;
    fn submit(&mut self, token: &str, answers: &RawAnswers, now: Timestamp) -> Result<SubmitOutcome, SimError>;
    fn contact(&mut self, id: &PatientId, now: Timestamp) -> Result<(), SimError>;
    fn stats(&mut self) -> Result<CentreStats, SimError>;
    /// Whether a full replay of the log reproduces the live state; `None` if the handle cannot tell.
    fn verify_replay(&mut self) -> Option<Result<bool, String>> {
        None
    }
}

/// A centre owned by the simulator.
pub struct InProcess {
    centre: Centre,
}

impl InProcess {
    pub fn new() -> Self {
        InProcess { centre: Centre::in_memory() }
    }

    pub fn with_centre(centre: Centre) -> Self {
        InProcess { centre }
    }

    pub fn centre(&self) -> &Centre {
        &self.centre
    }

    pub fn into_inner(self) -> Centre {
        self.centre
    }
}

impl Default for InProcess {
    fn default() -> Self {
        Self::new()
    }
}

impl CentreHandle for InProcess {
    fn enroll(&mut self, form: &EnrollmentForm, now: Timestamp) -> Result<PatientId, SimError> {
        self.centre.enroll(form, now).map_err(|e| SimError::service("enroll", e))
    }

    fn tick(&mut self, now: Timestamp) -> Result<TickOutcome, SimError> {
        self.centre.tick(now).map_err(|e| SimError::service("tick", e))
    }

    fn submit(&mut self, token: &str, answers: &RawAnswers, now: Timestamp) -> Result<SubmitOutcome, SimError> {
        self.centre.submit(token, answers, now).map_err(|e| SimError::service("submit", e))
    }

    fn contact(&mut self, id: &PatientId, now: Timestamp) -> Result<(), SimError> {
        self.centre.contact(id, now).map(|_| ()).map_err(|e| SimError::service("contact", e))
    }

    fn stats(&mut self) -> Result<CentreStats, SimError> {
        Ok(self.centre.stats())
    }

    fn verify_replay(&mut self) -> Option<Result<bool, String>> {
        Some(self.centre.verify_replay().map_err(|e| e.to_string()))
    }
}

/// The enrollment form used for the `i`-th synthetic patient.
pub fn enrollment_form(i: u32, reports_per_day: u32) -> EnrollmentForm {
    EnrollmentForm {
        external_ref: format!("sim-{i:06}"),
        phone: format!("+3360{i:07}"),
        gp_contact: Some(format!("gp-{:03}", i % 97)),
        eligibility: Eligibility::all_true(),
        reports_per_day,
    }
}

struct SimPatient {
    id: PatientId,
    script: PatientScript,
    rng: ChaCha8Rng,
    category: TriageCategory,
    overdue: bool,
    /// (report index, dispatch day) of each submitted report.
    submitted: Vec<(u32, u32)>,
    /// Categories the service returned, in order.
    categories: Vec<TriageCategory>,
}

struct PendingResponse {
    patient: usize,
    token: String,
    day: u32,
}

#[derive(Default)]
struct Tally {
    dispatches: u64,
    reports: CategoryCounts,
    actions: BTreeMap<ActionTrigger, u64>,
    reassurance: u64,
    overdue: u64,
    contacts: u64,
    rule_hits: BTreeMap<String, u64>,
}

struct Run<'a> {
    spec: &'a CohortSpec,
    patients: Vec<SimPatient>,
    index: HashMap<PatientId, usize>,
    responses: BTreeMap<u32, Vec<PendingResponse>>,
    contacts: BTreeMap<u32, Vec<usize>>,
    delay: Exp<f64>,
    tally: Tally,
}

impl Run<'_> {
    fn now(minute: u32) -> Timestamp {
        sim_epoch() + Duration::minutes(i64::from(minute))
    }

    fn current_counts(&self) -> (CategoryCounts, u64) {
        let mut counts = CategoryCounts::default();
        let mut overdue = 0;
        for p in &self.patients {
            counts.add(p.category);
            overdue += u64::from(p.overdue);
        }
        (counts, overdue)
    }

    fn plan_contacts(&mut self, minute: u32) {
        let rate = self.spec.contact_rate_per_day;
        if rate <= 0.0 {
            return;
        }
        for (i, p) in self.patients.iter_mut().enumerate() {
            if p.rng.random_bool(rate) {
                let at = minute + p.rng.random_range(0..MINUTES_PER_DAY);
                self.contacts.entry(at).or_default().push(i);
            }
        }
    }

    fn step(&mut self, handle: &mut dyn CentreHandle, minute: u32) -> Result<(), SimError> {
        let now = Self::now(minute);
        if minute % MINUTES_PER_DAY == 0 {
            self.plan_contacts(minute);
        }
        if let Some(mut who) = self.contacts.remove(&minute) {
            who.sort_unstable();
            for i in who {
                handle.contact(&self.patients[i].id, now)?;
                self.tally.contacts += 1;
                *self.tally.actions.entry(ActionTrigger::PatientInitiated).or_default() += 1;
            }
        }

        let out = handle.tick(now)?;
        for o in &out.overdue {
            let i = self.lookup(&o.patient_id)?;
            self.patients[i].overdue = true;
            self.tally.overdue += 1;
            *self.tally.actions.entry(ActionTrigger::NonResponder).or_default() += 1;
        }
        let mut sent = Vec::with_capacity(out.dispatches.len());
        for d in out.dispatches {
            let token = token_from_link(&d.link)
                .ok_or_else(|| SimError::Service { op: "tick", code: "bad_link".into(), message: d.link.clone() })?
                .to_owned();
            sent.push((self.lookup(&d.patient_id)?, token));
        }
        sent.sort_unstable_by_key(|(i, _)| *i);
        let end = self.spec.days * MINUTES_PER_DAY;
        for (i, token) in sent {
            self.tally.dispatches += 1;
            let p = &mut self.patients[i];
            if p.script.archetype == Archetype::NonResponder && p.rng.random_bool(self.spec.nonresponder_skip_prob) {
                continue;
            }
            let latency = self.delay.sample(&mut p.rng).min(f64::from(self.spec.response_delay.max_minutes));
            let due = minute + latency as u32;
            if due < end {
                self.responses.entry(due).or_default().push(PendingResponse { patient: i, token, day: minute / MINUTES_PER_DAY });
            }
        }

        if let Some(mut due) = self.responses.remove(&minute) {
            due.sort_by_key(|r| r.patient);
            for r in due {
                let p = &mut self.patients[r.patient];
                let k = p.submitted.len() as u32;
                let answers = p.script.answers(k, r.day).to_raw();
                let outcome = handle.submit(&r.token, &answers, now)?;
                p.submitted.push((k, r.day));
                p.categories.push(outcome.category);
                p.category = outcome.category;
                p.overdue = false;
                let t = &mut self.tally;
                t.reports.add(outcome.category);
                match outcome.category {
                    TriageCategory::Green | TriageCategory::Yellow => t.reassurance += 1,
                    TriageCategory::Orange => *t.actions.entry(ActionTrigger::OrangeFlag).or_default() += 1,
                    TriageCategory::Red => *t.actions.entry(ActionTrigger::RedFlag).or_default() += 1,
                }
                for rule in outcome.fired_rules {
                    *t.rule_hits.entry(rule).or_default() += 1;
                }
            }
        }
        Ok(())
    }

    fn lookup(&self, id: &PatientId) -> Result<usize, SimError> {
        self.index.get(id).copied().ok_or_else(|| SimError::Service {
            op: "tick",
            code: "unknown_patient".into(),
            message: format!("service reported a patient the simulator never enrolled: {id}"),
        })
    }

    fn daily_check(&self, stats: &CentreStats) -> Vec<String> {
        let (counts, overdue) = self.current_counts();
        let mut failures = Vec::new();
        if stats.counts != counts {
            failures.push(format!("board counts {:?} differ from simulated patients {:?}", stats.counts, counts));
        }
        if stats.overdue != overdue {
            failures.push(format!("board shows {} overdue, simulator expects {overdue}", stats.overdue));
        }
        failures
    }

    /// Feeds every patient's submitted answers through the reference interpreter.
    fn oracle_mismatches(&self) -> Vec<String> {
        let def = QuestionnaireDefinition::default_set();
        let rules = RuleSet::default_v1();
        let src = rules.source();
        let mut mismatches = Vec::new();
        for (i, p) in self.patients.iter().enumerate() {
            let mut prev: Option<SymptomReport> = None;
            for (&(k, day), &got) in p.submitted.iter().zip(&p.categories) {
                let at = sim_epoch() + Duration::days(i64::from(day));
                let r = match validate_report(&def, &p.script.answers(k, day).to_raw(), at, &p.id) {
                    Ok(r) => r,
                    Err(e) => {
                        mismatches.push(format!("patient #{i} report {k}: {e}"));
                        break;
                    }
                };
                let want = reference::classify(src, &r, prev.as_ref());
                if want != got {
                    mismatches.push(format!("patient #{i} report {k}: service {got}, reference {want}"));
                    break;
                }
                prev = Some(r);
            }
        }
        mismatches
    }

    fn report(&self, stats: &CentreStats, replay: Option<Result<bool, String>>, runtime_ms: u64) -> SimulationReport {
        let t = &self.tally;
        let totals = &stats.totals;
        let n = u64::from(self.spec.n_patients);
        let reports = t.reports.total();
        let actions: u64 = t.actions.values().sum();
        let mut checks = Vec::new();
        let mut check = |name: &str, passed: bool, detail: String| {
            checks.push(InvariantCheck { name: name.into(), passed, detail });
        };
        check(
            "gp_summary_per_report",
            totals.gp_summaries == reports && totals.reports.total() == reports,
            format!("{} summaries, {} reports logged, {reports} submitted", totals.gp_summaries, totals.reports.total()),
        );
        check(
            "gp_enrollment_notice_per_patient",
            totals.gp_enrollment_notices == n && totals.enrolled == n,
            format!("{} notices for {} enrolled of {n}", totals.gp_enrollment_notices, totals.enrolled),
        );
        let calm = t.reports.green + t.reports.yellow;
        check(
            "reassurance_equals_green_plus_yellow",
            totals.automatic_messages == calm && t.reassurance == calm,
            format!("{} reassurance messages, {calm} green+yellow reports", totals.automatic_messages),
        );
        let expected_actions = t.reports.orange + t.reports.red + t.overdue + t.contacts;
        check(
            "actions_equal_orange_red_overdue_contacts",
            totals.actions_created == expected_actions && actions == expected_actions,
            format!(
                "{} action items; {} orange + {} red + {} overdue + {} contacts = {expected_actions}",
                totals.actions_created, t.reports.orange, t.reports.red, t.overdue, t.contacts
            ),
        );
        check(
            "service_totals_match_simulation",
            totals.reports == t.reports
                && totals.dispatches == t.dispatches
                && totals.overdue_detections == t.overdue
                && totals.actions_by_trigger == t.actions,
            format!(
                "service {} dispatches / {:?} / {} overdue; simulator {} / {:?} / {}",
                totals.dispatches, totals.reports, totals.overdue_detections, t.dispatches, t.reports, t.overdue
            ),
        );
        let board = self.daily_check(stats);
        check("board_matches_simulation", board.is_empty(), board.join("; "));
        let oracle = self.oracle_mismatches();
        check(
            "categories_match_reference_interpreter",
            oracle.is_empty(),
            oracle.iter().take(5).cloned().collect::<Vec<_>>().join("; "),
        );
        match replay {
            Some(Ok(same)) => check("replay_reproduces_state", same, String::new()),
            Some(Err(e)) => check("replay_reproduces_state", false, e),
            None => {}
        }

        let mut archetypes: BTreeMap<Archetype, u64> = Archetype::ALL.iter().map(|a| (*a, 0)).collect();
        for p in &self.patients {
            *archetypes.get_mut(&p.script.archetype).unwrap() += 1;
        }
        let (final_counts, _) = self.current_counts();
        SimulationReport {
            spec: self.spec.clone(),
            archetypes,
            dispatches: t.dispatches,
            total_reports: reports,
            histogram: t.reports,
            final_categories: final_counts,
            actions_by_trigger: t.actions.clone(),
            action_items: actions,
            automatic_messages: t.reassurance,
            overdue_detections: t.overdue,
            patient_contacts: t.contacts,
            automation_ratio: if t.reassurance + actions == 0 {
                1.0
            } else {
                t.reassurance as f64 / (t.reassurance + actions) as f64
            },
            rule_hits: t.rule_hits.clone(),
            invariants: checks,
            runtime_ms,
        }
    }
}

/// Generates the cohort, enrolls it at midnight of day 0, then advances the
/// clock minute by minute for `spec.days` days. Fails fast on any invariant
/// violation; the board is reconciled at the end of every simulated day.
pub fn run(spec: &CohortSpec, handle: &mut dyn CentreHandle) -> Result<SimulationReport, SimError> {
    let started = std::time::Instant::now();
    let scripts = generate_cohort(spec)?;
    let t0 = sim_epoch();
    let mut patients = Vec::with_capacity(scripts.len());
    let mut index = HashMap::with_capacity(scripts.len());
    for (i, script) in scripts.into_iter().enumerate() {
        let id = handle.enroll(&enrollment_form(i as u32, spec.reports_per_day), t0)?;
        index.insert(id.clone(), i);
        patients.push(SimPatient {
            id,
            script,
            rng: patient_rng(spec.seed, i as u32),
            category: TriageCategory::Green,
            overdue: false,
            submitted: Vec::new(),
            categories: Vec::new(),
        });
    }
    let mut run = Run {
        spec,
        patients,
        index,
        responses: BTreeMap::new(),
        contacts: BTreeMap::new(),
        delay: Exp::new(1.0 / spec.response_delay.mean_minutes)
            .map_err(|e| SimError::InvalidSpec(format!("response delay: {e}")))?,
        tally: Tally::default(),
    };

    for minute in 0..spec.days * MINUTES_PER_DAY {
        run.step(handle, minute)?;
        if minute % MINUTES_PER_DAY == MINUTES_PER_DAY - 1 {
            let failures = run.daily_check(&handle.stats()?);
            if !failures.is_empty() {
                return Err(SimError::InvariantViolated { at: Run::now(minute), failures, report: None });
            }
        }
    }

    let stats = handle.stats()?;
    let replay = handle.verify_replay();
    let report = run.report(&stats, replay, started.elapsed().as_millis() as u64);
    let failures: Vec<String> =
        report.invariants.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if failures.is_empty() {
        Ok(report)
    } else {
        let at = Run::now(spec.days * MINUTES_PER_DAY);
        Err(SimError::InvariantViolated { at, failures, report: Some(Box::new(report)) })
    }
}
