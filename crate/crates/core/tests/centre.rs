use std::sync::{Arc, Mutex};

use chrono::Duration;
use homewatch_core::centre::query::{self, PatientFilter};
use homewatch_core::centre::{ActTransition, Centre, CentreError, CentreSettings, CentreState, EnrollmentForm, FaultPoint, FeedItem};
use homewatch_core::notify::{Channel, MemoryGateway, Notifier};
use homewatch_core::store::{EventKind, EventStore, FileStorage, Fold};
use homewatch_core::token::TokenError;
use homewatch_core::{
    ActionKind, ActionStatus, ActionTrigger, Eligibility, PatientId, PatientStatus, QuestionnaireDefinition,
    RawAnswer, RawAnswers, RuleSet, Timestamp, TriageCategory,
};

fn t(s: &str) -> Timestamp {
    format!("2020-03-09T{s}:00Z").parse().unwrap()
}

fn form(r: &str) -> EnrollmentForm {
    EnrollmentForm {
        external_ref: r.into(),
        phone: format!("+3361000{r}"),
        gp_contact: Some(format!("gp-{r}")),
        eligibility: Eligibility::all_true(),
        reports_per_day: 2,
    }
}

fn answers(temp: f64, dyspnea: f64, quarantine: bool) -> RawAnswers {
    let mut a = RawAnswers::new();
    a.insert("temperature_c".into(), RawAnswer::Number(temp));
    a.insert("dyspnea".into(), RawAnswer::Number(dyspnea));
    a.insert("pain".into(), RawAnswer::Number(0.0));
    a.insert("distress".into(), RawAnswer::Number(0.0));
    a.insert("quarantine_problem".into(), RawAnswer::Bool(quarantine));
    a.insert("household_change".into(), RawAnswer::Bool(false));
    a
}

fn centre_with_gateway() -> (Centre, MemoryGateway) {
    let gw = MemoryGateway::default();
    let c = Centre::open(
        CentreSettings::default(),
        QuestionnaireDefinition::default_set(),
        RuleSet::default_v1(),
        EventStore::in_memory(),
        Notifier::immediate(Box::new(gw.clone())),
    )
    .unwrap();
    (c, gw)
}

/// Enrolls at midnight and sends the 08:00 questionnaire; returns the raw token.
fn enrolled_with_link(c: &mut Centre, r: &str) -> (PatientId, String) {
    let id = c.enroll(&form(r), t("00:00")).unwrap();
    let out = c.tick(t("08:00")).unwrap();
    let notice = out.dispatches.iter().find(|d| d.patient_id == id).unwrap();
    let token = homewatch_core::token::token_from_link(&notice.link).unwrap().to_owned();
    (id, token)
}

#[test]
fn enrollment_starts_monitoring_and_notifies_gp() {
    let (mut c, gw) = centre_with_gateway();
    let id = c.enroll(&form("1"), t("00:00")).unwrap();
    let p = &c.state().patient(&id).unwrap().patient;
    assert_eq!(p.status, PatientStatus::Monitoring);
    assert_eq!(p.schedule.next_dispatch_at, t("08:00"));
    let msgs = gw.messages();
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0].channel, Channel::GpChannel);
    assert!(msgs[0].body.contains("has been confirmed with Covid-19 and is now being monitored at home"));
    assert_eq!(c.state().counters.gp_enrollment_notices, 1);
}

#[test]
fn enrollment_rejections() {
    let mut c = Centre::in_memory();
    let mut f = form("1");
    f.eligibility.consent = false;
    assert!(matches!(c.enroll(&f, t("00:00")), Err(CentreError::NotEligible("consent"))));
    c.enroll(&form("1"), t("00:00")).unwrap();
    assert!(matches!(c.enroll(&form("1"), t("00:01")), Err(CentreError::DuplicatePatient)));
    let mut f = form("2");
    f.reports_per_day = 3;
    assert!(matches!(c.enroll(&f, t("00:00")), Err(CentreError::InvalidRequest(_))));
}

#[test]
fn missing_gp_contact_becomes_an_action() {
    let mut c = Centre::in_memory();
    let mut f = form("1");
    f.gp_contact = None;
    let id = c.enroll(&f, t("00:00")).unwrap();
    let actions: Vec<_> = c.state().actions.values().collect();
    assert_eq!(actions.len(), 1);
    assert_eq!(actions[0].patient_id, id);
    assert_eq!(actions[0].trigger, ActionTrigger::MissingGpContact);
}

#[test]
fn green_report_reassures_without_action() {
    let (mut c, gw) = centre_with_gateway();
    let (id, token) = enrolled_with_link(&mut c, "1");
    let out = c.submit(&token, &answers(36.8, 0.0, false), t("08:30")).unwrap();
    assert_eq!(out.category, TriageCategory::Green);
    assert!(out.message_to_patient.is_some());
    assert!(c.state().actions.is_empty());
    let counters = &c.state().counters;
    assert_eq!((counters.automatic_messages, counters.gp_summaries), (1, 1));
    let gp: Vec<_> = gw.messages().into_iter().filter(|m| m.channel == Channel::GpChannel).collect();
    assert_eq!(gp.len(), 2, "enrollment notice plus one summary");
    assert!(gp[1].body.contains("green"));
    assert_eq!(c.state().patient(&id).unwrap().report_count, 1);
}

#[test]
fn red_report_opens_review_and_escalates() {
    let mut c = Centre::in_memory();
    let (id, token) = enrolled_with_link(&mut c, "1");
    let out = c.submit(&token, &answers(37.0, 8.0, false), t("08:30")).unwrap();
    assert_eq!(out.category, TriageCategory::Red);
    assert_eq!(out.fired_rules, ["severe_dyspnea"]);
    assert!(out.message_to_patient.is_none());
    let a: Vec<_> = c.state().actions.values().collect();
    assert_eq!(a.len(), 1);
    assert_eq!((a[0].kind, a[0].trigger, a[0].status), (ActionKind::Review, ActionTrigger::RedFlag, ActionStatus::Open));
    let s = &c.state().patient(&id).unwrap().patient.schedule;
    assert_eq!((s.reports_per_day, s.escalated), (4, true));
    assert_eq!(s.next_dispatch_at, t("14:00"));
    assert_eq!(c.state().counters.automatic_messages, 0);
}

#[test]
fn token_errors_leave_no_trace() {
    let mut c = Centre::in_memory();
    let (_, token) = enrolled_with_link(&mut c, "1");
    let before = c.state().clone();
    let late = t("08:00") + Duration::hours(24) + Duration::minutes(1);
    let err = c.submit(&token, &answers(36.8, 0.0, false), late).unwrap_err();
    assert!(matches!(err, CentreError::Token(TokenError::Expired)));
    assert_eq!(err.code(), "token_expired");
    assert!(matches!(c.submit("nope", &answers(36.8, 0.0, false), t("09:00")), Err(CentreError::Token(TokenError::Unknown))));
    let bad = answers(46.2, 0.0, false);
    assert_eq!(c.submit(&token, &bad, t("09:00")).unwrap_err().code(), "out_of_range");
    let mut bad = answers(36.8, 0.0, false);
    bad.remove("dyspnea");
    assert_eq!(c.submit(&token, &bad, t("09:00")).unwrap_err().code(), "missing_required_item");
    assert_eq!(c.state(), &before);

    c.submit(&token, &answers(36.8, 0.0, false), t("09:00")).unwrap();
    assert!(matches!(c.submit(&token, &answers(36.8, 0.0, false), t("09:01")), Err(CentreError::Token(TokenError::Consumed))));
}

#[test]
fn non_responder_flagged_once_after_eight_hours() {
    let mut c = Centre::in_memory();
    let (id, _) = enrolled_with_link(&mut c, "1");
    assert!(c.tick(t("16:00")).unwrap().overdue.is_empty());
    let out = c.tick(t("16:01")).unwrap();
    assert_eq!(out.overdue.len(), 1);
    assert!(c.tick(t("16:02")).unwrap().overdue.is_empty());
    let p = c.state().patient(&id).unwrap();
    assert!(p.patient.overdue);
    let nonresp: Vec<_> = c.state().actions.values().filter(|a| a.trigger == ActionTrigger::NonResponder).collect();
    assert_eq!(nonresp.len(), 1);
    assert_eq!(nonresp[0].kind, ActionKind::Call);
}

#[test]
fn action_transitions_and_hospitalization() {
    let mut c = Centre::in_memory();
    let (id, token) = enrolled_with_link(&mut c, "1");
    c.submit(&token, &answers(40.5, 0.0, false), t("08:30")).unwrap();
    let aid = c.state().actions.keys().next().unwrap().clone();
    let resolve = |note: &str| ActTransition::Resolve { kind: ActionKind::Hospitalize, note: note.into() };
    assert!(matches!(c.act(&aid, &resolve("x"), t("09:00")), Err(CentreError::IllegalTransition(_))));
    c.act(&aid, &ActTransition::Acknowledge, t("09:00")).unwrap();
    assert!(matches!(c.act(&aid, &ActTransition::Acknowledge, t("09:01")), Err(CentreError::IllegalTransition(_))));
    assert!(matches!(c.act(&aid, &resolve(""), t("09:01")), Err(CentreError::IllegalTransition(_))));
    let a = c.act(&aid, &resolve("admitted to ward 3"), t("09:02")).unwrap();
    assert_eq!(a.status, ActionStatus::Resolved);
    assert_eq!(c.state().patient(&id).unwrap().patient.status, PatientStatus::Hospitalized);
    let out = c.tick(t("23:59")).unwrap();
    assert!(out.dispatches.is_empty());
    assert!(matches!(c.act(&"A99".into(), &ActTransition::Acknowledge, t("10:00")), Err(CentreError::NotFound(_))));
    assert_eq!(c.stats().monitoring, 0);
}

#[test]
fn intensify_resolution_escalates() {
    let mut c = Centre::in_memory();
    let id = c.enroll(&form("1"), t("00:00")).unwrap();
    let a = c.contact(&id, t("01:00")).unwrap();
    assert_eq!((a.trigger, a.kind), (ActionTrigger::PatientInitiated, ActionKind::Call));
    c.act(&a.action_id, &ActTransition::Acknowledge, t("01:05")).unwrap();
    c.act(&a.action_id, &ActTransition::Resolve { kind: ActionKind::IntensifyMonitoring, note: "worried".into() }, t("01:10"))
        .unwrap();
    let s = &c.state().patient(&id).unwrap().patient.schedule;
    assert_eq!((s.reports_per_day, s.escalated), (4, true));
    assert_eq!(s.next_dispatch_at, t("02:00"));
}

#[test]
fn list_filters_and_orders() {
    let mut c = Centre::in_memory();
    let mut tokens = Vec::new();
    for r in ["a", "b", "c"] {
        c.enroll(&form(r), t("00:00")).unwrap();
    }
    for d in c.tick(t("08:00")).unwrap().dispatches {
        tokens.push(homewatch_core::token::token_from_link(&d.link).unwrap().to_owned());
    }
    c.submit(&tokens[0], &answers(36.5, 0.0, false), t("08:10")).unwrap();
    c.submit(&tokens[1], &answers(36.5, 9.0, false), t("08:20")).unwrap();
    c.submit(&tokens[2], &answers(36.5, 0.0, false), t("08:05")).unwrap();

    let all = query::list_patients(c.state(), &PatientFilter::default(), None).unwrap();
    let cats: Vec<_> = all.rows.iter().map(|r| r.category).collect();
    assert_eq!(cats, [TriageCategory::Red, TriageCategory::Green, TriageCategory::Green]);
    assert!(all.rows[1].last_report_at < all.rows[2].last_report_at);
    let red = PatientFilter { category: Some(TriageCategory::Red), ..Default::default() };
    assert_eq!(query::list_patients(c.state(), &red, None).unwrap().rows.len(), 1);
    let overdue = PatientFilter { overdue: Some(true), ..Default::default() };
    assert!(query::list_patients(c.state(), &overdue, None).unwrap().rows.is_empty());
    let needs = PatientFilter { needs_action: Some(true), ..Default::default() };
    assert_eq!(query::list_patients(c.state(), &needs, None).unwrap().rows.len(), 1);
    let by_ref = PatientFilter { search: Some("b".into()), ..Default::default() };
    assert_eq!(query::list_patients(c.state(), &by_ref, None).unwrap().rows[0].category, TriageCategory::Red);

    let json = serde_json::to_string(&all).unwrap();
    assert!(!json.contains("+3361000"), "rows must not carry phone numbers");
    let stats = c.stats();
    assert_eq!((stats.counts.green, stats.counts.red, stats.counts.total()), (2, 1, 3));
}

#[test]
fn pagination_walks_every_row_once() {
    let mut c = Centre::in_memory();
    for i in 0..120 {
        c.enroll(&form(&i.to_string()), t("00:00")).unwrap();
    }
    let mut seen = Vec::new();
    let mut cursor = None;
    loop {
        let page = query::list_patients(c.state(), &PatientFilter::default(), cursor.as_deref()).unwrap();
        assert!(page.rows.len() <= query::PAGE_SIZE);
        seen.extend(page.rows.into_iter().map(|r| r.patient_id));
        match page.next_cursor {
            Some(next) => cursor = Some(next),
            None => break,
        }
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 120);
    assert!(query::list_patients(c.state(), &PatientFilter::default(), Some("garbage!")).is_err());
}

#[test]
fn stats_conserve_population_on_flag_change() {
    let mut c = Centre::in_memory();
    let (_, tok) = enrolled_with_link(&mut c, "1");
    c.enroll(&form("2"), t("00:00")).unwrap();
    let before = c.stats();
    assert_eq!(before.counts.green, 2);
    c.submit(&tok, &answers(38.6, 0.0, false), t("08:10")).unwrap();
    let after = c.stats();
    assert_eq!(after.counts.green, 1);
    assert_eq!(after.counts.red + after.counts.orange + after.counts.yellow, 1);
    assert_eq!(after.counts.total(), before.counts.total());
}

#[test]
fn timeline_matches_filtered_log() {
    let mut c = Centre::in_memory();
    let (id, tok) = enrolled_with_link(&mut c, "1");
    enrolled_with_link(&mut c, "2");
    c.submit(&tok, &answers(36.6, 0.0, false), t("08:10")).unwrap();
    let out = c.tick(t("20:00")).unwrap();
    let tok2 = homewatch_core::token::token_from_link(&out.dispatches.iter().find(|d| d.patient_id == id).unwrap().link)
        .unwrap()
        .to_owned();
    c.submit(&tok2, &answers(37.9, 2.0, false), t("20:10")).unwrap();

    let detail = c.patient_detail(&id).unwrap();
    let reports = detail.timeline.iter().filter(|e| e.kind == "report_received").count();
    assert_eq!(reports, 2);
    let filtered: Vec<u64> = c
        .store()
        .events_after(0)
        .unwrap()
        .into_iter()
        .filter(|e| e.patient_id.as_ref() == Some(&id))
        .map(|e| e.seq)
        .collect();
    assert_eq!(detail.timeline.iter().map(|e| e.seq).collect::<Vec<_>>(), filtered);
    let json = serde_json::to_string(&detail).unwrap();
    assert!(!json.contains("+3361000"));
    assert!(matches!(c.patient_detail(&"p-unknown".into()), Err(CentreError::NotFound(_))));
}

#[test]
fn listeners_see_every_feed_item_and_resume_works() {
    let mut c = Centre::in_memory();
    let seen_a: Arc<Mutex<Vec<FeedItem>>> = Arc::default();
    let seen_b: Arc<Mutex<Vec<FeedItem>>> = Arc::default();
    for sink in [seen_a.clone(), seen_b.clone()] {
        c.subscribe(Box::new(move |events| {
            sink.lock().unwrap().extend(events.iter().filter_map(FeedItem::from_event));
        }));
    }
    let (_, tok) = enrolled_with_link(&mut c, "1");
    let mark = c.state().last_seq;
    c.submit(&tok, &answers(38.6, 0.0, false), t("08:10")).unwrap();
    let a = seen_a.lock().unwrap().clone();
    assert_eq!(a, *seen_b.lock().unwrap());
    let flags = a.iter().filter(|i| i.seq > mark && i.kind == "flag_changed").count();
    assert_eq!(flags, 1);
    assert_eq!(c.feed_since(0).unwrap(), a);
    let resumed = c.feed_since(mark).unwrap();
    assert!(resumed.iter().all(|i| i.seq > mark));
    assert_eq!(resumed, a.into_iter().filter(|i| i.seq > mark).collect::<Vec<_>>());
}

#[test]
fn fault_after_classification_records_only_an_error_event() {
    let mut c = Centre::in_memory();
    let (_, tok) = enrolled_with_link(&mut c, "1");
    let before = c.state().clone();
    c.inject_fault(FaultPoint::AfterClassify);
    let err = c.submit(&tok, &answers(38.6, 8.0, false), t("08:10")).unwrap_err();
    assert_eq!(err.code(), "internal_error");
    let tail = c.store().events_after(before.last_seq).unwrap();
    assert_eq!(tail.len(), 1);
    assert!(matches!(tail[0].kind, EventKind::CommandRejected { .. }));
    let mut expected = before.clone();
    expected.apply(&tail[0]);
    assert_eq!(c.state(), &expected);
    assert_eq!(c.state().counters.reports.total(), 0);
    assert!(c.verify_replay().unwrap());
    // The token was not consumed; the retry goes through once.
    c.submit(&tok, &answers(38.6, 8.0, false), t("08:11")).unwrap();
    assert_eq!(c.state().counters.gp_summaries, 1);
}

#[test]
fn snapshot_restore_matches_full_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    let settings = CentreSettings { snapshot_every: 7, ..CentreSettings::default() };
    let open = |settings: CentreSettings| {
        Centre::open(
            settings,
            QuestionnaireDefinition::default_set(),
            RuleSet::default_v1(),
            EventStore::open(Box::new(FileStorage::open(&path, false).unwrap())).unwrap(),
            Notifier::immediate(Box::new(homewatch_core::notify::NullGateway)),
        )
        .unwrap()
    };
    let live = {
        let mut c = open(settings.clone());
        for r in 0..5 {
            c.enroll(&form(&r.to_string()), t("00:00")).unwrap();
        }
        let links = c.tick(t("08:00")).unwrap().dispatches;
        for (i, d) in links.iter().enumerate() {
            let tok = homewatch_core::token::token_from_link(&d.link).unwrap();
            c.submit(tok, &answers(36.5 + i as f64, i as f64, i % 2 == 0), t("08:30")).unwrap();
        }
        c.tick(t("17:00")).unwrap();
        assert!(c.snapshot_error().is_none());
        assert!(c.store().read_snapshot().unwrap().is_some());
        c.state().clone()
    };
    let reopened = open(settings);
    assert_eq!(reopened.state(), &live);
    assert_eq!(reopened.store().replay::<CentreState>().unwrap(), live);
}
