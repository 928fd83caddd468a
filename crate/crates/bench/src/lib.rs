//! Fixtures shared by the criterion benches in `benches/`.

use chrono::{Duration, TimeZone, Utc};

use homewatch_core::centre::Centre;
use homewatch_core::model::{validate_report, PatientId, QuestionnaireDefinition, RawAnswer, RawAnswers, SymptomReport};
use homewatch_core::sim::enrollment_form;
use homewatch_core::Timestamp;

pub fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2020, 3, 9, 0, 0, 0).unwrap()
}

/// A validated report with the given temperature and dyspnea score; everything else at floor.
pub fn report(temp: f64, dyspnea: u8, quarantine_problem: bool) -> SymptomReport {
    let mut raw = RawAnswers::new();
    raw.insert("temperature_c".into(), RawAnswer::Number(temp));
    raw.insert("dyspnea".into(), RawAnswer::Number(f64::from(dyspnea)));
    raw.insert("pain".into(), RawAnswer::Number(0.0));
    raw.insert("distress".into(), RawAnswer::Number(0.0));
    raw.insert("quarantine_problem".into(), RawAnswer::Bool(quarantine_problem));
    raw.insert("household_change".into(), RawAnswer::Bool(false));
    validate_report(&QuestionnaireDefinition::default_set(), &raw, t0(), &PatientId::new("bench")).unwrap()
}

/// An in-memory centre with `n` monitored patients, each due at 08:00 on day 0.
pub fn centre_with(n: u32) -> Centre {
    let mut c = Centre::in_memory();
    for i in 0..n {
        c.enroll(&enrollment_form(i, 2), t0()).unwrap();
    }
    c
}

pub fn first_slot() -> Timestamp {
    t0() + Duration::hours(8)
}
