//! Random rulesets and reports over the default questionnaire.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;

use homewatch_core::model::{validate_report, PatientId, QuestionnaireDefinition, RawAnswer, RawAnswers, SymptomReport};
use homewatch_core::triage::{CmpOp, Comparison, Fallback, Predicate, Rule, RuleSetSource};
use homewatch_core::{Timestamp, TriageCategory};

const NUMERIC: [&str; 4] = ["temperature_c", "dyspnea", "pain", "distress"];
const BOOLS: [&str; 2] = ["quarantine_problem", "household_change"];

pub fn t0() -> Timestamp {
    "2020-03-09T08:00:00Z".parse().unwrap()
}

fn threshold(rng: &mut impl Rng, item: &str) -> f64 {
    match item {
        "temperature_c" => (rng.random_range(350..=420) as f64) / 10.0,
        "quarantine_problem" | "household_change" => rng.random_range(0..=1) as f64,
        _ => rng.random_range(0..=10) as f64,
    }
}

fn delta(rng: &mut impl Rng, item: &str) -> f64 {
    match item {
        "temperature_c" => (rng.random_range(-30..=30) as f64) / 10.0,
        "quarantine_problem" | "household_change" => rng.random_range(-1..=1) as f64,
        _ => rng.random_range(-5..=5) as f64,
    }
}

fn any_item(rng: &mut impl Rng) -> &'static str {
    if rng.random_bool(0.75) {
        NUMERIC.choose(rng).unwrap()
    } else {
        BOOLS.choose(rng).unwrap()
    }
}

pub fn predicate(rng: &mut impl Rng, depth: u32) -> Predicate {
    let leaf = depth == 0 || rng.random_bool(0.45);
    if leaf {
        let item = any_item(rng);
        let op = *CmpOp::ALL.choose(rng).unwrap();
        return match rng.random_range(0..10) {
            0..=4 => Predicate::Compare(Comparison { item: item.into(), op, value: threshold(rng, item) }),
            5..=7 => Predicate::Delta(Comparison { item: item.into(), op, value: delta(rng, item) }),
            8 => Predicate::Bool(BOOLS.choose(rng).unwrap().to_string()),
            _ => Predicate::NoPrevious,
        };
    }
    fn kids(rng: &mut impl Rng, depth: u32) -> Vec<Predicate> {
        (0..rng.random_range(1..=3)).map(|_| predicate(rng, depth - 1)).collect()
    }
    match rng.random_range(0..3) {
        0 => Predicate::All(kids(rng, depth)),
        1 => Predicate::Any(kids(rng, depth)),
        _ => Predicate::Not(Box::new(predicate(rng, depth - 1))),
    }
}

/// A valid ruleset: 1-3 rules for each of Green, Orange and Red (plus maybe Yellow) and a Yellow fallback.
pub fn ruleset(rng: &mut impl Rng) -> RuleSetSource {
    let mut rules = Vec::new();
    for category in TriageCategory::ALL {
        let n = if category == TriageCategory::Yellow { rng.random_range(0..=2) } else { rng.random_range(1..=3) };
        for _ in 0..n {
            rules.push(Rule { name: format!("r{}", rules.len()), category, when: predicate(rng, 3) });
        }
    }
    // Shuffle so category order in the file does not match severity order.
    for i in (1..rules.len()).rev() {
        let j = rng.random_range(0..=i);
        rules.swap(i, j);
    }
    RuleSetSource {
        version: "random".into(),
        note: None,
        rules,
        fallback: Some(Fallback { name: "fallback".into(), category: TriageCategory::Yellow }),
    }
}

pub fn raw_answers(rng: &mut impl Rng) -> RawAnswers {
    let mut a = RawAnswers::new();
    let temp = if rng.random_bool(0.1) { 40.0 } else { (rng.random_range(350..=420) as f64) / 10.0 };
    a.insert("temperature_c".into(), RawAnswer::Number(temp));
    for k in ["dyspnea", "pain", "distress"] {
        a.insert(k.into(), RawAnswer::Number(rng.random_range(0..=10) as f64));
    }
    for k in BOOLS {
        a.insert(k.into(), RawAnswer::Bool(rng.random_bool(0.3)));
    }
    a
}

pub fn report(rng: &mut impl Rng) -> SymptomReport {
    let def = QuestionnaireDefinition::default_set();
    validate_report(&def, &raw_answers(rng), t0(), &PatientId::new("p-random")).unwrap()
}

/// Current report and, four times in five, a previous one.
pub fn report_pair(rng: &mut impl Rng) -> (SymptomReport, Option<SymptomReport>) {
    let cur = report(rng);
    let prev = rng.random_bool(0.8).then(|| report(rng));
    (cur, prev)
}
