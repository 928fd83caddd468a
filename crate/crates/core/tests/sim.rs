use homewatch_core::model::{ActionTrigger, TriageCategory};
use homewatch_core::sim::{self, CohortSpec, InProcess, Mix, ReportFormat, SimError, SimulationReport};

fn run(spec: &CohortSpec) -> SimulationReport {
    sim::run(spec, &mut InProcess::new()).unwrap_or_else(|e| panic!("{e}"))
}

#[test]
fn asymptomatic_week_needs_no_clinician() {
    let r = run(&CohortSpec::new(20, 7, 1, Mix::default()));
    assert_eq!(r.action_items, 0);
    assert_eq!(r.automation_ratio, 1.0);
    assert_eq!(r.histogram.green, r.total_reports);
    assert_eq!(r.total_reports, 20 * 14);
    assert!(r.all_passed());
}

#[test]
fn single_nonresponder_day_has_one_overdue() {
    let mut spec = CohortSpec::new(1, 1, 3, Mix { nonresponder: 1.0, ..Mix::default() });
    spec.nonresponder_skip_prob = 1.0;
    let r = run(&spec);
    assert_eq!(r.overdue_detections, 1);
    assert_eq!(r.actions_by_trigger.get(&ActionTrigger::NonResponder), Some(&1));
    assert_eq!(r.action_items, 1);
    assert_eq!(r.total_reports, 0);
}

#[test]
fn mixed_cohort_is_deterministic_and_consistent() {
    let mut spec = CohortSpec::new(150, 5, 7, "stable=0.3,deteriorating=0.15,quarantine=0.1,nonresponder=0.1".parse().unwrap());
    spec.contact_rate_per_day = 0.05;
    let a = run(&spec);
    let b = run(&spec);
    assert_eq!(
        sim::render(&a.without_runtime(), ReportFormat::Json),
        sim::render(&b.without_runtime(), ReportFormat::Json)
    );
    assert!(a.all_passed(), "{:?}", a.invariants);
    assert_eq!(a.automatic_messages, a.histogram.green + a.histogram.yellow);
    assert_eq!(
        a.action_items,
        a.histogram.orange + a.histogram.red + a.overdue_detections + a.patient_contacts
    );
    assert!(a.patient_contacts > 0 && a.overdue_detections > 0);
    let names: Vec<_> = a.invariants.iter().map(|c| c.name.as_str()).collect();
    assert!(names.contains(&"categories_match_reference_interpreter"));
    assert!(names.contains(&"replay_reproduces_state"));
}

#[test]
fn archetypes_cover_every_default_rule() {
    let spec = CohortSpec::new(300, 7, 11, "stable=0.25,deteriorating=0.3,quarantine=0.2,nonresponder=0.05".parse().unwrap());
    let r = run(&spec);
    let rules = homewatch_core::RuleSet::default_v1();
    for name in rules.rule_names() {
        assert!(r.rule_hits.get(name).copied().unwrap_or(0) > 0, "rule {name} never fired");
    }
    for c in TriageCategory::ALL {
        assert!(r.histogram.get(c) > 0, "no {c} reports");
    }
}

#[test]
fn report_formats() {
    let r = run(&CohortSpec::new(30, 2, 5, "stable=0.5,deteriorating=0.2".parse().unwrap()));
    let json = sim::render(&r, ReportFormat::Json);
    let back: SimulationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);

    let csv = sim::render(&r, ReportFormat::Csv);
    assert!(csv.starts_with("section,key,value\n"));
    let hist: Vec<&str> = csv.lines().filter(|l| l.starts_with("histogram,")).collect();
    assert_eq!(hist.len(), 4);
    let sum: u64 = hist.iter().map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(sum, r.total_reports);

    let text = sim::render(&r, ReportFormat::Text);
    let rows: Vec<u64> = TriageCategory::ALL
        .iter()
        .map(|c| {
            let line = text.lines().find(|l| l.starts_with(c.as_str())).unwrap();
            line.split_whitespace().last().unwrap().parse().unwrap()
        })
        .collect();
    let total_line = text.lines().find(|l| l.starts_with("total")).unwrap();
    let total: u64 = total_line.split_whitespace().last().unwrap().parse().unwrap();
    assert_eq!(rows.iter().sum::<u64>(), total);
    assert!("xml".parse::<ReportFormat>().is_err());
}

#[test]
fn invalid_spec_is_rejected_before_running() {
    let spec = CohortSpec::new(5, 1, 0, "stable=0.9,deteriorating=0.9".parse().unwrap());
    assert!(matches!(sim::run(&spec, &mut InProcess::new()), Err(SimError::InvalidSpec(_))));
}
