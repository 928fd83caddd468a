use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Archetype, CohortSpec};
use crate::model::{ActionTrigger, CategoryCounts, TriageCategory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub spec: CohortSpec,
    pub archetypes: BTreeMap<Archetype, u64>,
    pub dispatches: u64,
    pub total_reports: u64,
    /// Category of every report received.
    pub histogram: CategoryCounts,
    /// Category of every patient when the run ended.
    pub final_categories: CategoryCounts,
    pub actions_by_trigger: BTreeMap<ActionTrigger, u64>,
    pub action_items: u64,
    pub automatic_messages: u64,
    pub overdue_detections: u64,
    pub patient_contacts: u64,
    /// automatic messages / (automatic messages + action items); 1.0 when both are zero.
    pub automation_ratio: f64,
    pub rule_hits: BTreeMap<String, u64>,
    pub invariants: Vec<InvariantCheck>,
    /// Wall-clock time; the only field that varies between identical runs.
    pub runtime_ms: u64,
}

impl SimulationReport {
    pub fn without_runtime(&self) -> Self {
        SimulationReport { runtime_ms: 0, ..self.clone() }
    }

    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    /// Actions per trigger with every trigger present, zeros included.
    fn triggers(&self) -> impl Iterator<Item = (ActionTrigger, u64)> + '_ {
        [
            ActionTrigger::RedFlag,
            ActionTrigger::OrangeFlag,
            ActionTrigger::NonResponder,
            ActionTrigger::PatientInitiated,
            ActionTrigger::MissingGpContact,
        ]
        .into_iter()
        .map(|t| (t, self.actions_by_trigger.get(&t).copied().unwrap_or(0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" | "table" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (json, text, csv)")),
        }
    }
}

fn trigger_name(t: ActionTrigger) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Renders a report.
///
/// CSV columns are `section,key,value`; sections are `histogram` (one row per
/// category), `final_category`, `action`, `archetype`, `rule`, `summary` and
/// `invariant` (value 1 for pass, 0 for fail).
pub fn render(report: &SimulationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("reports serialize") + "\n",
        ReportFormat::Text => text(report),
        ReportFormat::Csv => csv(report),
    }
}

fn text(r: &SimulationReport) -> String {
    let mut out = String::new();
    let s = &r.spec;
    let _ = writeln!(out, "cohort: {} patients, {} days, seed {}", s.n_patients, s.days, s.seed);
    let _ = writeln!(out, "runtime: {} ms", r.runtime_ms);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<10} {:>10}", "category", "reports");
    for c in TriageCategory::ALL {
        let _ = writeln!(out, "{:<10} {:>10}", c.as_str(), r.histogram.get(c));
    }
    let _ = writeln!(out, "{:<10} {:>10}", "total", r.histogram.total());
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<20} {:>10}", "action trigger", "items");
    for (t, n) in r.triggers() {
        let _ = writeln!(out, "{:<20} {:>10}", trigger_name(t), n);
    }
    let _ = writeln!(out, "{:<20} {:>10}", "total", r.action_items);
    let _ = writeln!(out);
    let _ = writeln!(out, "dispatches:          {}", r.dispatches);
    let _ = writeln!(out, "automatic messages:  {}", r.automatic_messages);
    let _ = writeln!(out, "overdue detections:  {}", r.overdue_detections);
    let _ = writeln!(out, "automation ratio:    {:.4}", r.automation_ratio);
    let _ = writeln!(out);
    for c in &r.invariants {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        let _ = writeln!(out, "[{mark}] {} {}", c.name, c.detail);
    }
    out
}

fn csv(r: &SimulationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |section: &str, key: &str, value: String| {
        w.write_record([section, key, value.as_str()]).expect("in-memory write");
    };
    row("section", "key", "value".into());
    for c in TriageCategory::ALL {
        row("histogram", c.as_str(), r.histogram.get(c).to_string());
    }
    for c in TriageCategory::ALL {
        row("final_category", c.as_str(), r.final_categories.get(c).to_string());
    }
    for (t, n) in r.triggers() {
        row("action", &trigger_name(t), n.to_string());
    }
    for (a, n) in &r.archetypes {
        row("archetype", a.as_str(), n.to_string());
    }
    for (rule, n) in &r.rule_hits {
        row("rule", rule, n.to_string());
    }
    row("summary", "dispatches", r.dispatches.to_string());
    row("summary", "total_reports", r.total_reports.to_string());
    row("summary", "action_items", r.action_items.to_string());
    row("summary", "automatic_messages", r.automatic_messages.to_string());
    row("summary", "overdue_detections", r.overdue_detections.to_string());
    row("summary", "patient_contacts", r.patient_contacts.to_string());
    row("summary", "automation_ratio", r.automation_ratio.to_string());
    row("summary", "runtime_ms", r.runtime_ms.to_string());
    for c in &r.invariants {
        row("invariant", &c.name, u8::from(c.passed).to_string());
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
