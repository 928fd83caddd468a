//! Domain types shared by every part of the Command Centre.
//!
//! Everything here is a plain value: no I/O, no clocks, no globals.

mod action;
mod ids;
mod questionnaire;

pub use action::{ActionError, ActionItem, ActionKind, ActionStatus, ActionTrigger};
pub use ids::{ActionId, DispatchId, MessageId, PatientId};
pub use questionnaire::{
    validate_report, Answer, Item, ItemKind, QuestionnaireDefinition, QuestionnaireError,
    RawAnswer, RawAnswers, ReportError, SymptomReport, MAX_ITEMS,
};

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// All timestamps are UTC.
pub type Timestamp = DateTime<Utc>;

/// Severity flag assigned to each report. Declaration order is severity order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriageCategory {
    Green,
    Yellow,
    Orange,
    Red,
}

impl TriageCategory {
    pub const ALL: [TriageCategory; 4] = [
        TriageCategory::Green,
        TriageCategory::Yellow,
        TriageCategory::Orange,
        TriageCategory::Red,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TriageCategory::Green => "green",
            TriageCategory::Yellow => "yellow",
            TriageCategory::Orange => "orange",
            TriageCategory::Red => "red",
        }
    }

    /// Orange and Red hand the patient over to clinicians.
    pub fn needs_clinician(self) -> bool {
        self >= TriageCategory::Orange
    }
}

impl fmt::Display for TriageCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TriageCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "green" => Ok(TriageCategory::Green),
            "yellow" => Ok(TriageCategory::Yellow),
            "orange" => Ok(TriageCategory::Orange),
            "red" => Ok(TriageCategory::Red),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

/// Per-category tally, serialized with stable keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub green: u64,
    pub yellow: u64,
    pub orange: u64,
    pub red: u64,
}

impl CategoryCounts {
    pub fn get(&self, c: TriageCategory) -> u64 {
        match c {
            TriageCategory::Green => self.green,
            TriageCategory::Yellow => self.yellow,
            TriageCategory::Orange => self.orange,
            TriageCategory::Red => self.red,
        }
    }

    pub fn get_mut(&mut self, c: TriageCategory) -> &mut u64 {
        match c {
            TriageCategory::Green => &mut self.green,
            TriageCategory::Yellow => &mut self.yellow,
            TriageCategory::Orange => &mut self.orange,
            TriageCategory::Red => &mut self.red,
        }
    }

    pub fn add(&mut self, c: TriageCategory) {
        *self.get_mut(c) += 1;
    }

    pub fn total(&self) -> u64 {
        self.green + self.yellow + self.orange + self.red
    }
}

/// Clinician assessment recorded at enrollment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eligibility {
    pub no_initial_severity: bool,
    pub quarantine_capable: bool,
    pub can_self_monitor: bool,
    pub consent: bool,
}

impl Eligibility {
    pub const fn all_true() -> Self {
        Eligibility {
            no_initial_severity: true,
            quarantine_capable: true,
            can_self_monitor: true,
            consent: true,
        }
    }

    /// Name of the first unmet criterion, if any.
    pub fn first_unmet(&self) -> Option<&'static str> {
        [
            (self.no_initial_severity, "no_initial_severity"),
            (self.quarantine_capable, "quarantine_capable"),
            (self.can_self_monitor, "can_self_monitor"),
            (self.consent, "consent"),
        ]
        .into_iter()
        .find(|(ok, _)| !ok)
        .map(|(_, name)| name)
    }
}

/// True iff every enrollment criterion holds, consent included.
pub fn check_eligibility(e: &Eligibility) -> bool {
    e.no_initial_severity && e.quarantine_capable && e.can_self_monitor && e.consent
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientStatus {
    Enrolled,
    Monitoring,
    Hospitalized,
    Discharged,
}

impl PatientStatus {
    pub fn receives_dispatches(self) -> bool {
        self == PatientStatus::Monitoring
    }
}

impl FromStr for PatientStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "enrolled" => Ok(PatientStatus::Enrolled),
            "monitoring" => Ok(PatientStatus::Monitoring),
            "hospitalized" => Ok(PatientStatus::Hospitalized),
            "discharged" => Ok(PatientStatus::Discharged),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// Questionnaire cadence for one patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitoringSchedule {
    /// Cadence agreed at enrollment: once or twice a day.
    pub baseline_per_day: u32,
    pub reports_per_day: u32,
    pub escalated: bool,
    pub next_dispatch_at: Timestamp,
    pub overdue_after_minutes: i64,
}

impl MonitoringSchedule {
    pub const DEFAULT_OVERDUE_MINUTES: i64 = 8 * 60;

    /// Baseline schedule; `per_day` must be 1 or 2.
    pub fn baseline(per_day: u32, next_dispatch_at: Timestamp) -> Result<Self, String> {
        if !(1..=2).contains(&per_day) {
            return Err(format!("baseline cadence must be 1 or 2 per day, got {per_day}"));
        }
        Ok(MonitoringSchedule {
            baseline_per_day: per_day,
            reports_per_day: per_day,
            escalated: false,
            next_dispatch_at,
            overdue_after_minutes: Self::DEFAULT_OVERDUE_MINUTES,
        })
    }

    pub fn overdue_after(&self) -> chrono::Duration {
        chrono::Duration::minutes(self.overdue_after_minutes)
    }
}

/// A patient under remote monitoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: PatientId,
    /// Pseudonymized contact handle; never rendered into message bodies or API rows.
    pub phone: String,
    pub gp_contact: Option<String>,
    pub enrolled_at: Timestamp,
    pub eligibility: Eligibility,
    pub schedule: MonitoringSchedule,
    pub current_category: TriageCategory,
    pub overdue: bool,
    pub status: PatientStatus,
}

impl Patient {
    /// Moves an enrolled patient into monitoring. Requires every eligibility criterion.
    pub fn start_monitoring(&mut self) -> Result<(), &'static str> {
        if let Some(unmet) = self.eligibility.first_unmet() {
            return Err(unmet);
        }
        self.status = PatientStatus::Monitoring;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eligibility_is_conjunction_over_all_sixteen_combinations() {
        for bits in 0u8..16 {
            let e = Eligibility {
                no_initial_severity: bits & 1 != 0,
                quarantine_capable: bits & 2 != 0,
                can_self_monitor: bits & 4 != 0,
                consent: bits & 8 != 0,
            };
            assert_eq!(check_eligibility(&e), bits == 15, "bits {bits:04b}");
            assert_eq!(e.first_unmet().is_none(), bits == 15);
        }
    }

    #[test]
    fn eligibility_examples() {
        assert!(check_eligibility(&Eligibility::all_true()));
        let e = Eligibility { can_self_monitor: false, ..Eligibility::all_true() };
        assert!(!check_eligibility(&e));
        let none = Eligibility {
            no_initial_severity: false,
            quarantine_capable: false,
            can_self_monitor: false,
            consent: false,
        };
        assert!(!check_eligibility(&none));
        let no_consent = Eligibility { consent: false, ..Eligibility::all_true() };
        assert_eq!(no_consent.first_unmet(), Some("consent"));
    }

    #[test]
    fn category_order_is_total() {
        use TriageCategory::*;
        assert!(Green < Yellow && Yellow < Orange && Orange < Red);
        assert_eq!(TriageCategory::ALL.len(), 4);
        for c in TriageCategory::ALL {
            assert_eq!(c.as_str().parse::<TriageCategory>().unwrap(), c);
        }
        assert!("purple".parse::<TriageCategory>().is_err());
    }

    #[test]
    fn baseline_schedule_only_once_or_twice_daily() {
        let t = chrono::Utc::now();
        assert!(MonitoringSchedule::baseline(1, t).is_ok());
        assert!(MonitoringSchedule::baseline(2, t).is_ok());
        assert!(MonitoringSchedule::baseline(0, t).is_err());
        assert!(MonitoringSchedule::baseline(3, t).is_err());
    }
}
