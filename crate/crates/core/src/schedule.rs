//! Questionnaire cadence, non-responder detection and escalation.
//!
//! Nothing in here reads the system clock; every function takes `now`.

use chrono::{Duration, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{DispatchId, MonitoringSchedule, PatientId, PatientStatus, Timestamp, TriageCategory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Hour (UTC) of the first slot of each day.
    pub anchor_hour: u32,
    pub escalation_factor: u32,
    /// Consecutive Green/Yellow reports needed to return to baseline.
    pub calm_streak: usize,
    pub overdue_after_minutes: i64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            anchor_hour: 8,
            escalation_factor: 2,
            calm_streak: 4,
            overdue_after_minutes: MonitoringSchedule::DEFAULT_OVERDUE_MINUTES,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.anchor_hour > 23 {
            return Err(format!("anchor_hour {} is not an hour of the day", self.anchor_hour));
        }
        if self.escalation_factor < 2 {
            return Err("escalation_factor must be at least 2".into());
        }
        for base in [1u32, 2] {
            let escalated = base * self.escalation_factor;
            if 1440 % escalated != 0 {
                return Err(format!("{escalated} dispatches per day do not divide the day evenly"));
            }
        }
        if self.calm_streak == 0 || self.calm_streak > MAX_CALM_STREAK {
            return Err(format!("calm_streak must be within 1..={MAX_CALM_STREAK}"));
        }
        if self.overdue_after_minutes <= 0 {
            return Err("overdue_after_minutes must be positive".into());
        }
        Ok(())
    }
}

/// Upper bound on the calm streak; also how many recent categories patients keep.
pub const MAX_CALM_STREAK: usize = 16;

/// One questionnaire sent and not yet answered or flagged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutstandingDispatch {
    pub dispatch_id: DispatchId,
    pub sent_at: Timestamp,
    pub overdue_reported: bool,
}

/// What [`Scheduler::tick`] needs to know about one patient.
#[derive(Debug, Clone, Copy)]
pub struct TickView<'a> {
    pub patient_id: &'a PatientId,
    pub status: PatientStatus,
    pub schedule: &'a MonitoringSchedule,
    pub outstanding: &'a [OutstandingDispatch],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TickCommand {
    Dispatch { patient_id: PatientId, due_at: Timestamp },
    Overdue { patient_id: PatientId, dispatch_id: DispatchId, sent_at: Timestamp },
}

#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    cfg: ScheduleConfig,
}

impl Scheduler {
    pub fn new(cfg: ScheduleConfig) -> Result<Self, String> {
        cfg.validate()?;
        Ok(Scheduler { cfg })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.cfg
    }

    /// First slot strictly after `now`. Slots are spaced evenly through the
    /// day starting at the anchor hour.
    pub fn next_dispatch(&self, schedule: &MonitoringSchedule, now: Timestamp) -> Timestamp {
        let per_day = i64::from(schedule.reports_per_day.max(1));
        let interval = 86_400 / per_day;
        let anchor_time = NaiveTime::from_hms_opt(self.cfg.anchor_hour, 0, 0).expect("validated hour");
        let anchor = Utc.from_utc_datetime(&now.date_naive().and_time(anchor_time));
        let offset = (now - anchor).num_seconds();
        let k = offset.div_euclid(interval) + 1;
        anchor + Duration::seconds(k * interval)
    }

    /// Unanswered for strictly longer than the overdue window.
    pub fn is_overdue(&self, last_dispatch_at: Timestamp, responded: bool, now: Timestamp) -> bool {
        !responded && now - last_dispatch_at > Duration::minutes(self.cfg.overdue_after_minutes)
    }

    /// Orange or Red multiplies the cadence once; further calls are no-ops.
    pub fn escalate(&self, schedule: &MonitoringSchedule, category: TriageCategory) -> MonitoringSchedule {
        let mut s = schedule.clone();
        if category.needs_clinician() && !s.escalated {
            s.reports_per_day = s.baseline_per_day * self.cfg.escalation_factor;
            s.escalated = true;
        }
        s
    }

    /// Back to baseline once the last `calm_streak` categories are all Green or Yellow.
    pub fn maybe_deescalate(
        &self,
        schedule: &MonitoringSchedule,
        recent: &[TriageCategory],
    ) -> MonitoringSchedule {
        let mut s = schedule.clone();
        let n = self.cfg.calm_streak;
        if s.escalated
            && recent.len() >= n
            && recent[recent.len() - n..].iter().all(|c| *c <= TriageCategory::Yellow)
        {
            s.reports_per_day = s.baseline_per_day;
            s.escalated = false;
        }
        s
    }

    /// Commands due at `now`: one dispatch per due monitored patient and one
    /// overdue detection per unanswered dispatch not already reported.
    pub fn tick<'a>(
        &self,
        now: Timestamp,
        patients: impl IntoIterator<Item = TickView<'a>>,
    ) -> Vec<TickCommand> {
        let mut out = Vec::new();
        for p in patients {
            if !p.status.receives_dispatches() {
                continue;
            }
            for d in p.outstanding {
                if !d.overdue_reported && self.is_overdue(d.sent_at, false, now) {
                    out.push(TickCommand::Overdue {
                        patient_id: p.patient_id.clone(),
                        dispatch_id: d.dispatch_id.clone(),
                        sent_at: d.sent_at,
                    });
                }
            }
            if p.schedule.next_dispatch_at <= now {
                out.push(TickCommand::Dispatch {
                    patient_id: p.patient_id.clone(),
                    due_at: p.schedule.next_dispatch_at,
                });
            }
        }
        out
    }
}
