use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{RawAnswer, RawAnswers};

/// Archetype probabilities; whatever is left over is asymptomatic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub stable: f64,
    pub deteriorating: f64,
    pub quarantine: f64,
    pub nonresponder: f64,
}

impl Mix {
    fn parts(&self) -> [(Archetype, f64); 4] {
        [
            (Archetype::Stable, self.stable),
            (Archetype::Deteriorating, self.deteriorating),
            (Archetype::QuarantineIssue, self.quarantine),
            (Archetype::NonResponder, self.nonresponder),
        ]
    }

    fn pick(&self, u: f64) -> Archetype {
        let mut acc = 0.0;
        for (a, p) in self.parts() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        Archetype::Asymptomatic
    }
}

/// `stable=0.3,deteriorating=0.1,quarantine=0.05,nonresponder=0.1`; omitted keys are 0.
impl FromStr for Mix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mix = Mix::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("bad probability in {part:?}"))?;
            match k.trim() {
                "stable" => mix.stable = v,
                "deteriorating" => mix.deteriorating = v,
                "quarantine" => mix.quarantine = v,
                "nonresponder" => mix.nonresponder = v,
                other => return Err(format!("unknown archetype {other:?}")),
            }
        }
        Ok(mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseDelay {
    /// Mean of the exponential response latency.
    pub mean_minutes: f64,
    /// Latencies are capped here.
    pub max_minutes: u32,
}

impl Default for ResponseDelay {
    fn default() -> Self {
        ResponseDelay { mean_minutes: 30.0, max_minutes: 240 }
    }
}

fn default_per_day() -> u32 {
    2
}

fn default_skip() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_patients: u32,
    pub days: u32,
    pub seed: u64,
    pub mix: Mix,
    #[serde(default = "default_per_day")]
    pub reports_per_day: u32,
    #[serde(default)]
    pub response_delay: ResponseDelay,
    /// Chance that a non-responder ignores a given questionnaire.
    #[serde(default = "default_skip")]
    pub nonresponder_skip_prob: f64,
    /// Daily chance that a patient calls the centre.
    #[serde(default)]
    pub contact_rate_per_day: f64,
}

impl CohortSpec {
    pub fn new(n_patients: u32, days: u32, seed: u64, mix: Mix) -> Self {
        CohortSpec {
            n_patients,
            days,
            seed,
            mix,
            reports_per_day: default_per_day(),
            response_delay: ResponseDelay::default(),
            nonresponder_skip_prob: default_skip(),
            contact_rate_per_day: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if self.days == 0 {
            return bad("days must be at least 1".into());
        }
        for (a, p) in self.mix.parts() {
            if !unit(p) {
                return bad(format!("probability for {a} must be within [0, 1]"));
            }
        }
        let sum: f64 = self.mix.parts().iter().map(|(_, p)| p).sum();
        if sum > 1.0 + 1e-9 {
            return bad(format!("archetype probabilities sum to {sum}, above 1"));
        }
        if !(1..=2).contains(&self.reports_per_day) {
            return bad("reports_per_day must be 1 or 2".into());
        }
        if !unit(self.nonresponder_skip_prob) || !unit(self.contact_rate_per_day) {
            return bad("nonresponder_skip_prob and contact_rate_per_day must be within [0, 1]".into());
        }
        if !(self.response_delay.mean_minutes > 0.0) || self.response_delay.max_minutes > 24 * 60 {
            return bad("response delay needs a positive mean and a cap of at most one day".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Asymptomatic,
    Stable,
    Deteriorating,
    QuarantineIssue,
    NonResponder,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Asymptomatic,
        Archetype::Stable,
        Archetype::Deteriorating,
        Archetype::QuarantineIssue,
        Archetype::NonResponder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Asymptomatic => "asymptomatic",
            Archetype::Stable => "stable",
            Archetype::Deteriorating => "deteriorating",
            Archetype::QuarantineIssue => "quarantine_issue",
            Archetype::NonResponder => "nonresponder",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One questionnaire's worth of answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vitals {
    pub temperature_c: f64,
    pub dyspnea: u8,
    pub pain: u8,
    pub distress: u8,
    pub quarantine_problem: bool,
    pub household_change: bool,
}

impl Vitals {
    pub fn to_raw(&self) -> RawAnswers {
        let mut a = RawAnswers::new();
        a.insert("temperature_c".into(), RawAnswer::Number(self.temperature_c));
        a.insert("dyspnea".into(), RawAnswer::Number(f64::from(self.dyspnea)));
        a.insert("pain".into(), RawAnswer::Number(f64::from(self.pain)));
        a.insert("distress".into(), RawAnswer::Number(f64::from(self.distress)));
        a.insert("quarantine_problem".into(), RawAnswer::Bool(self.quarantine_problem));
        a.insert("household_change".into(), RawAnswer::Bool(self.household_change));
        a
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Temperature ramp per report for deteriorating patients.
pub const RAMP_PER_REPORT: f64 = 0.3;
const FEVER_CAP: f64 = 41.0;

/// The answer script of one synthetic patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScript {
    pub archetype: Archetype,
    pub base_temp: f64,
    pub dyspnea: u8,
    pub pain: u8,
    pub distress: u8,
    /// Deteriorating only: from this report on, temperature is shifted up by the amount.
    pub fever_jump: Option<(u32, f64)>,
    /// Deteriorating only: dyspnea grows by this much every second report.
    pub dyspnea_step: u8,
    /// Quarantine issue only: first day with a problem, and how many days it lasts.
    pub issue_day: u32,
    pub issue_days: u32,
}

impl PatientScript {
    /// Answers for the patient's `report`-th questionnaire (0-based), sent on `day`.
    pub fn answers(&self, report: u32, day: u32) -> Vitals {
        let floor = Vitals {
            temperature_c: self.base_temp,
            dyspnea: self.dyspnea,
            pain: self.pain,
            distress: self.distress,
            quarantine_problem: false,
            household_change: false,
        };
        match self.archetype {
            Archetype::Asymptomatic | Archetype::Stable | Archetype::NonResponder => floor,
            Archetype::Deteriorating => {
                let jump = self.fever_jump.filter(|(at, _)| report >= *at).map_or(0.0, |(_, j)| j);
                let temp = round1(self.base_temp + RAMP_PER_REPORT * f64::from(report) + jump).min(FEVER_CAP);
                let grown = u32::from(self.dyspnea) + u32::from(self.dyspnea_step) * (report / 2);
                Vitals { temperature_c: temp, dyspnea: grown.min(10) as u8, ..floor }
            }
            Archetype::QuarantineIssue => {
                let q = day >= self.issue_day && day < self.issue_day + self.issue_days;
                Vitals { quarantine_problem: q, household_change: q, ..floor }
            }
        }
    }
}

fn asymptomatic(rng: &mut ChaCha8Rng, archetype: Archetype) -> PatientScript {
    PatientScript {
        archetype,
        base_temp: round1(rng.random_range(36.2..37.2)),
        dyspnea: 0,
        pain: 0,
        distress: 0,
        fever_jump: None,
        dyspnea_step: 0,
        issue_day: 0,
        issue_days: 0,
    }
}

/// Draws every patient's script from the seed alone.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<PatientScript>, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scripts = (0..spec.n_patients)
        .map(|_| {
            let archetype = spec.mix.pick(rng.random::<f64>());
            let mut s = asymptomatic(&mut rng, archetype);
            match archetype {
                Archetype::Asymptomatic | Archetype::NonResponder => {}
                Archetype::Stable => {
                    s.base_temp = round1(rng.random_range(37.5..38.4));
                    s.dyspnea = rng.random_range(1..=3);
                    s.pain = rng.random_range(0..=3);
                    s.distress = rng.random_range(0..=3);
                }
                Archetype::Deteriorating => {
                    s.base_temp = round1(rng.random_range(37.0..37.8));
                    s.dyspnea = rng.random_range(1..=2);
                    s.pain = rng.random_range(0..=2);
                    s.dyspnea_step = rng.random_range(1..=2);
                    if rng.random_bool(0.5) {
                        let size = if rng.random_bool(0.5) { 1.2 } else { 2.2 };
                        s.fever_jump = Some((rng.random_range(1..=4), size));
                    }
                }
                Archetype::QuarantineIssue => {
                    s.issue_day = rng.random_range(0..spec.days);
                    s.issue_days = rng.random_range(1..=3);
                }
            }
            s
        })
        .collect();
    Ok(scripts)
}

/// Per-patient stream for latencies, skips and contacts, independent of
/// the order in which patients are visited.
pub fn patient_rng(seed: u64, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(u64::from(index));
    rng
}
