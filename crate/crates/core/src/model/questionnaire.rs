//! Questionnaire definitions and report validation.
//!
//! A definition is loaded from a human-editable JSON file (see
//! `assets/questionnaire.json`). Patient answers arrive as loosely typed
//! values (JSON numbers, booleans or form strings) and are validated into a
//! [`SymptomReport`].

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PatientId, Timestamp};

/// Hard ceiling: definitions must have strictly fewer items than this.
pub const MAX_ITEMS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ItemKind {
    Numeric { min: f64, max: f64, unit: String },
    Boolean,
    /// Integer self-rating from 0 to 10.
    #[serde(rename = "scale_0_10")]
    Scale,
}

impl ItemKind {
    pub fn is_boolean(&self) -> bool {
        matches!(self, ItemKind::Boolean)
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            ItemKind::Numeric { min, max, .. } => (*min, *max),
            ItemKind::Boolean => (0.0, 1.0),
            ItemKind::Scale => (0.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub key: String,
    pub label: String,
    pub kind: ItemKind,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuestionnaireError {
    #[error("questionnaire has {0} items; at most {max} allowed", max = MAX_ITEMS - 1)]
    TooManyItems(usize),
    #[error("questionnaire has no items")]
    Empty,
    #[error("duplicate item key {0:?}")]
    DuplicateKey(String),
    #[error("item {0:?} has an empty or invalid numeric range")]
    InvalidRange(String),
    #[error("malformed questionnaire file: {0}")]
    Parse(String),
}

/// Ordered, validated list of questionnaire items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionnaireDefinition {
    items: Vec<Item>,
}

#[derive(Deserialize)]
struct RawDefinition {
    items: Vec<Item>,
}

impl<'de> Deserialize<'de> for QuestionnaireDefinition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawDefinition::deserialize(d)?;
        QuestionnaireDefinition::new(raw.items).map_err(serde::de::Error::custom)
    }
}

impl QuestionnaireDefinition {
    pub fn new(items: Vec<Item>) -> Result<Self, QuestionnaireError> {
        if items.is_empty() {
            return Err(QuestionnaireError::Empty);
        }
        if items.len() >= MAX_ITEMS {
            return Err(QuestionnaireError::TooManyItems(items.len()));
        }
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.key.as_str()) {
                return Err(QuestionnaireError::DuplicateKey(item.key.clone()));
            }
            if let ItemKind::Numeric { min, max, .. } = item.kind {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(QuestionnaireError::InvalidRange(item.key.clone()));
                }
            }
        }
        Ok(QuestionnaireDefinition { items })
    }

    pub fn from_json(text: &str) -> Result<Self, QuestionnaireError> {
        let raw: RawDefinition =
            serde_json::from_str(text).map_err(|e| QuestionnaireError::Parse(e.to_string()))?;
        Self::new(raw.items)
    }

    /// The six-item set shipped in `assets/questionnaire.json`.
    pub fn default_set() -> Self {
        Self::from_json(include_str!("../../assets/questionnaire.json"))
            .expect("shipped questionnaire is valid")
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, key: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.key == key)
    }
}

/// An answer as submitted, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawAnswer {
    Bool(bool),
    Number(f64),
    Text(String),
}

pub type RawAnswers = BTreeMap<String, RawAnswer>;

/// A validated answer value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Bool(bool),
    Number(f64),
}

impl Answer {
    /// Numeric view; booleans read as 0 or 1.
    pub fn as_f64(self) -> f64 {
        match self {
            Answer::Bool(b) => f64::from(u8::from(b)),
            Answer::Number(x) => x,
        }
    }
}

/// One validated questionnaire submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomReport {
    pub patient_id: PatientId,
    pub received_at: Timestamp,
    pub answers: BTreeMap<String, Answer>,
}

impl SymptomReport {
    pub fn value(&self, key: &str) -> Option<f64> {
        self.answers.get(key).map(|a| a.as_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("missing required item {0:?}")]
    MissingRequiredItem(String),
    #[error("{key} = {value} is outside [{min}, {max}]")]
    OutOfRange { key: String, value: f64, min: f64, max: f64 },
    #[error("{key} must be {expected}")]
    WrongType { key: String, expected: &'static str },
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::UnknownItem(_) => "unknown_item",
            ReportError::MissingRequiredItem(_) => "missing_required_item",
            ReportError::OutOfRange { .. } => "out_of_range",
            ReportError::WrongType { .. } => "wrong_type",
        }
    }
}

/// Validates raw answers against a definition.
///
/// Unknown keys are reported first (in key order), then each item is checked
/// in definition order, so the same input always yields the same error.
pub fn validate_report(
    def: &QuestionnaireDefinition,
    raw: &RawAnswers,
    now: Timestamp,
    patient_id: &PatientId,
) -> Result<SymptomReport, ReportError> {
    if let Some(unknown) = raw.keys().find(|k| def.item(k).is_none()) {
        return Err(ReportError::UnknownItem(unknown.clone()));
    }
    let mut answers = BTreeMap::new();
    for item in def.items() {
        let Some(value) = raw.get(&item.key) else {
            if item.required {
                return Err(ReportError::MissingRequiredItem(item.key.clone()));
            }
            continue;
        };
        answers.insert(item.key.clone(), coerce(item, value)?);
    }
    Ok(SymptomReport { patient_id: patient_id.clone(), received_at: now, answers })
}

fn coerce(item: &Item, value: &RawAnswer) -> Result<Answer, ReportError> {
    let wrong = |expected| ReportError::WrongType { key: item.key.clone(), expected };
    match &item.kind {
        ItemKind::Boolean => match value {
            RawAnswer::Bool(b) => Ok(Answer::Bool(*b)),
            RawAnswer::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(Answer::Bool(true)),
                "false" | "no" | "off" | "0" => Ok(Answer::Bool(false)),
                _ => Err(wrong("a boolean")),
            },
            RawAnswer::Number(_) => Err(wrong("a boolean")),
        },
        kind => {
            let expected = if matches!(kind, ItemKind::Scale) { "an integer 0-10" } else { "a number" };
            let x = match value {
                RawAnswer::Number(x) => *x,
                RawAnswer::Text(s) => s.trim().parse::<f64>().map_err(|_| wrong(expected))?,
                RawAnswer::Bool(_) => return Err(wrong(expected)),
            };
            if !x.is_finite() {
                return Err(wrong(expected));
            }
            if matches!(kind, ItemKind::Scale) && x.fract() != 0.0 {
                return Err(wrong(expected));
            }
            let (min, max) = kind.bounds();
            if x < min || x > max {
                return Err(ReportError::OutOfRange { key: item.key.clone(), value: x, min, max });
            }
            Ok(Answer::Number(x))
        }
    }
}
