use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{QuestionnaireDefinition, TriageCategory};

/// Maximum nesting of a rule predicate, leaves counting as depth 1.
pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl CmpOp {
    pub const ALL: [CmpOp; 5] = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ge, CmpOp::Gt];

    #[inline]
    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub item: String,
    pub op: CmpOp,
    pub value: f64,
}

/// Rule condition as written in the ruleset file.
///
/// Booleans read as 0/1 inside `compare` and `delta`. A `delta` compares
/// `current - previous` and is false whenever either value is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Compare(Comparison),
    Delta(Comparison),
    Bool(String),
    NoPrevious,
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn depth(&self) -> usize {
        match self {
            Predicate::All(ps) | Predicate::Any(ps) => {
                1 + ps.iter().map(Predicate::depth).max().unwrap_or(0)
            }
            Predicate::Not(p) => 1 + p.depth(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub category: TriageCategory,
    pub when: Predicate,
}

/// Applies only when no other rule fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub name: String,
    pub category: TriageCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSetSource {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub rules: Vec<Rule>,
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleSetError {
    #[error("ruleset file is not valid JSON: {0}")]
    Parse(String),
    #[error("rule {rule:?} references unknown item {item:?}")]
    UnknownItem { rule: String, item: String },
    #[error("rule {rule:?} is malformed: {reason}")]
    MalformedPredicate { rule: String, reason: String },
    #[error("ruleset needs an unconditional yellow fallback")]
    MissingFallback,
    #[error("no rule for category {0}")]
    MissingCategory(TriageCategory),
    #[error("rule {rule:?} nests deeper than {max}", max = MAX_DEPTH)]
    DepthExceeded { rule: String },
    #[error("duplicate rule name {0:?}")]
    DuplicateRule(String),
}

impl RuleSetError {
    /// The item key for `UnknownItem`, handy for assertions and API messages.
    pub fn unknown_item(&self) -> Option<&str> {
        match self {
            RuleSetError::UnknownItem { item, .. } => Some(item),
            _ => None,
        }
    }
}

impl RuleSetSource {
    pub fn from_json(text: &str) -> Result<Self, RuleSetError> {
        serde_json::from_str(text).map_err(|e| RuleSetError::Parse(e.to_string()))
    }

    /// Structural and referential checks; on success the source is safe to compile.
    pub fn check(&self, def: &QuestionnaireDefinition) -> Result<(), RuleSetError> {
        let fallback = self.fallback.as_ref().ok_or(RuleSetError::MissingFallback)?;
        if fallback.category != TriageCategory::Yellow {
            return Err(RuleSetError::MissingFallback);
        }
        let mut names = HashSet::new();
        names.insert(fallback.name.as_str());
        for rule in &self.rules {
            if !names.insert(rule.name.as_str()) {
                return Err(RuleSetError::DuplicateRule(rule.name.clone()));
            }
            if rule.when.depth() > MAX_DEPTH {
                return Err(RuleSetError::DepthExceeded { rule: rule.name.clone() });
            }
            check_predicate(&rule.name, &rule.when, def)?;
        }
        for category in TriageCategory::ALL {
            let has_rule = self.rules.iter().any(|r| r.category == category)
                || fallback.category == category;
            if !has_rule {
                return Err(RuleSetError::MissingCategory(category));
            }
        }
        Ok(())
    }
}

fn check_predicate(
    rule: &str,
    p: &Predicate,
    def: &QuestionnaireDefinition,
) -> Result<(), RuleSetError> {
    let known = |item: &str| {
        def.item(item).ok_or_else(|| RuleSetError::UnknownItem {
            rule: rule.to_owned(),
            item: item.to_owned(),
        })
    };
    let malformed = |reason: String| RuleSetError::MalformedPredicate { rule: rule.to_owned(), reason };
    match p {
        Predicate::Compare(c) | Predicate::Delta(c) => {
            known(&c.item)?;
            if !c.value.is_finite() {
                return Err(malformed(format!("non-finite constant for {}", c.item)));
            }
        }
        Predicate::Bool(item) => {
            if !known(item)?.kind.is_boolean() {
                return Err(malformed(format!("{item} is not a boolean item")));
            }
        }
        Predicate::NoPrevious => {}
        Predicate::All(ps) | Predicate::Any(ps) => {
            if ps.is_empty() {
                return Err(malformed("empty all/any".into()));
            }
            for q in ps {
                check_predicate(rule, q, def)?;
            }
        }
        Predicate::Not(q) => check_predicate(rule, q, def)?,
    }
    Ok(())
}
