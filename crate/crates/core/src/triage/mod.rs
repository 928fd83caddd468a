//! Deterministic triage of symptom reports into four severity categories.
//!
//! Rules are loaded from JSON, checked against the questionnaire, and
//! compiled into flat postfix programs over item slots. Classification is
//! highest-severity-wins over the rules that fire; the mandatory yellow
//! fallback applies only when no rule fires at all. The [`reference`]
//! module re-implements the same semantics as a plain tree walk and serves
//! as an oracle in tests and simulator cross-checks.

pub mod reference;
mod ruleset;

pub use ruleset::{
    CmpOp, Comparison, Fallback, Predicate, Rule, RuleSetError, RuleSetSource, MAX_DEPTH,
};

use serde::{Deserialize, Serialize};

use crate::model::{QuestionnaireDefinition, SymptomReport, TriageCategory};

/// Outcome of classifying one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triage {
    pub category: TriageCategory,
    /// Names of the rules that fired in the winning category, in file order.
    pub fired: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Compare { slot: usize, op: CmpOp, value: f64 },
    Delta { slot: usize, op: CmpOp, value: f64 },
    Truthy { slot: usize },
    NoPrevious,
    And(usize),
    Or(usize),
    Not,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    name: String,
    category: TriageCategory,
    program: Vec<Instr>,
}

/// A validated, compiled, immutable ruleset.
#[derive(Debug, Clone)]
pub struct RuleSet {
    version: String,
    source: RuleSetSource,
    slots: Vec<String>,
    /// Sorted by category, most severe first; file order within a category.
    rules: Vec<CompiledRule>,
    fallback: Fallback,
}

impl RuleSet {
    pub fn load(text: &str, def: &QuestionnaireDefinition) -> Result<Self, RuleSetError> {
        Self::from_source(RuleSetSource::from_json(text)?, def)
    }

    pub fn from_source(
        source: RuleSetSource,
        def: &QuestionnaireDefinition,
    ) -> Result<Self, RuleSetError> {
        source.check(def)?;
        let slots: Vec<String> = def.items().iter().map(|i| i.key.clone()).collect();
        let slot_of = |key: &str| slots.iter().position(|s| s == key).expect("checked at load");
        let mut rules: Vec<CompiledRule> = source
            .rules
            .iter()
            .map(|r| {
                let mut program = Vec::new();
                compile(&r.when, &slot_of, &mut program);
                CompiledRule { name: r.name.clone(), category: r.category, program }
            })
            .collect();
        rules.sort_by(|a, b| b.category.cmp(&a.category));
        Ok(RuleSet {
            version: source.version.clone(),
            fallback: source.fallback.clone().expect("checked at load"),
            source,
            slots,
            rules,
        })
    }

    /// The shipped `default-v1` ruleset over the default questionnaire.
    pub fn default_v1() -> Self {
        Self::load(DEFAULT_V1, &QuestionnaireDefinition::default_set())
            .expect("shipped ruleset is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn source(&self) -> &RuleSetSource {
        &self.source
    }

    pub fn rule_names(&self) -> impl Iterator<Item = &str> {
        self.source
            .rules
            .iter()
            .map(|r| r.name.as_str())
            .chain(std::iter::once(self.fallback.name.as_str()))
    }

    /// Classifies `current`, using `previous` for change-over-time atoms.
    pub fn evaluate(&self, current: &SymptomReport, previous: Option<&SymptomReport>) -> Triage {
        let cur = self.frame(current);
        let prev = previous.map(|p| self.frame(p));
        let mut stack = Vec::with_capacity(8);
        let mut winner: Option<TriageCategory> = None;
        let mut fired = Vec::new();
        for rule in &self.rules {
            if winner.is_some_and(|w| rule.category < w) {
                break;
            }
            if run(&rule.program, &cur, prev.as_deref(), &mut stack) {
                winner = Some(rule.category);
                fired.push(rule.name.clone());
            }
        }
        match winner {
            Some(category) => Triage { category, fired },
            None => Triage { category: self.fallback.category, fired: vec![self.fallback.name.clone()] },
        }
    }

    pub fn classify(&self, current: &SymptomReport, previous: Option<&SymptomReport>) -> TriageCategory {
        self.evaluate(current, previous).category
    }

    /// Rules of the winning category that fired, as `(name, fired)` pairs.
    pub fn explain(
        &self,
        current: &SymptomReport,
        previous: Option<&SymptomReport>,
    ) -> Vec<(String, bool)> {
        self.evaluate(current, previous).fired.into_iter().map(|n| (n, true)).collect()
    }

    fn frame(&self, report: &SymptomReport) -> Vec<Option<f64>> {
        self.slots.iter().map(|k| report.value(k)).collect()
    }
}

pub const DEFAULT_V1: &str = include_str!("../../assets/ruleset-default-v1.json");

fn compile(p: &Predicate, slot_of: &dyn Fn(&str) -> usize, out: &mut Vec<Instr>) {
    match p {
        Predicate::Compare(c) => {
            out.push(Instr::Compare { slot: slot_of(&c.item), op: c.op, value: c.value })
        }
        Predicate::Delta(c) => out.push(Instr::Delta { slot: slot_of(&c.item), op: c.op, value: c.value }),
        Predicate::Bool(item) => out.push(Instr::Truthy { slot: slot_of(item) }),
        Predicate::NoPrevious => out.push(Instr::NoPrevious),
        Predicate::All(ps) => {
            ps.iter().for_each(|q| compile(q, slot_of, out));
            out.push(Instr::And(ps.len()));
        }
        Predicate::Any(ps) => {
            ps.iter().for_each(|q| compile(q, slot_of, out));
            out.push(Instr::Or(ps.len()));
        }
        Predicate::Not(q) => {
            compile(q, slot_of, out);
            out.push(Instr::Not);
        }
    }
}

fn run(
    program: &[Instr],
    cur: &[Option<f64>],
    prev: Option<&[Option<f64>]>,
    stack: &mut Vec<bool>,
) -> bool {
    stack.clear();
    for instr in program {
        let v = match *instr {
            Instr::Compare { slot, op, value } => cur[slot].is_some_and(|x| op.apply(x, value)),
            Instr::Delta { slot, op, value } => match (cur[slot], prev.and_then(|p| p[slot])) {
                (Some(c), Some(p)) => op.apply(c - p, value),
                _ => false,
            },
            Instr::Truthy { slot } => cur[slot].is_some_and(|x| x != 0.0),
            Instr::NoPrevious => prev.is_none(),
            Instr::And(n) => {
                let at = stack.len() - n;
                let all = stack[at..].iter().all(|&b| b);
                stack.truncate(at);
                all
            }
            Instr::Or(n) => {
                let at = stack.len() - n;
                let any = stack[at..].iter().any(|&b| b);
                stack.truncate(at);
                any
            }
            Instr::Not => !stack.pop().expect("well-formed program"),
        };
        stack.push(v);
    }
    stack.pop().expect("non-empty program")
}
