//! Naive tree-walking interpreter for rulesets.
//!
//! Shares no code with the compiled evaluator: it walks the source AST,
//! looks items up by name, and scans every rule. Used as an oracle.

use std::collections::HashMap;

use super::{Predicate, RuleSetSource, Triage};
use crate::model::{SymptomReport, TriageCategory};

type Values = HashMap<String, f64>;

fn values(r: &SymptomReport) -> Values {
    r.answers.iter().map(|(k, a)| (k.clone(), a.as_f64())).collect()
}

pub fn holds(p: &Predicate, cur: &Values, prev: Option<&Values>) -> bool {
    match p {
        Predicate::Compare(c) => match cur.get(&c.item) {
            Some(&x) => c.op.apply(x, c.value),
            None => false,
        },
        Predicate::Delta(c) => {
            let Some(prev) = prev else { return false };
            match (cur.get(&c.item), prev.get(&c.item)) {
                (Some(&a), Some(&b)) => c.op.apply(a - b, c.value),
                _ => false,
            }
        }
        Predicate::Bool(k) => cur.get(k).map(|&x| x != 0.0).unwrap_or(false),
        Predicate::NoPrevious => prev.is_none(),
        Predicate::All(ps) => {
            let mut ok = true;
            for q in ps {
                ok = ok && holds(q, cur, prev);
            }
            ok
        }
        Predicate::Any(ps) => {
            let mut ok = false;
            for q in ps {
                ok = ok || holds(q, cur, prev);
            }
            ok
        }
        Predicate::Not(q) => !holds(q, cur, prev),
    }
}

/// Evaluates every rule, then picks the most severe category that fired.
pub fn evaluate(src: &RuleSetSource, current: &SymptomReport, previous: Option<&SymptomReport>) -> Triage {
    let cur = values(current);
    let prev = previous.map(values);
    let fired: Vec<(TriageCategory, &str)> = src
        .rules
        .iter()
        .filter(|r| holds(&r.when, &cur, prev.as_ref()))
        .map(|r| (r.category, r.name.as_str()))
        .collect();
    let fallback = src.fallback.as_ref().expect("validated ruleset");
    let mut best: Option<TriageCategory> = None;
    for (c, _) in &fired {
        if best.map_or(true, |b| *c > b) {
            best = Some(*c);
        }
    }
    match best {
        None => Triage { category: fallback.category, fired: vec![fallback.name.clone()] },
        Some(best) => Triage {
            category: best,
            fired: fired
                .into_iter()
                .filter(|(c, _)| *c == best)
                .map(|(_, n)| n.to_owned())
                .collect(),
        },
    }
}

pub fn classify(
    src: &RuleSetSource,
    current: &SymptomReport,
    previous: Option<&SymptomReport>,
) -> TriageCategory {
    evaluate(src, current, previous).category
}
