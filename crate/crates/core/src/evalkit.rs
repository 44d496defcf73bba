//! Exact match, intent accuracy and well-formedness over prediction sets.

use serde::Serialize;
use thiserror::Error;

use crate::linearizer::{validate, Style, TargetSequence, TargetSymbol, Violation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch { predictions: usize, references: usize },
}

/// Equality after dropping BOS, EOS and PAD.
pub fn exact_match(prediction: &TargetSequence, reference: &TargetSequence) -> bool {
    prediction.content().eq(reference.content())
}

/// Label of the leading intent symbol, if the sequence starts with one.
pub fn intent_of(seq: &TargetSequence) -> Option<&str> {
    match seq.content().next()? {
        TargetSymbol::IntentTag(l) | TargetSymbol::IntentOpen(l) => Some(l),
        _ => None,
    }
}

/// First content position where the two sequences differ.
pub fn first_divergence(prediction: &TargetSequence, reference: &TargetSequence) -> Option<usize> {
    let (p, r) = (prediction.stripped(), reference.stripped());
    let common = p.0.iter().zip(&r.0).take_while(|(a, b)| a == b).count();
    (common < p.len().max(r.len())).then_some(common)
}

#[derive(Clone, Debug)]
pub struct Reference {
    pub target: TargetSequence,
    pub style: Style,
    pub source_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub exact_match: bool,
    /// Absent for span-set references, which have no intent.
    pub intent_correct: Option<bool>,
    pub well_formed: bool,
    pub first_divergence: Option<usize>,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub em_accuracy: f64,
    /// Over references that carry an intent; absent when none do.
    pub intent_accuracy: Option<f64>,
    pub well_formed_rate: f64,
    #[serde(skip)]
    pub records: Vec<ExampleRecord>,
}

pub fn evaluate_one(index: usize, prediction: &TargetSequence, reference: &Reference) -> ExampleRecord {
    let check = validate(&prediction.stripped(), reference.source_len, reference.style);
    let intent_correct = match reference.style {
        Style::SpanSet => None,
        _ => Some(intent_of(prediction).is_some() && intent_of(prediction) == intent_of(&reference.target)),
    };
    ExampleRecord {
        index,
        exact_match: exact_match(prediction, &reference.target),
        intent_correct,
        well_formed: check.well_formed,
        first_divergence: first_divergence(prediction, &reference.target),
        violations: check.violations,
    }
}

pub fn evaluate(predictions: &[TargetSequence], references: &[Reference]) -> Result<EvalReport, EvalError> {
    if predictions.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    let records: Vec<ExampleRecord> = predictions
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (p, r))| evaluate_one(i, p, r))
        .collect();
    Ok(summarize(records))
}

pub fn summarize(records: Vec<ExampleRecord>) -> EvalReport {
    let count = records.len();
    let rate = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    let em = records.iter().filter(|r| r.exact_match).count();
    let wf = records.iter().filter(|r| r.well_formed).count();
    let with_intent: Vec<bool> = records.iter().filter_map(|r| r.intent_correct).collect();
    EvalReport {
        count,
        em_accuracy: rate(em, count),
        intent_accuracy: (!with_intent.is_empty())
            .then(|| rate(with_intent.iter().filter(|&&c| c).count(), with_intent.len())),
        well_formed_rate: rate(wf, count),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TargetSequence {
        s.parse().unwrap()
    }

    fn flat_ref(s: &str, n: usize) -> Reference {
        Reference {
            target: seq(s),
            style: Style::Flat,
            source_len: n,
        }
    }

    #[test]
    fn specials_are_ignored() {
        assert!(exact_match(&seq("<s> A x( @ptr_0 )x </s>"), &seq("A x( @ptr_0 )x")));
        assert!(!exact_match(&seq("A x( @ptr_0 )x"), &seq("A x( @ptr_1 )x")));
    }

    #[test]
    fn metrics() {
        let refs = vec![flat_ref("A x( @ptr_0 )x", 2), flat_ref("B", 2), flat_ref("A", 2)];
        let preds = vec![seq("A x( @ptr_0 )x"), seq("B y( @ptr_1 )y"), seq("x( @ptr_0")];
        let r = evaluate(&preds, &refs).unwrap();
        assert_eq!(r.count, 3);
        assert!((r.em_accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.intent_accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.well_formed_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.records[1].first_divergence, Some(1));
        assert_eq!(r.records[0].first_divergence, None);
        assert!(!r.records[2].violations.is_empty());
    }

    #[test]
    fn span_sets_have_no_intent() {
        let refs = vec![Reference {
            target: seq("E( @ptr_0 )E"),
            style: Style::SpanSet,
            source_len: 1,
        }];
        let r = evaluate(&[seq("E( @ptr_0 )E")], &refs).unwrap();
        assert_eq!(r.intent_accuracy, None);
        assert_eq!(r.em_accuracy, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            evaluate(&[], &[flat_ref("A", 1)]).unwrap_err(),
            EvalError::LengthMismatch {
                predictions: 0,
                references: 1
            }
        );
    }
}
