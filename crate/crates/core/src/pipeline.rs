//! Corpus to ids, ids to predictions, predictions to reports.

use rayon::prelude::*;
use thiserror::Error;

use crate::dataio::{CorpusExample, DataError};
use crate::decode::{self, BeamConfig};
use crate::evalkit::{self, EvalError, EvalReport, Reference};
use crate::linearizer::{LinearizeError, Query, TargetSequence};
use crate::model::{Model, ModelError};
use crate::symtab::{SourceVocab, SymbolTable, SymtabError};
use crate::train::{Encoded, TrainError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Symtab(#[from] SymtabError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] ptrparse_tensor::TensorError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Problems with inputs rather than with the computation.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Linearize(_) | Error::Symtab(_) | Error::Eval(_) | Error::Checkpoint { .. }
        ) || matches!(self, Error::Model(ModelError::SourceTooLong { .. } | ModelError::EmptySource))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Target id used for symbols missing from the table; never predicted.
pub const UNKNOWN_TARGET: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabularies {
    pub symtab: SymbolTable,
    pub source: SourceVocab,
}

impl Vocabularies {
    /// Build from training examples. `max_src_len` defaults to the longest
    /// training query.
    pub fn build(train: &[CorpusExample], max_src_len: Option<usize>) -> Result<Self> {
        let queries: Vec<Query> = train.iter().map(|e| e.query()).collect();
        let targets = train.iter().map(|e| e.target()).collect::<std::result::Result<Vec<_>, _>>()?;
        let symtab = SymbolTable::build(targets.iter().zip(queries.iter().map(Query::len)), max_src_len)?;
        let source = SourceVocab::build(queries.iter().map(|q| q.tokens.as_slice()));
        Ok(Vocabularies { symtab, source })
    }

    /// Strict encoding: unknown target symbols are an error.
    pub fn encode(&self, ex: &CorpusExample) -> Result<Encoded> {
        let q = ex.query();
        Ok(Encoded {
            src: self.source.encode(&q.tokens),
            tgt: self.symtab.encode(&ex.target()?.stripped())?,
        })
    }

    /// Unknown target symbols become [`UNKNOWN_TARGET`] so that the example
    /// still counts, as a miss, in exact match.
    pub fn encode_for_eval(&self, ex: &CorpusExample) -> Result<Encoded> {
        let q = ex.query();
        let tgt = ex
            .target()?
            .stripped()
            .symbols()
            .iter()
            .map(|s| self.symtab.id(s).unwrap_or(UNKNOWN_TARGET))
            .collect();
        Ok(Encoded {
            src: self.source.encode(&q.tokens),
            tgt,
        })
    }

    pub fn encode_all(&self, examples: &[CorpusExample]) -> Result<Vec<Encoded>> {
        examples.iter().map(|e| self.encode(e)).collect()
    }

    pub fn encode_all_for_eval(&self, examples: &[CorpusExample]) -> Result<Vec<Encoded>> {
        examples.iter().map(|e| self.encode_for_eval(e)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub target: TargetSequence,
    pub score: f64,
    pub truncated: bool,
}

/// Beam candidates for one query, best first.
pub fn predict(model: &Model, vocab: &Vocabularies, query: &Query, beam: &BeamConfig) -> Result<Vec<Prediction>> {
    let src = vocab.source.encode(&query.tokens);
    let hyps = decode::beam_ids(model, &src, beam)?;
    hyps.into_iter()
        .map(|h| {
            Ok(Prediction {
                target: vocab.symtab.decode(h.content())?,
                score: h.score,
                truncated: h.truncated,
            })
        })
        .collect()
}

/// Top beam prediction for every example, in parallel, then the report.
pub fn evaluate_corpus(
    model: &Model,
    vocab: &Vocabularies,
    examples: &[CorpusExample],
    beam: &BeamConfig,
) -> Result<(EvalReport, Vec<Prediction>)> {
    let predictions: Vec<Prediction> = examples
        .par_iter()
        .map(|e| {
            let mut out = predict(model, vocab, &e.query(), beam)?;
            Ok(if out.is_empty() {
                Prediction {
                    target: TargetSequence(vec![]),
                    score: f64::NEG_INFINITY,
                    truncated: true,
                }
            } else {
                out.swap_remove(0)
            })
        })
        .collect::<Result<_>>()?;
    let references = examples
        .iter()
        .map(|e| {
            Ok(Reference {
                target: e.target()?,
                style: e.style,
                source_len: e.query().len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<TargetSequence> = predictions.iter().map(|p| p.target.clone()).collect();
    let report = evalkit::evaluate(&targets, &references)?;
    Ok((report, predictions))
}
