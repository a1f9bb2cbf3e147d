//! The autoregressive scoring contract and its built-in implementations.
//!
//! A [`ScoringModel`] returns natural-log conditional probabilities
//! `ln p(t | prefix)` for a set of candidate tokens. Values are not
//! renormalized over the candidates; callers that need a distribution over a
//! subset (the look-ahead proposal) renormalize themselves.

mod ngram;
mod remote;
mod table;
mod uniform;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::vocab::TokenId;

pub use ngram::NgramModel;
pub use remote::{RemoteModel, BRIDGE_URL_ENV};
pub use table::{TableModel, TableRule};
pub use uniform::UniformModel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {0} is outside the model vocabulary")]
    UnknownToken(TokenId),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model definition: {0}")]
    Invalid(String),
    #[error(
        "unknown model spec {0:?} (expected uniform, ngram:<file>, table:<file>, remote[:<url>])"
    )]
    BadSpec(String),
}

/// One next-token query: a prefix and an optional candidate subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub prefix: Vec<TokenId>,
    pub candidates: Option<Vec<TokenId>>,
}

pub trait ScoringModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// `ln p(c | prefix)` for each candidate `c` in order, or for every id
    /// `0..vocab_size` when `candidates` is `None`.
    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError>;

    /// Several queries at once. Remote models send them in one request.
    fn next_logprobs_batch(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>, ModelError> {
        queries
            .iter()
            .map(|q| self.next_logprobs(&q.prefix, q.candidates.as_deref()))
            .collect()
    }

    /// `Some(n)` when `p(t | prefix)` depends only on the last `n - 1`
    /// tokens of the prefix (1 = unigram, 2 = bigram).
    fn markov_order(&self) -> Option<usize> {
        None
    }

    /// Begin-of-sequence id the model expects in front of every sequence.
    fn bos_id(&self) -> Option<TokenId> {
        None
    }
}

impl<M: ScoringModel + ?Sized> ScoringModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError> {
        (**self).next_logprobs(prefix, candidates)
    }
    fn next_logprobs_batch(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>, ModelError> {
        (**self).next_logprobs_batch(queries)
    }
    fn markov_order(&self) -> Option<usize> {
        (**self).markov_order()
    }
    fn bos_id(&self) -> Option<TokenId> {
        (**self).bos_id()
    }
}

/// Checks candidate ids against the vocabulary size.
pub(crate) fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<(), ModelError> {
    match ids.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&t) => Err(ModelError::UnknownToken(t)),
        None => Ok(()),
    }
}

/// Per-token and total log-probability of a scored sequence.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SequenceScore {
    pub total_logprob: f64,
    pub per_step: Vec<f64>,
}

impl SequenceScore {
    fn from_steps(per_step: Vec<f64>) -> Self {
        Self {
            total_logprob: per_step.iter().sum(),
            per_step,
        }
    }
}

/// Chain-rule score of `ids` from an empty prefix.
pub fn score_sequence(
    model: &dyn ScoringModel,
    ids: &[TokenId],
) -> Result<SequenceScore, ModelError> {
    score_continuation(model, &[], ids)
}

/// Chain-rule score of `ids` after a fixed `context` (not itself scored).
pub fn score_continuation(
    model: &dyn ScoringModel,
    context: &[TokenId],
    ids: &[TokenId],
) -> Result<SequenceScore, ModelError> {
    let mut prefix = context.to_vec();
    let mut steps = Vec::with_capacity(ids.len());
    for &t in ids {
        steps.push(model.next_logprobs(&prefix, Some(&[t]))?[0]);
        prefix.push(t);
    }
    Ok(SequenceScore::from_steps(steps))
}

/// What a tokenization of the text is conditioned on: a fixed prefix of ids
/// (BOS and/or a context) and an optional end-of-sequence factor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conditioning {
    pub prefix: Vec<TokenId>,
    pub eos: Option<TokenId>,
}

impl Conditioning {
    /// Empty context, BOS prepended when `with_bos` is set and the model has
    /// one.
    pub fn for_model(model: &dyn ScoringModel, with_bos: bool) -> Self {
        Self {
            prefix: model.bos_id().filter(|_| with_bos).into_iter().collect(),
            eos: None,
        }
    }

    pub fn with_context(mut self, context: &[TokenId]) -> Self {
        self.prefix.extend_from_slice(context);
        self
    }

    pub fn with_eos(mut self, eos: Option<TokenId>) -> Self {
        self.eos = eos;
        self
    }

    /// Full conditional score of `ids`, including the EOS factor if set.
    pub fn score(
        &self,
        model: &dyn ScoringModel,
        ids: &[TokenId],
    ) -> Result<SequenceScore, ModelError> {
        let mut s = score_continuation(model, &self.prefix, ids)?;
        if let Some(lp) = self.eos_logprob(model, ids)? {
            s.per_step.push(lp);
            s.total_logprob = s.per_step.iter().sum();
        }
        Ok(s)
    }

    /// `ln p(eos | prefix, ids)` when an EOS factor is configured.
    pub fn eos_logprob(
        &self,
        model: &dyn ScoringModel,
        ids: &[TokenId],
    ) -> Result<Option<f64>, ModelError> {
        match self.eos {
            None => Ok(None),
            Some(eos) => {
                let mut p = self.prefix.clone();
                p.extend_from_slice(ids);
                Ok(Some(model.next_logprobs(&p, Some(&[eos]))?[0]))
            }
        }
    }
}

/// Parses a model spec: `uniform`, `ngram:<file>`, `table:<file>`,
/// `remote:<url>` or bare `remote` (URL from the environment).
pub fn from_spec(spec: &str, vocab_size: usize) -> Result<Box<dyn ScoringModel>, ModelError> {
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    let model: Box<dyn ScoringModel> = match (kind, arg) {
        ("uniform", None) => Box::new(UniformModel::new(vocab_size)),
        ("ngram", Some(path)) => Box::new(NgramModel::load(Path::new(path))?),
        ("table", Some(path)) => Box::new(TableModel::load(Path::new(path))?),
        ("remote", url) => {
            let url = match url {
                Some(u) => u.to_string(),
                None => std::env::var(BRIDGE_URL_ENV).map_err(|_| {
                    ModelError::BadSpec(format!(
                        "remote (set {BRIDGE_URL_ENV} or use remote:<url>)"
                    ))
                })?,
            };
            Box::new(RemoteModel::connect(&url)?)
        }
        _ => return Err(ModelError::BadSpec(spec.to_string())),
    };
    if model.vocab_size() != vocab_size {
        return Err(ModelError::Invalid(format!(
            "model covers {} tokens but the vocabulary has {vocab_size}",
            model.vocab_size()
        )));
    }
    Ok(model)
}

pub(crate) fn read_file(path: &Path) -> Result<String, ModelError> {
    std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Validates a dense probability row and converts it to log space.
pub(crate) fn log_row(
    probs: &[f64],
    vocab_size: usize,
    what: &str,
) -> Result<Vec<f64>, ModelError> {
    if probs.len() != vocab_size {
        return Err(ModelError::Invalid(format!(
            "{what}: {} probabilities for {vocab_size} tokens",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ModelError::Invalid(format!(
            "{what}: probability outside [0, 1]"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ModelError::Invalid(format!(
            "{what}: probabilities sum to {total}"
        )));
    }
    Ok(probs.iter().map(|p| p.ln()).collect())
}
