use super::{check_ids, ModelError, ScoringModel};
use crate::vocab::TokenId;

/// Every token has probability `1 / vocab_size` after every prefix.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    vocab_size: usize,
    logprob: f64,
}

impl UniformModel {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            logprob: -(vocab_size as f64).ln(),
        }
    }
}

impl ScoringModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError> {
        check_ids(prefix, self.vocab_size)?;
        match candidates {
            Some(c) => {
                check_ids(c, self.vocab_size)?;
                Ok(vec![self.logprob; c.len()])
            }
            None => Ok(vec![self.logprob; self.vocab_size]),
        }
    }

    fn markov_order(&self) -> Option<usize> {
        Some(1)
    }
}
