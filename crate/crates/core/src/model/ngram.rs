use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{check_ids, log_row, read_file, ModelError, ScoringModel};
use crate::vocab::TokenId;

/// Add-k constant used when training from a corpus unless the file says
/// otherwise.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// n-gram model of order 1 to 3.
///
/// The history of a prefix is its last `order - 1` tokens, or the whole
/// prefix when it is shorter, so sequence starts get their own rows.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    vocab_size: usize,
    rows: Rows,
}

#[derive(Debug, Clone)]
enum Rows {
    /// Explicit log-probability rows; unlisted histories are uniform.
    Table(HashMap<Vec<TokenId>, Vec<f64>>),
    /// Add-k smoothed counts.
    Counts {
        k: f64,
        counts: HashMap<Vec<TokenId>, (u64, HashMap<TokenId, u64>)>,
    },
}

#[derive(Deserialize)]
struct NgramFile {
    order: usize,
    vocab_size: usize,
    #[serde(default)]
    table: Option<Vec<RowFile>>,
    #[serde(default)]
    corpus: Option<Vec<Vec<TokenId>>>,
    #[serde(default)]
    smoothing: Option<f64>,
}

#[derive(Deserialize)]
struct RowFile {
    history: Vec<TokenId>,
    probs: Vec<f64>,
}

fn check_order(order: usize) -> Result<(), ModelError> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(ModelError::Invalid(format!(
            "n-gram order {order} not in 1..=3"
        )))
    }
}

impl NgramModel {
    /// Fully specified model from `(history, probabilities)` rows.
    pub fn from_table(
        order: usize,
        vocab_size: usize,
        rows: impl IntoIterator<Item = (Vec<TokenId>, Vec<f64>)>,
    ) -> Result<Self, ModelError> {
        check_order(order)?;
        let mut table = HashMap::new();
        for (history, probs) in rows {
            if history.len() >= order {
                return Err(ModelError::Invalid(format!(
                    "history {history:?} longer than order {order} allows"
                )));
            }
            check_ids(&history, vocab_size)?;
            let row = log_row(&probs, vocab_size, &format!("row {history:?}"))?;
            if table.insert(history.clone(), row).is_some() {
                return Err(ModelError::Invalid(format!("duplicate row {history:?}")));
            }
        }
        Ok(Self {
            order,
            vocab_size,
            rows: Rows::Table(table),
        })
    }

    /// Counts n-grams in `corpus` and smooths with add-`k`.
    pub fn train(
        order: usize,
        vocab_size: usize,
        corpus: &[Vec<TokenId>],
        k: f64,
    ) -> Result<Self, ModelError> {
        check_order(order)?;
        if k.is_nan() || k <= 0.0 {
            return Err(ModelError::Invalid(format!(
                "smoothing constant {k} must be positive"
            )));
        }
        let mut counts: HashMap<Vec<TokenId>, (u64, HashMap<TokenId, u64>)> = HashMap::new();
        for seq in corpus {
            check_ids(seq, vocab_size)?;
            for i in 0..seq.len() {
                let h = seq[i.saturating_sub(order - 1)..i].to_vec();
                let entry = counts.entry(h).or_default();
                entry.0 += 1;
                *entry.1.entry(seq[i]).or_default() += 1;
            }
        }
        Ok(Self {
            order,
            vocab_size,
            rows: Rows::Counts { k, counts },
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, ModelError> {
        let f: NgramFile =
            serde_json::from_str(json).map_err(|e| ModelError::Invalid(e.to_string()))?;
        match (f.table, f.corpus) {
            (Some(rows), None) => Self::from_table(
                f.order,
                f.vocab_size,
                rows.into_iter().map(|r| (r.history, r.probs)),
            ),
            (None, Some(corpus)) => Self::train(
                f.order,
                f.vocab_size,
                &corpus,
                f.smoothing.unwrap_or(DEFAULT_SMOOTHING),
            ),
            _ => Err(ModelError::Invalid(
                "n-gram file needs exactly one of \"table\" or \"corpus\"".into(),
            )),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json_str(&read_file(path)?)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn history<'p>(&self, prefix: &'p [TokenId]) -> &'p [TokenId] {
        &prefix[prefix.len().saturating_sub(self.order - 1)..]
    }

    fn logprob(&self, history: &[TokenId], t: TokenId) -> f64 {
        let uniform = -(self.vocab_size as f64).ln();
        match &self.rows {
            Rows::Table(table) => table.get(history).map_or(uniform, |row| row[t as usize]),
            Rows::Counts { k, counts } => match counts.get(history) {
                None => uniform,
                Some((total, next)) => {
                    let c = next.get(&t).copied().unwrap_or(0) as f64;
                    ((c + k) / (*total as f64 + k * self.vocab_size as f64)).ln()
                }
            },
        }
    }
}

impl ScoringModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError> {
        let h = self.history(prefix);
        check_ids(h, self.vocab_size)?;
        match candidates {
            Some(c) => {
                check_ids(c, self.vocab_size)?;
                Ok(c.iter().map(|&t| self.logprob(h, t)).collect())
            }
            None => Ok((0..self.vocab_size as TokenId)
                .map(|t| self.logprob(h, t))
                .collect()),
        }
    }

    fn markov_order(&self) -> Option<usize> {
        Some(self.order)
    }
}
