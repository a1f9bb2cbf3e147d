use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_ids, log_row, read_file, ModelError, ScoringModel};
use crate::vocab::TokenId;

/// Which prefixes a row applies to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TableRule {
    /// The prefix equals these ids.
    Exact(Vec<TokenId>),
    /// The prefix ends with these ids.
    Suffix(Vec<TokenId>),
}

/// Conditional table keyed by prefix rules.
///
/// An exact-prefix row wins over suffix rows; among suffix rows the longest
/// match wins; otherwise the default row (uniform unless given) applies.
///
/// File form:
///
/// ```json
/// {"vocab_size": 3,
///  "default": [0.2, 0.3, 0.5],
///  "rules": [{"suffix": [0], "probs": [0.1, 0.1, 0.8]},
///            {"exact": [], "probs": {"2": 0.9}}]}
/// ```
///
/// A `probs` object lists some tokens and spreads the remaining mass evenly
/// over the rest.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab_size: usize,
    default: Vec<f64>,
    exact: HashMap<Vec<TokenId>, Vec<f64>>,
    suffix: HashMap<Vec<TokenId>, Vec<f64>>,
    max_suffix: usize,
    rules: Vec<(TableRule, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<ProbsFile>,
    #[serde(default)]
    rules: Vec<RuleFile>,
}

#[derive(Serialize, Deserialize)]
struct RuleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    suffix: Option<Vec<TokenId>>,
    probs: ProbsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ProbsFile {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, f64>),
}

impl ProbsFile {
    fn dense(self, vocab_size: usize) -> Result<Vec<f64>, ModelError> {
        match self {
            ProbsFile::Dense(v) => Ok(v),
            ProbsFile::Sparse(map) => {
                let mut row = vec![f64::NAN; vocab_size];
                let mut listed = 0.0;
                for (k, p) in map {
                    let t: usize = k.parse().map_err(|_| {
                        ModelError::Invalid(format!("token key {k:?} is not an id"))
                    })?;
                    if t >= vocab_size {
                        return Err(ModelError::UnknownToken(t as TokenId));
                    }
                    row[t] = p;
                    listed += p;
                }
                let rest = row.iter().filter(|p| p.is_nan()).count();
                let fill = if rest == 0 {
                    0.0
                } else {
                    (1.0 - listed) / rest as f64
                };
                for p in row.iter_mut().filter(|p| p.is_nan()) {
                    *p = fill;
                }
                Ok(row)
            }
        }
    }
}

impl TableModel {
    /// Builds the model; every row must be a distribution over
    /// `0..vocab_size` (within 1e-9).
    pub fn new(
        vocab_size: usize,
        default: Option<Vec<f64>>,
        rules: Vec<(TableRule, Vec<f64>)>,
    ) -> Result<Self, ModelError> {
        let default_probs = default.unwrap_or_else(|| vec![1.0 / vocab_size as f64; vocab_size]);
        let default = log_row(&default_probs, vocab_size, "default row")?;
        let mut exact = HashMap::new();
        let mut suffix = HashMap::new();
        let mut max_suffix = 0;
        for (rule, probs) in &rules {
            let row = log_row(probs, vocab_size, &format!("{rule:?}"))?;
            let (map, key) = match rule {
                TableRule::Exact(k) => (&mut exact, k),
                TableRule::Suffix(k) => {
                    max_suffix = max_suffix.max(k.len());
                    (&mut suffix, k)
                }
            };
            check_ids(key, vocab_size)?;
            if map.insert(key.clone(), row).is_some() {
                return Err(ModelError::Invalid(format!("duplicate rule {rule:?}")));
            }
        }
        Ok(Self {
            vocab_size,
            default,
            exact,
            suffix,
            max_suffix,
            rules,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, ModelError> {
        let f: TableFile =
            serde_json::from_str(json).map_err(|e| ModelError::Invalid(e.to_string()))?;
        let default = f.default.map(|p| p.dense(f.vocab_size)).transpose()?;
        let mut rules = Vec::with_capacity(f.rules.len());
        for r in f.rules {
            let rule = match (r.exact, r.suffix) {
                (Some(e), None) => TableRule::Exact(e),
                (None, Some(s)) => TableRule::Suffix(s),
                _ => {
                    return Err(ModelError::Invalid(
                        "each rule needs exactly one of \"exact\" or \"suffix\"".into(),
                    ))
                }
            };
            rules.push((rule, r.probs.dense(f.vocab_size)?));
        }
        Self::new(f.vocab_size, default, rules)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json_str(&read_file(path)?)
    }

    /// Dense JSON form accepted by [`TableModel::from_json_str`].
    pub fn to_json(&self) -> String {
        let f = TableFile {
            vocab_size: self.vocab_size,
            default: Some(ProbsFile::Dense(
                self.default.iter().map(|l| l.exp()).collect(),
            )),
            rules: self
                .rules
                .iter()
                .map(|(rule, probs)| {
                    let (exact, suffix) = match rule {
                        TableRule::Exact(k) => (Some(k.clone()), None),
                        TableRule::Suffix(k) => (None, Some(k.clone())),
                    };
                    RuleFile {
                        exact,
                        suffix,
                        probs: ProbsFile::Dense(probs.clone()),
                    }
                })
                .collect(),
        };
        serde_json::to_string(&f).expect("table serializes")
    }

    fn row(&self, prefix: &[TokenId]) -> &[f64] {
        if let Some(r) = self.exact.get(prefix) {
            return r;
        }
        for len in (0..=self.max_suffix.min(prefix.len())).rev() {
            if let Some(r) = self.suffix.get(&prefix[prefix.len() - len..]) {
                return r;
            }
        }
        &self.default
    }
}

impl ScoringModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError> {
        let row = self.row(prefix);
        match candidates {
            Some(c) => {
                check_ids(c, self.vocab_size)?;
                Ok(c.iter().map(|&t| row[t as usize]).collect())
            }
            None => Ok(row.to_vec()),
        }
    }

    fn markov_order(&self) -> Option<usize> {
        self.exact.is_empty().then_some(self.max_suffix + 1)
    }
}
