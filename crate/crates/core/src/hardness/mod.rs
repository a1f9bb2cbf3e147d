//! SAT reductions as executable test oracles.
//!
//! A CNF over `n` variables with `K` clauses becomes the string
//! `"abc" × n + "d" × K` over the vocabulary `{a, bc, ab, c, d}`. Each
//! `"abc"` block splits as `[a, bc]` (variable true) or `[ab, c]` (false), so
//! tokenizations are in bijection with assignments, and every tokenization
//! has `2n + K` tokens. A rule-table model then makes the `d` tokens likely
//! exactly when their clause is satisfied.
//!
//! * Most-likely variant: the formula is satisfiable iff the best
//!   tokenization beats `0.5 · 0.45^n · 0.9^(n+K)`.
//! * Marginal variant: the model count is the unique `C` with the marginal
//!   inside `((C - 0.5) · 0.45^n · 0.9^n, (C + 0.5) · 0.45^n · 0.9^n)`.

mod cnf;

use thiserror::Error;

pub use cnf::{CnfError, CnfFormula, Literal, MAX_BRUTE_FORCE_VARS};

use crate::mdd::Mdd;
use crate::model::{check_ids, ModelError, ScoringModel};
use crate::vocab::{TokenId, Vocabulary};

pub const TOK_A: TokenId = 0;
pub const TOK_BC: TokenId = 1;
pub const TOK_AB: TokenId = 2;
pub const TOK_C: TokenId = 3;
pub const TOK_D: TokenId = 4;
pub const REDUCTION_TOKENS: [&str; 5] = ["a", "bc", "ab", "c", "d"];

/// Mass on each of the three tokens that do not start an `"abc"` block.
/// Exactly `(1 - 0.9) / 3` rather than a rounded 0.033, so rows sum to 1.
const BLOCK_START_RESIDUAL: f64 = 0.1 / 3.0;

#[derive(Debug, Error)]
pub enum HardnessError {
    #[error("marginal {0} falls in no count window")]
    NoWindow(f64),
    #[error("count recovery needs the marginal-variant instance")]
    WrongVariant,
    #[error(transparent)]
    Cnf(#[from] CnfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Threshold construction for the most-likely tokenization.
    MostLikely,
    /// Window construction for the marginal string probability.
    Marginal,
}

/// The conditional table of one reduction.
#[derive(Debug, Clone)]
pub struct ReductionModel {
    cnf: CnfFormula,
    variant: Variant,
}

impl ReductionModel {
    fn block_len(&self) -> usize {
        2 * self.cnf.n_vars()
    }

    /// `ε = 0.5^(n + K + 1)` of the marginal variant.
    pub fn epsilon(&self) -> f64 {
        0.5f64.powi((self.cnf.n_vars() + self.cnf.n_clauses() + 1) as i32)
    }

    /// Assignment read off the variable tokens of `prefix`: variable `i`
    /// (1-based) is true iff the token at position `2(i - 1)` is `"a"`.
    fn clause_holds(&self, k: usize, prefix: &[TokenId]) -> bool {
        self.cnf.clauses()[k]
            .iter()
            .any(|l| (prefix[2 * (l.var - 1)] == TOK_A) == l.positive)
    }

    /// Probabilities of all five tokens after `prefix`.
    pub fn row(&self, prefix: &[TokenId]) -> [f64; 5] {
        let i = prefix.len();
        let two_n = self.block_len();
        let starts_block = |hi: f64, lo: f64| [hi, lo, hi, lo, lo];
        if i == 0 {
            return starts_block(0.45, BLOCK_START_RESIDUAL);
        }
        if i < two_n {
            return match prefix[i - 1] {
                TOK_A => [0.025, 0.9, 0.025, 0.025, 0.025],
                TOK_AB => [0.025, 0.025, 0.025, 0.9, 0.025],
                TOK_BC | TOK_C => starts_block(0.45, BLOCK_START_RESIDUAL),
                // A "d" cannot precede position 2n in a tokenization of the
                // reduction string; the row only keeps the model total.
                _ => [0.2; 5],
            };
        }
        let k = i - two_n;
        if k >= self.cnf.n_clauses() {
            return [0.2; 5];
        }
        let sat = self.clause_holds(k, prefix);
        let (d, other) = match (self.variant, sat) {
            (Variant::MostLikely, true) => (0.9, 0.025),
            (Variant::MostLikely, false) => (0.1, 0.225),
            (Variant::Marginal, true) => (1.0 - self.epsilon(), self.epsilon() / 4.0),
            (Variant::Marginal, false) => (self.epsilon(), (1.0 - self.epsilon()) / 4.0),
        };
        [other, other, other, other, d]
    }
}

impl ScoringModel for ReductionModel {
    fn vocab_size(&self) -> usize {
        5
    }

    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError> {
        check_ids(prefix, 5)?;
        let row = self.row(prefix);
        match candidates {
            Some(c) => {
                check_ids(c, 5)?;
                Ok(c.iter().map(|&t| row[t as usize].ln()).collect())
            }
            None => Ok(row.iter().map(|p| p.ln()).collect()),
        }
    }
}

/// String, vocabulary, and model of one reduction.
#[derive(Debug, Clone)]
pub struct ReductionInstance {
    pub text: String,
    pub vocab: Vocabulary,
    pub model: ReductionModel,
}

/// Most-likely-tokenization reduction of `cnf`.
pub fn build_most_likely(cnf: &CnfFormula) -> ReductionInstance {
    ReductionInstance::new(cnf, Variant::MostLikely)
}

/// Marginal-probability reduction of `cnf`.
pub fn build_marginal(cnf: &CnfFormula) -> ReductionInstance {
    ReductionInstance::new(cnf, Variant::Marginal)
}

impl ReductionInstance {
    pub fn new(cnf: &CnfFormula, variant: Variant) -> Self {
        Self {
            text: "abc".repeat(cnf.n_vars()) + &"d".repeat(cnf.n_clauses()),
            vocab: Vocabulary::from_tokens(REDUCTION_TOKENS).expect("fixed vocabulary"),
            model: ReductionModel {
                cnf: cnf.clone(),
                variant,
            },
        }
    }

    pub fn cnf(&self) -> &CnfFormula {
        &self.model.cnf
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    pub fn mdd(&self) -> Mdd {
        Mdd::compile(&self.text, &self.vocab).expect("reduction string is always tokenizable")
    }

    /// Token count shared by every tokenization: `2n + K`.
    pub fn tokenization_len(&self) -> usize {
        2 * self.cnf().n_vars() + self.cnf().n_clauses()
    }

    /// The tokenization encoding `assignment` (index 0 is variable 1).
    pub fn tokenization_of(&self, assignment: &[bool]) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = assignment
            .iter()
            .flat_map(|&v| if v { [TOK_A, TOK_BC] } else { [TOK_AB, TOK_C] })
            .collect();
        ids.extend(std::iter::repeat_n(TOK_D, self.cnf().n_clauses()));
        ids
    }

    /// The assignment encoded by a tokenization.
    pub fn assignment_of(&self, ids: &[TokenId]) -> Vec<bool> {
        (0..self.cnf().n_vars())
            .map(|i| ids[2 * i] == TOK_A)
            .collect()
    }

    /// `ln(0.45^n · 0.9^n)`, the common factor of both constructions.
    pub fn log_base(&self) -> f64 {
        let n = self.cnf().n_vars() as f64;
        n * 0.45f64.ln() + n * 0.9f64.ln()
    }

    /// `ln(0.5 · 0.45^n · 0.9^(n+K))`; the formula is satisfiable iff the
    /// best tokenization scores strictly above it.
    pub fn log_threshold(&self) -> f64 {
        0.5f64.ln() + self.log_base() + self.cnf().n_clauses() as f64 * 0.9f64.ln()
    }

    /// Open window `(ln((C - 0.5) B), ln((C + 0.5) B))` with
    /// `B = 0.45^n · 0.9^n`; the lower edge is `-inf` for `C = 0`.
    pub fn log_window(&self, count: u64) -> (f64, f64) {
        let c = count as f64;
        let lo = if count == 0 {
            f64::NEG_INFINITY
        } else {
            (c - 0.5).ln() + self.log_base()
        };
        (lo, (c + 0.5).ln() + self.log_base())
    }

    /// The unique `C ∈ {0, …, 2^n}` whose window contains `log_marginal`,
    /// found by binary search.
    pub fn recover_count(&self, log_marginal: f64) -> Result<u64, HardnessError> {
        if self.variant() != Variant::Marginal {
            return Err(HardnessError::WrongVariant);
        }
        let max = 1u64 << self.cnf().n_vars();
        // Largest C whose lower edge lies below the marginal.
        let (mut lo, mut hi) = (0u64, max);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.log_window(mid).0 < log_marginal {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        // The C = 0 window is (-0.5 B, 0.5 B), so probability zero is inside.
        let (l, u) = self.log_window(lo);
        if (l < log_marginal || lo == 0) && log_marginal < u {
            Ok(lo)
        } else {
            Err(HardnessError::NoWindow(log_marginal))
        }
    }
}
