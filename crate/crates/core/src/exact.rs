//! Exhaustive marginal and most-likely tokenization, plus the Viterbi
//! special case for models of Markov order at most 2.
//!
//! Paths are visited in lexicographic token-id order. Scores are summed
//! left to right, so the most-likely search and Viterbi produce identical
//! floats for the same path. Ties keep the lexicographically smallest
//! sequence.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::logspace::LogSumAccumulator;
use crate::mdd::Mdd;
use crate::model::{Conditioning, ModelError, ScoringModel};
use crate::vocab::TokenId;

/// Default limit on the number of paths enumerated exhaustively.
pub const DEFAULT_PATH_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("{count} tokenizations exceed the enumeration cap of {cap}")]
    TooManyPaths { count: String, cap: u64 },
    #[error("model does not declare Markov order at most 2 (declares {0:?})")]
    ModelNotMarkov(Option<usize>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A token sequence with its log-probability.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Scored {
    pub ids: Vec<TokenId>,
    pub logprob: f64,
}

/// Result of one exhaustive sweep.
#[derive(Debug, Clone)]
pub struct ExactSummary {
    /// `ln Σ_v p(v)` over every path.
    pub marginal: f64,
    /// Highest-scoring path (lexicographically smallest on ties).
    pub best: Scored,
    pub paths: u64,
}

fn check_cap(mdd: &Mdd, cap: u64) -> Result<(), ExactError> {
    if mdd.count_saturating() > cap {
        return Err(ExactError::TooManyPaths {
            count: mdd.count_tokenizations().to_string(),
            cap,
        });
    }
    Ok(())
}

struct Frame {
    node: usize,
    child_lp: Vec<f64>,
    next: usize,
    partial: f64,
}

fn child_logprobs(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    ctx: &[TokenId],
    node: usize,
) -> Result<Vec<f64>, ModelError> {
    let edges = mdd.edges(node);
    if edges.is_empty() {
        return Ok(Vec::new());
    }
    let cands: Vec<TokenId> = edges.iter().map(|e| e.token).collect();
    model.next_logprobs(ctx, Some(&cands))
}

/// Calls `visit(ids, logprob)` for every path in lexicographic order,
/// querying the model once per visited node.
pub fn for_each_scored_path(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    mut visit: impl FnMut(&[TokenId], f64),
) -> Result<(), ModelError> {
    let terminal = mdd.terminal();
    let base = cond.prefix.len();
    let mut ctx = cond.prefix.clone();
    let mut stack = vec![Frame {
        node: 0,
        child_lp: child_logprobs(model, mdd, &ctx, 0)?,
        next: 0,
        partial: 0.0,
    }];
    while let Some(top) = stack.last_mut() {
        if top.node == terminal {
            let mut score = top.partial;
            if let Some(eos) = cond.eos {
                score += model.next_logprobs(&ctx, Some(&[eos]))?[0];
            }
            visit(&ctx[base..], score);
            stack.pop();
            if ctx.len() > base {
                ctx.pop();
            }
            continue;
        }
        let edges = mdd.edges(top.node);
        if top.next < edges.len() {
            let e = edges[top.next];
            let partial = top.partial + top.child_lp[top.next];
            top.next += 1;
            ctx.push(e.token);
            let child_lp = child_logprobs(model, mdd, &ctx, e.target)?;
            stack.push(Frame {
                node: e.target,
                child_lp,
                next: 0,
                partial,
            });
        } else {
            stack.pop();
            if ctx.len() > base {
                ctx.pop();
            }
        }
    }
    Ok(())
}

/// Marginal and argmax in a single sweep.
pub fn exact_summary(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    cap: u64,
) -> Result<ExactSummary, ExactError> {
    check_cap(mdd, cap)?;
    let mut acc = LogSumAccumulator::new();
    let mut best: Option<Scored> = None;
    for_each_scored_path(model, mdd, cond, |ids, lp| {
        acc.add(lp);
        if best.as_ref().is_none_or(|b| lp > b.logprob) {
            best = Some(Scored {
                ids: ids.to_vec(),
                logprob: lp,
            });
        }
    })?;
    Ok(ExactSummary {
        marginal: acc.value(),
        best: best.expect("a compiled diagram has at least one path"),
        paths: acc.count(),
    })
}

/// `ln Σ_v p(v)` over every tokenization in `mdd`.
pub fn exact_marginal(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    cap: u64,
) -> Result<f64, ExactError> {
    Ok(exact_summary(model, mdd, cond, cap)?.marginal)
}

/// The most likely tokenization by enumeration.
pub fn exact_most_likely(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    cap: u64,
) -> Result<Scored, ExactError> {
    Ok(exact_summary(model, mdd, cond, cap)?.best)
}

type StateKey = (usize, Option<TokenId>);

#[derive(Clone, Copy)]
struct State {
    score: f64,
    back: Option<(StateKey, TokenId)>,
}

fn trace(states: &[BTreeMap<Option<TokenId>, State>], mut key: StateKey) -> Vec<TokenId> {
    let mut ids = Vec::new();
    while let Some((prev, token)) = states[key.0][&key.1].back {
        ids.push(token);
        key = prev;
    }
    ids.reverse();
    ids
}

/// Dynamic program over `(position, last token)` states. Requires a model of
/// Markov order at most 2; returns the same path and score as
/// [`exact_most_likely`] without enumerating paths.
pub fn viterbi_bigram(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
) -> Result<Scored, ExactError> {
    let order = model.markov_order();
    let keep_last = match order {
        Some(1) => false,
        Some(2) => true,
        other => return Err(ExactError::ModelNotMarkov(other)),
    };
    let n = mdd.terminal();
    let mut states: Vec<BTreeMap<Option<TokenId>, State>> = vec![BTreeMap::new(); n + 1];
    states[0].insert(
        None,
        State {
            score: 0.0,
            back: None,
        },
    );
    let mut ctx = cond.prefix.clone();
    let base = ctx.len();
    for pos in 0..n {
        let here: Vec<(Option<TokenId>, State)> =
            states[pos].iter().map(|(k, s)| (*k, *s)).collect();
        for (last, st) in here {
            ctx.truncate(base);
            if let Some((_, token)) = st.back {
                ctx.push(token);
            }
            let lps = child_logprobs(model, mdd, &ctx, pos)?;
            for (e, lp) in mdd.edges(pos).iter().zip(lps) {
                let key = if keep_last { Some(e.token) } else { None };
                let cand = State {
                    score: st.score + lp,
                    back: Some(((pos, last), e.token)),
                };
                let replace = match states[e.target].get(&key) {
                    None => true,
                    Some(cur) if cand.score > cur.score => true,
                    Some(cur) if cand.score == cur.score => {
                        let mut new_path = trace(&states, (pos, last));
                        new_path.push(e.token);
                        new_path < trace(&states, (e.target, key))
                    }
                    _ => false,
                };
                if replace {
                    states[e.target].insert(key, cand);
                }
            }
        }
    }

    let mut best: Option<Scored> = None;
    for (&last, st) in &states[n] {
        let ids = trace(&states, (n, last));
        let mut score = st.score;
        if let Some(lp) = cond.eos_logprob(model, &ids)? {
            score += lp;
        }
        let better = match &best {
            None => true,
            Some(b) => score > b.logprob || (score == b.logprob && ids < b.ids),
        };
        if better {
            best = Some(Scored {
                ids,
                logprob: score,
            });
        }
    }
    Ok(best.expect("terminal is reachable in a compiled diagram"))
}
