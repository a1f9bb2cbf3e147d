//! Anytime branch-and-bound search for the most likely tokenization.
//!
//! The canonical tokenization seeds the incumbent. Depth-first search visits
//! children in decreasing conditional probability and drops a partial path as
//! soon as its log-probability is no better than the incumbent; every further
//! factor is at most 1, so such a path cannot win.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::exact::Scored;
use crate::mdd::{Edge, Mdd};
use crate::model::{Conditioning, ModelError, ScoringModel};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("the canonical tokenization does not spell the diagram's text")]
    CanonicalMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    /// Wall-clock budget; `None` searches to completion.
    pub budget: Option<Duration>,
    /// Worker threads; 0 or 1 runs serially with a deterministic report.
    pub threads: usize,
    /// Keep every pruned partial path in the report.
    pub record_pruned: bool,
}

/// One improvement of the incumbent.
#[derive(Debug, Clone, Serialize)]
pub struct IncumbentUpdate {
    pub logprob: f64,
    pub nodes_expanded: u64,
    pub elapsed_secs: f64,
}

/// A partial path cut off by the bound.
#[derive(Debug, Clone, Serialize)]
pub struct PrunedPrefix {
    pub ids: Vec<TokenId>,
    pub logprob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub best: Scored,
    pub canonical_logprob: f64,
    pub nodes_expanded: u64,
    pub pruned: u64,
    pub timed_out: bool,
    pub elapsed_secs: f64,
    pub improved_over_canonical: bool,
    /// Incumbent values in the order they were found, starting with the
    /// canonical score.
    pub incumbent_trace: Vec<IncumbentUpdate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pruned_prefixes: Vec<PrunedPrefix>,
}

struct Shared<'a> {
    model: &'a dyn ScoringModel,
    mdd: &'a Mdd,
    cond: &'a Conditioning,
    opts: &'a SearchOptions,
    start: Instant,
    incumbent_bits: AtomicU64,
    best: Mutex<(Scored, Vec<IncumbentUpdate>)>,
    expanded: AtomicU64,
    pruned: AtomicU64,
    timed_out: AtomicBool,
    pruned_prefixes: Mutex<Vec<PrunedPrefix>>,
}

impl Shared<'_> {
    fn incumbent(&self) -> f64 {
        f64::from_bits(self.incumbent_bits.load(Ordering::Acquire))
    }

    fn offer(&self, ids: &[TokenId], logprob: f64) {
        let mut best = self.best.lock().expect("incumbent lock");
        if logprob > best.0.logprob {
            best.0 = Scored {
                ids: ids.to_vec(),
                logprob,
            };
            best.1.push(IncumbentUpdate {
                logprob,
                nodes_expanded: self.expanded.load(Ordering::Relaxed),
                elapsed_secs: self.start.elapsed().as_secs_f64(),
            });
            self.incumbent_bits
                .store(logprob.to_bits(), Ordering::Release);
        }
    }

    fn out_of_time(&self) -> bool {
        if self.timed_out.load(Ordering::Relaxed) {
            return true;
        }
        if self.opts.budget.is_some_and(|b| self.start.elapsed() >= b) {
            self.timed_out.store(true, Ordering::Relaxed);
            return true;
        }
        false
    }

    /// Expands `node`: children sorted by decreasing log-probability, ties by
    /// token id.
    fn expand(&self, ctx: &[TokenId], node: usize) -> Result<Vec<(f64, Edge)>, ModelError> {
        self.expanded.fetch_add(1, Ordering::Relaxed);
        let edges = self.mdd.edges(node);
        let cands: Vec<TokenId> = edges.iter().map(|e| e.token).collect();
        let lps = self.model.next_logprobs(ctx, Some(&cands))?;
        let mut kids: Vec<(f64, Edge)> = lps.into_iter().zip(edges.iter().copied()).collect();
        kids.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.token.cmp(&b.1.token)));
        Ok(kids)
    }

    /// Handles the child `(lp, e)` of a partial path with score `partial`;
    /// returns the child's partial score when it should be expanded.
    fn consider(
        &self,
        ctx: &mut Vec<TokenId>,
        partial: f64,
        lp: f64,
        e: Edge,
    ) -> Result<Option<f64>, ModelError> {
        let score = partial + lp;
        let base = self.cond.prefix.len();
        if e.target == self.mdd.terminal() {
            ctx.push(e.token);
            let mut fin = score;
            if let Some(eos) = self.cond.eos {
                fin += self.model.next_logprobs(ctx, Some(&[eos]))?[0];
            }
            self.offer(&ctx[base..], fin);
            ctx.pop();
            return Ok(None);
        }
        if score <= self.incumbent() {
            self.pruned.fetch_add(1, Ordering::Relaxed);
            if self.opts.record_pruned {
                let mut ids = ctx[base..].to_vec();
                ids.push(e.token);
                self.pruned_prefixes
                    .lock()
                    .expect("pruned lock")
                    .push(PrunedPrefix {
                        ids,
                        logprob: score,
                    });
            }
            return Ok(None);
        }
        Ok(Some(score))
    }

    /// Depth-first search below `node`, whose path so far is `ctx`.
    fn dfs(&self, ctx: &mut Vec<TokenId>, node: usize, partial: f64) -> Result<(), ModelError> {
        struct Frame {
            kids: Vec<(f64, Edge)>,
            next: usize,
            partial: f64,
        }
        let depth0 = ctx.len();
        if self.out_of_time() {
            return Ok(());
        }
        let mut stack = vec![Frame {
            kids: self.expand(ctx, node)?,
            next: 0,
            partial,
        }];
        while let Some(top) = stack.last_mut() {
            if top.next == top.kids.len() {
                stack.pop();
                if ctx.len() > depth0 {
                    ctx.pop();
                }
                continue;
            }
            let (lp, e) = top.kids[top.next];
            top.next += 1;
            let partial = top.partial;
            if let Some(score) = self.consider(ctx, partial, lp, e)? {
                if self.out_of_time() {
                    break;
                }
                ctx.push(e.token);
                let kids = self.expand(ctx, e.target)?;
                stack.push(Frame {
                    kids,
                    next: 0,
                    partial: score,
                });
            }
        }
        ctx.truncate(depth0);
        Ok(())
    }
}

/// Runs the search. `canonical` must be a path of `mdd`.
pub fn branch_and_bound(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    canonical: &[TokenId],
    opts: &SearchOptions,
) -> Result<SearchReport, SearchError> {
    if !mdd.contains(canonical) {
        return Err(SearchError::CanonicalMismatch);
    }
    let start = Instant::now();
    let canonical_logprob = cond.score(model, canonical)?.total_logprob;
    let seed = Scored {
        ids: canonical.to_vec(),
        logprob: canonical_logprob,
    };
    let first = IncumbentUpdate {
        logprob: canonical_logprob,
        nodes_expanded: 0,
        elapsed_secs: 0.0,
    };
    let shared = Shared {
        model,
        mdd,
        cond,
        opts,
        start,
        incumbent_bits: AtomicU64::new(canonical_logprob.to_bits()),
        best: Mutex::new((seed, vec![first])),
        expanded: AtomicU64::new(0),
        pruned: AtomicU64::new(0),
        timed_out: AtomicBool::new(false),
        pruned_prefixes: Mutex::new(Vec::new()),
    };

    if mdd.terminal() > 0 {
        let mut ctx = cond.prefix.clone();
        if opts.threads <= 1 {
            shared.dfs(&mut ctx, 0, 0.0)?;
        } else {
            run_parallel(&shared, ctx)?;
        }
    }

    let (best, incumbent_trace) = shared.best.into_inner().expect("incumbent lock");
    Ok(SearchReport {
        improved_over_canonical: best.logprob > canonical_logprob,
        best,
        canonical_logprob,
        nodes_expanded: shared.expanded.into_inner(),
        pruned: shared.pruned.into_inner(),
        timed_out: shared.timed_out.into_inner(),
        elapsed_secs: start.elapsed().as_secs_f64(),
        incumbent_trace,
        pruned_prefixes: shared.pruned_prefixes.into_inner().expect("pruned lock"),
    })
}

/// Expands the root serially, then hands its subtrees to worker threads in
/// decreasing-probability order. The incumbent is shared, so the best value
/// matches the serial run; counters and trace depend on scheduling.
fn run_parallel(shared: &Shared<'_>, mut ctx: Vec<TokenId>) -> Result<(), ModelError> {
    let kids = shared.expand(&ctx, 0)?;
    let mut tasks = Vec::new();
    for (lp, e) in kids {
        if let Some(score) = shared.consider(&mut ctx, 0.0, lp, e)? {
            tasks.push((score, e));
        }
    }
    let next = AtomicUsize::new(0);
    let error: Mutex<Option<ModelError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..shared.opts.threads.min(tasks.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(score, e)) = tasks.get(i) else {
                    break;
                };
                // A task may have become hopeless while queued.
                if score <= shared.incumbent() {
                    shared.pruned.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
                let mut local = ctx.clone();
                local.push(e.token);
                if let Err(err) = shared.dfs(&mut local, e.target, score) {
                    error.lock().expect("error lock").get_or_insert(err);
                    break;
                }
            });
        }
    });
    match error.into_inner().expect("error lock") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
