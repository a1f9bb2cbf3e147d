//! Sequential importance sampling with the one-step look-ahead proposal.
//!
//! At each node the proposal is the model's next-token distribution
//! restricted to the node's outgoing edges and renormalized. Dead ends are
//! trimmed from the diagram, so every walk reaches the terminal. The
//! importance weight of a sample is `ln p(v) - ln q(v)`.
//!
//! Sample `i` draws from a ChaCha8 stream selected by `i` under the run
//! seed, so results do not depend on how samples are split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::logspace::{format_sig, log_sum_exp, log_sum_exp_pairwise};
use crate::mdd::Mdd;
use crate::model::{Conditioning, ModelError, ScoringModel};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalSample {
    pub ids: Vec<TokenId>,
    pub target_logprob: f64,
    pub proposal_logprob: f64,
    /// `target_logprob - proposal_logprob`.
    pub weight: f64,
}

/// Generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one tokenization from the look-ahead proposal.
pub fn sample_tokenization<R: Rng + ?Sized>(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    rng: &mut R,
) -> Result<ProposalSample, ModelError> {
    let terminal = mdd.terminal();
    let base = cond.prefix.len();
    let mut ctx = cond.prefix.clone();
    let mut pos = 0;
    let mut target = 0.0;
    let mut proposal = 0.0;
    let mut cands: Vec<TokenId> = Vec::new();
    while pos != terminal {
        let edges = mdd.edges(pos);
        cands.clear();
        cands.extend(edges.iter().map(|e| e.token));
        let lps = model.next_logprobs(&ctx, Some(&cands))?;
        let z = log_sum_exp(&lps);
        let k = if edges.len() == 1 {
            0
        } else if z == f64::NEG_INFINITY {
            // The model rules out every continuation; walk on uniformly so
            // the sample still completes (its weight is -inf).
            rng.random_range(0..edges.len())
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = edges.len() - 1;
            for (i, lp) in lps.iter().enumerate() {
                acc += (lp - z).exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        proposal += if z == f64::NEG_INFINITY {
            -(edges.len() as f64).ln()
        } else if edges.len() == 1 {
            0.0
        } else {
            lps[k] - z
        };
        target += lps[k];
        ctx.push(edges[k].token);
        pos = edges[k].target;
    }
    if let Some(eos) = cond.eos {
        target += model.next_logprobs(&ctx, Some(&[eos]))?[0];
    }
    Ok(ProposalSample {
        ids: ctx.split_off(base),
        target_logprob: target,
        proposal_logprob: proposal,
        weight: target - proposal,
    })
}

/// Draws samples `0..n` of the run `seed`, splitting indices over
/// `threads` workers. Output order is by sample index.
pub fn draw_samples(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<ProposalSample>, ModelError> {
    let one = |i: usize| sample_tokenization(model, mdd, cond, &mut sample_rng(seed, i as u64));
    if threads <= 1 || n < 2 {
        return (0..n).map(one).collect();
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<ProposalSample>, ModelError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| {
                let hi = (lo + chunk).min(n);
                s.spawn(move || (lo..hi).map(one).collect::<Result<Vec<_>, _>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub n: usize,
    pub log_estimate: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalEstimate {
    /// `ln((1/N) Σ exp(w_i))`.
    pub log_estimate: f64,
    pub n_samples: usize,
    /// `(Σ w)² / Σ w²` over probability-space weights.
    pub ess: f64,
    /// Running estimates at 1, 2, 4, ... and at `N`.
    pub trace: Vec<TracePoint>,
}

fn ess(log_weights: &[f64]) -> f64 {
    let s1 = log_sum_exp_pairwise(log_weights);
    if s1 == f64::NEG_INFINITY {
        return 0.0;
    }
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * w).collect();
    (2.0 * s1 - log_sum_exp_pairwise(&doubled)).exp()
}

fn point(log_weights: &[f64]) -> TracePoint {
    let n = log_weights.len();
    TracePoint {
        n,
        log_estimate: log_sum_exp_pairwise(log_weights) - (n as f64).ln(),
        ess: ess(log_weights),
    }
}

impl MarginalEstimate {
    /// Aggregates log importance weights in sample order.
    pub fn from_log_weights(log_weights: &[f64]) -> Self {
        let n = log_weights.len();
        let mut trace = Vec::new();
        let mut k = 1;
        while k < n {
            trace.push(point(&log_weights[..k]));
            k *= 2;
        }
        let last = if n == 0 {
            TracePoint {
                n: 0,
                log_estimate: f64::NEG_INFINITY,
                ess: 0.0,
            }
        } else {
            point(log_weights)
        };
        trace.push(last.clone());
        Self {
            log_estimate: last.log_estimate,
            n_samples: n,
            ess: last.ess,
            trace,
        }
    }

    /// Trace as CSV with header `n,log_estimate,ess`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("n,log_estimate,ess\n");
        for p in &self.trace {
            out.push_str(&format!(
                "{},{},{}\n",
                p.n,
                format_sig(p.log_estimate, 12),
                format_sig(p.ess, 12)
            ));
        }
        out
    }
}

/// Estimates `ln Σ_v p(v)` from `n` proposal samples.
pub fn estimate_marginal(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<MarginalEstimate, ModelError> {
    let samples = draw_samples(model, mdd, cond, n, seed, threads)?;
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    Ok(MarginalEstimate::from_log_weights(&w))
}

/// Estimates the mass of every tokenization except `canonical`: samples
/// equal to it get weight `-inf`.
pub fn estimate_noncanonical_mass(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    canonical: &[TokenId],
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<MarginalEstimate, ModelError> {
    let samples = draw_samples(model, mdd, cond, n, seed, threads)?;
    Ok(MarginalEstimate::from_log_weights(&noncanonical_weights(
        &samples, canonical,
    )))
}

/// Weights with the canonical sample zeroed out.
pub fn noncanonical_weights(samples: &[ProposalSample], canonical: &[TokenId]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            if s.ids == canonical {
                f64::NEG_INFINITY
            } else {
                s.weight
            }
        })
        .collect()
}

/// `ln q(ids)` under the look-ahead proposal, or `None` if `ids` is not a
/// path of `mdd`.
pub fn proposal_logprob(
    model: &dyn ScoringModel,
    mdd: &Mdd,
    cond: &Conditioning,
    ids: &[TokenId],
) -> Result<Option<f64>, ModelError> {
    let mut ctx = cond.prefix.clone();
    let mut pos = 0;
    let mut total = 0.0;
    for &t in ids {
        let edges = mdd.edges(pos);
        let Some(k) = edges.iter().position(|e| e.token == t) else {
            return Ok(None);
        };
        if edges.len() > 1 {
            let cands: Vec<TokenId> = edges.iter().map(|e| e.token).collect();
            let lps = model.next_logprobs(&ctx, Some(&cands))?;
            total += lps[k] - log_sum_exp(&lps);
        }
        ctx.push(t);
        pos = edges[k].target;
    }
    Ok((pos == mdd.terminal()).then_some(total))
}
