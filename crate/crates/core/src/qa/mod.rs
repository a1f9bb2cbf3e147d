//! Multiple-choice QA over tokenization spaces.
//!
//! The context is always tokenized canonically. Each answer is scored either
//! by its canonical tokenization, by an importance-sampling estimate of its
//! marginal over all tokenizations, by the estimated mass of its
//! non-canonical tokenizations, or by a mixture of the canonical and
//! non-canonical classifiers normalized over the choices.

mod tuning;

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tuning::{
    alpha_curve, alpha_grid, parse_plot_csv, plot_csv, tune_alpha, tune_samples, AlphaTuning,
    ExamplePool, KTuning, PlotRow,
};

use crate::bpe::{EncodeError, Tokenizer};
use crate::logspace::{log_add, log_sum_exp};
use crate::mdd::{Mdd, MddCompiler, MddError};
use crate::model::{Conditioning, ModelError, ScoringModel};
use crate::sampler::{estimate_marginal, estimate_noncanonical_mass};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("example {example}: {source}")]
    Encode {
        example: usize,
        choice: Option<usize>,
        source: EncodeError,
    },
    #[error("example {example}, choice {choice}: {source}")]
    Mdd {
        example: usize,
        choice: usize,
        source: MddError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("alpha {0} is outside [0, 1]")]
    BadAlpha(f64),
    #[error("an alpha grid needs at least 2 points, got {0}")]
    BadGrid(usize),
    #[error("sample pool has {found} samples, expected {expected}")]
    PoolMismatch { expected: usize, found: usize },
    #[error("k = {k} is outside 1..={pool}")]
    BadK { k: usize, pool: usize },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("plot data: {0}")]
    Csv(#[from] csv::Error),
}

/// One multiple-choice question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub context: String,
    pub choices: Vec<String>,
    pub label: usize,
}

impl QaExample {
    pub fn validate(&self) -> Result<(), String> {
        if self.choices.len() < 2 {
            return Err(format!(
                "needs at least 2 choices, got {}",
                self.choices.len()
            ));
        }
        if self.label >= self.choices.len() {
            return Err(format!(
                "label {} out of range for {} choices",
                self.label,
                self.choices.len()
            ));
        }
        for (i, a) in self.choices.iter().enumerate() {
            if self.choices[..i].contains(a) {
                return Err(format!("choice {i} duplicates an earlier choice: {a:?}"));
            }
        }
        Ok(())
    }
}

/// Parses a JSONL dataset of `{"context", "choices", "label"}` objects.
/// Blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<QaExample>, QaError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| QaError::Parse {
            line: i + 1,
            reason,
        };
        let ex: QaExample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        ex.validate().map_err(err)?;
        out.push(ex);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<QaExample>, QaError> {
    let text = std::fs::read_to_string(path).map_err(|source| QaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierOutput {
    /// Natural-log scores, one per choice.
    pub scores: Vec<f64>,
    pub prediction: usize,
    /// More than one choice attained the maximum.
    pub tie_broken: bool,
    /// Non-canonical mass was zero for every choice, so canonical scores
    /// were used instead.
    pub fell_back: bool,
}

impl ClassifierOutput {
    fn new(scores: Vec<f64>, fell_back: bool) -> Self {
        let (prediction, tie_broken) = argmax_first(&scores);
        Self {
            scores,
            prediction,
            tie_broken,
            fell_back,
        }
    }
}

/// Smallest index attaining the maximum, and whether it was shared.
pub fn argmax_first(scores: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    let tied = scores
        .iter()
        .enumerate()
        .any(|(i, &s)| i != best && s == scores[best]);
    (best, tied)
}

/// Seed of stream `index` under `seed`, so parallel and serial runs derive
/// the same per-example and per-choice seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Raw canonical and non-canonical scores of one example, enough to evaluate
/// the mixture at any weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureInputs {
    pub label: usize,
    pub canonical: Vec<f64>,
    /// Log non-canonical mass estimates; `-inf` for single-tokenization
    /// choices.
    pub noncanonical: Vec<f64>,
}

fn normalized(scores: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(scores);
    scores.iter().map(|s| s - z).collect()
}

impl MixtureInputs {
    /// Canonical scores normalized over the choices.
    pub fn log_p_can(&self) -> Vec<f64> {
        normalized(&self.canonical)
    }

    /// Non-canonical mass normalized over the choices, or `None` when every
    /// choice has zero mass.
    pub fn log_p_non(&self) -> Option<Vec<f64>> {
        if self.noncanonical.iter().all(|&x| x == f64::NEG_INFINITY) {
            None
        } else {
            Some(normalized(&self.noncanonical))
        }
    }

    /// `ln(α P_can + (1 - α) P_noncan)` per choice.
    pub fn output(&self, alpha: f64) -> ClassifierOutput {
        let can = self.log_p_can();
        if alpha == 1.0 {
            return ClassifierOutput::new(can, false);
        }
        let Some(non) = self.log_p_non() else {
            return ClassifierOutput::new(can, true);
        };
        let (la, lb) = (alpha.ln(), (1.0 - alpha).ln());
        let scores = can
            .iter()
            .zip(&non)
            .map(|(c, n)| log_add(la + c, lb + n))
            .collect();
        ClassifierOutput::new(scores, false)
    }

    pub fn is_correct(&self, alpha: f64) -> bool {
        self.output(alpha).prediction == self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Canonical,
    Marginal,
    Noncanonical,
    Mixture,
}

#[derive(Debug, Clone, Default)]
pub struct QaOptions {
    /// Token placed before the context.
    pub bos: Option<TokenId>,
    /// Score an EOS token after each answer.
    pub eos: Option<TokenId>,
    /// Divide canonical scores by their token count (ablation only).
    pub per_token: bool,
    /// Give every choice the example's seed instead of its own stream.
    pub shared_seeds: bool,
    /// Examples scored in parallel.
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct PreparedChoice {
    pub canonical: Vec<TokenId>,
    pub mdd: Mdd,
}

/// An example with its context and answers tokenized.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub cond: Conditioning,
    pub choices: Vec<PreparedChoice>,
    pub label: usize,
}

pub struct QaHarness<'a> {
    model: &'a dyn ScoringModel,
    tokenizer: &'a Tokenizer,
    compiler: MddCompiler,
    pub options: QaOptions,
}

/// Maps `f` over `items` on up to `threads` scoped threads, keeping order.
pub(crate) fn par_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(usize, &T) -> R + Sync,
) -> Vec<R> {
    if threads <= 1 || items.len() < 2 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, x)| f(c * chunk + j, x))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("qa worker"))
            .collect()
    })
}

impl<'a> QaHarness<'a> {
    pub fn new(model: &'a dyn ScoringModel, tokenizer: &'a Tokenizer, options: QaOptions) -> Self {
        Self {
            model,
            tokenizer,
            compiler: MddCompiler::new(tokenizer.vocab()),
            options,
        }
    }

    pub fn model(&self) -> &dyn ScoringModel {
        self.model
    }

    /// Tokenizes one example; `index` only labels errors.
    pub fn prepare(&self, index: usize, ex: &QaExample) -> Result<PreparedExample, QaError> {
        let context = self
            .tokenizer
            .encode_raw(&ex.context)
            .map_err(|source| QaError::Encode {
                example: index,
                choice: None,
                source,
            })?;
        let cond = Conditioning {
            prefix: self.options.bos.into_iter().chain(context.ids).collect(),
            eos: self.options.eos,
        };
        let choices = ex
            .choices
            .iter()
            .enumerate()
            .map(|(c, raw)| {
                let text = self.tokenizer.prepare(raw);
                let canonical = self
                    .tokenizer
                    .canonical_encode(&text)
                    .map_err(|source| QaError::Encode {
                        example: index,
                        choice: Some(c),
                        source,
                    })?
                    .ids;
                let mdd = self
                    .compiler
                    .compile(&text)
                    .map_err(|source| QaError::Mdd {
                        example: index,
                        choice: c,
                        source,
                    })?;
                Ok(PreparedChoice { canonical, mdd })
            })
            .collect::<Result<_, QaError>>()?;
        Ok(PreparedExample {
            cond,
            choices,
            label: ex.label,
        })
    }

    pub fn prepare_all(&self, examples: &[QaExample]) -> Result<Vec<PreparedExample>, QaError> {
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| self.prepare(i, ex))
            .collect()
    }

    fn choice_seed(&self, example_seed: u64, choice: usize) -> u64 {
        if self.options.shared_seeds {
            example_seed
        } else {
            derive_seed(example_seed, choice as u64)
        }
    }

    pub fn canonical_scores(&self, ex: &PreparedExample) -> Result<Vec<f64>, QaError> {
        ex.choices
            .iter()
            .map(|c| {
                let lp = ex.cond.score(self.model, &c.canonical)?.total_logprob;
                Ok(if self.options.per_token && !c.canonical.is_empty() {
                    lp / c.canonical.len() as f64
                } else {
                    lp
                })
            })
            .collect()
    }

    /// Marginal estimates from `n` samples per choice.
    pub fn marginal_scores(
        &self,
        ex: &PreparedExample,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>, QaError> {
        if n == 0 {
            return Err(QaError::NoSamples);
        }
        ex.choices
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let est = estimate_marginal(
                    self.model,
                    &c.mdd,
                    &ex.cond,
                    n,
                    self.choice_seed(seed, i),
                    1,
                )?;
                Ok(est.log_estimate)
            })
            .collect()
    }

    /// Non-canonical mass estimates from `n` samples per choice.
    pub fn noncanonical_scores(
        &self,
        ex: &PreparedExample,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>, QaError> {
        if n == 0 {
            return Err(QaError::NoSamples);
        }
        ex.choices
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let est = estimate_noncanonical_mass(
                    self.model,
                    &c.mdd,
                    &ex.cond,
                    &c.canonical,
                    n,
                    self.choice_seed(seed, i),
                    1,
                )?;
                Ok(est.log_estimate)
            })
            .collect()
    }

    pub fn classify_canonical(&self, ex: &PreparedExample) -> Result<ClassifierOutput, QaError> {
        Ok(ClassifierOutput::new(self.canonical_scores(ex)?, false))
    }

    pub fn classify_marginal(
        &self,
        ex: &PreparedExample,
        n: usize,
        seed: u64,
    ) -> Result<ClassifierOutput, QaError> {
        Ok(ClassifierOutput::new(
            self.marginal_scores(ex, n, seed)?,
            false,
        ))
    }

    /// Non-canonical mass only; falls back to canonical when every choice
    /// has a single tokenization.
    pub fn classify_noncanonical(
        &self,
        ex: &PreparedExample,
        n: usize,
        seed: u64,
    ) -> Result<ClassifierOutput, QaError> {
        let scores = self.noncanonical_scores(ex, n, seed)?;
        if scores.iter().all(|&s| s == f64::NEG_INFINITY) {
            return Ok(ClassifierOutput::new(self.canonical_scores(ex)?, true));
        }
        Ok(ClassifierOutput::new(scores, false))
    }

    pub fn mixture_inputs(
        &self,
        ex: &PreparedExample,
        n: usize,
        seed: u64,
    ) -> Result<MixtureInputs, QaError> {
        Ok(MixtureInputs {
            label: ex.label,
            canonical: self.canonical_scores(ex)?,
            noncanonical: self.noncanonical_scores(ex, n, seed)?,
        })
    }

    pub fn classify_mixture(
        &self,
        ex: &PreparedExample,
        alpha: f64,
        n: usize,
        seed: u64,
    ) -> Result<ClassifierOutput, QaError> {
        check_alpha(alpha)?;
        Ok(self.mixture_inputs(ex, n, seed)?.output(alpha))
    }

    /// Classifies every example. Example `i` samples under
    /// `derive_seed(seed, i)`.
    pub fn run(
        &self,
        examples: &[PreparedExample],
        classifier: Classifier,
        n: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Vec<ClassifierOutput>, QaError> {
        check_alpha(alpha)?;
        par_map(examples, self.options.threads, |i, ex| {
            let s = derive_seed(seed, i as u64);
            match classifier {
                Classifier::Canonical => self.classify_canonical(ex),
                Classifier::Marginal => self.classify_marginal(ex, n, s),
                Classifier::Noncanonical => self.classify_noncanonical(ex, n, s),
                Classifier::Mixture => self.classify_mixture(ex, alpha, n, s),
            }
        })
        .into_iter()
        .collect()
    }

    /// Mixture inputs for every example, seeded like [`QaHarness::run`].
    pub fn all_mixture_inputs(
        &self,
        examples: &[PreparedExample],
        n: usize,
        seed: u64,
    ) -> Result<Vec<MixtureInputs>, QaError> {
        par_map(examples, self.options.threads, |i, ex| {
            self.mixture_inputs(ex, n, derive_seed(seed, i as u64))
        })
        .into_iter()
        .collect()
    }

    /// `pool` proposal samples per choice for sample-count tuning, seeded
    /// like [`QaHarness::run`].
    pub fn draw_pools(
        &self,
        examples: &[PreparedExample],
        pool: usize,
        seed: u64,
    ) -> Result<Vec<ExamplePool>, QaError> {
        par_map(examples, self.options.threads, |i, ex| {
            let s = derive_seed(seed, i as u64);
            let choices = ex
                .choices
                .iter()
                .enumerate()
                .map(|(c, ch)| {
                    let samples = crate::sampler::draw_samples(
                        self.model,
                        &ch.mdd,
                        &ex.cond,
                        pool,
                        self.choice_seed(s, c),
                        1,
                    )?;
                    Ok(samples.into_iter().map(|x| x.weight).collect())
                })
                .collect::<Result<_, QaError>>()?;
            Ok(ExamplePool {
                label: ex.label,
                choices,
            })
        })
        .into_iter()
        .collect()
    }

    pub fn evaluate(
        &self,
        examples: &[PreparedExample],
        config: &EvalConfig,
    ) -> Result<EvalReport, QaError> {
        let seeds: Vec<u64> = match config.classifier {
            // Deterministic: one run is the whole story.
            Classifier::Canonical => config.seeds.iter().take(1).copied().collect(),
            _ => config.seeds.clone(),
        };
        let runs = seeds
            .iter()
            .map(|&seed| {
                let outputs = self.run(
                    examples,
                    config.classifier,
                    config.n_samples,
                    config.alpha,
                    seed,
                )?;
                let correct = outputs
                    .iter()
                    .zip(examples)
                    .filter(|(o, e)| o.prediction == e.label)
                    .count();
                Ok(RunReport {
                    seed,
                    accuracy: correct as f64 / examples.len().max(1) as f64,
                    outputs,
                })
            })
            .collect::<Result<Vec<_>, QaError>>()?;
        let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let (mean, stdev) = mean_stdev(&accs);
        Ok(EvalReport {
            classifier: config.classifier,
            n_samples: config.n_samples,
            alpha: config.alpha,
            n_examples: examples.len(),
            labels: examples.iter().map(|e| e.label).collect(),
            mean_accuracy: mean,
            stdev_accuracy: stdev,
            runs,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<(), QaError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(QaError::BadAlpha(alpha))
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub classifier: Classifier,
    pub n_samples: usize,
    pub alpha: f64,
    /// One run per seed; canonical runs use only the first.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub accuracy: f64,
    pub outputs: Vec<ClassifierOutput>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub classifier: Classifier,
    pub n_samples: usize,
    pub alpha: f64,
    pub n_examples: usize,
    pub labels: Vec<usize>,
    pub mean_accuracy: f64,
    pub stdev_accuracy: f64,
    pub runs: Vec<RunReport>,
}

impl EvalReport {
    /// One line per (seed, example).
    pub fn to_csv(&self) -> Result<String, QaError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "seed",
            "example",
            "label",
            "prediction",
            "correct",
            "tie_broken",
            "fell_back",
        ])?;
        for run in &self.runs {
            for (i, (o, &label)) in run.outputs.iter().zip(&self.labels).enumerate() {
                w.write_record([
                    run.seed.to_string(),
                    i.to_string(),
                    label.to_string(),
                    o.prediction.to_string(),
                    (o.prediction == label).to_string(),
                    o.tie_broken.to_string(),
                    o.fell_back.to_string(),
                ])?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| QaError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Accuracy mean and spread as one plot point at `x`.
    pub fn plot_row(&self, x: f64) -> PlotRow {
        PlotRow {
            x,
            mean: self.mean_accuracy,
            stdev: self.stdev_accuracy,
        }
    }
}
