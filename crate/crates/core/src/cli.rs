//! The `tokspace` command line.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad vocabulary, model,
//! text, formula, ...), 2 on usage errors. Sampling subcommands require
//! `--seed`. Numbers print with 12 significant digits; natural-log values
//! are labeled `logprob`.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bpe::Tokenizer;
use crate::exact::{exact_summary, viterbi_bigram};
use crate::hardness::{CnfFormula, ReductionInstance, Variant};
use crate::logspace::{format_sig, log_sum_exp};
use crate::mdd::Mdd;
use crate::model::{
    from_spec, Conditioning, RemoteModel, ScoringModel, TableModel, BRIDGE_URL_ENV,
};
use crate::qa::{
    alpha_curve, derive_seed, plot_csv, read_dataset, tune_alpha, tune_samples, Classifier,
    EvalConfig, QaHarness, QaOptions,
};
use crate::sampler::{estimate_marginal, estimate_noncanonical_mass};
use crate::search::{branch_and_bound, SearchOptions};
use crate::vocab::{Pretokenizer, TokenId, VocabFile, Vocabulary};

#[derive(Parser, Debug)]
#[command(
    name = "tokspace",
    version,
    about = "Explore every tokenization of a string under a BPE vocabulary"
)]
pub struct Cli {
    /// TOML file supplying values for flags not given on the command line;
    /// top-level keys apply to every subcommand, `[<subcommand>]` tables to one.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compile the tokenization diagram of a string; count or list its paths.
    Mdd(MddArgs),
    /// Enumerate every tokenization: exact marginal and most likely one.
    Exact(ExactArgs),
    /// Most likely tokenization by branch-and-bound or bigram Viterbi.
    Mle(MleArgs),
    /// Importance-sampling estimate of the marginal string probability.
    Marginal(MarginalArgs),
    /// Decide satisfiability or count models of a CNF through a tokenization reduction.
    Hardness(HardnessArgs),
    /// Multiple-choice QA accuracy under canonical, marginal, non-canonical or mixture scoring.
    Qa(QaArgs),
    /// Accuracy curves over the sample count or the mixture weight, as x,mean,stdev CSV.
    QaPlot(QaPlotArgs),
    /// Check a running logits bridge: health, vocabulary, normalization, batching.
    BridgeCheck(BridgeCheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PretokenizerArg {
    Whole,
    Metaspace,
}

impl From<PretokenizerArg> for Pretokenizer {
    fn from(p: PretokenizerArg) -> Self {
        match p {
            PretokenizerArg::Whole => Pretokenizer::Whole,
            PretokenizerArg::Metaspace => Pretokenizer::MetaSpace,
        }
    }
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    /// Vocabulary JSON with "vocab" and "merges", or a vocab.txt beside merges.txt.
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// How raw text is mapped to the vocabulary's spelling.
    #[arg(long, value_enum, default_value_t = PretokenizerArg::Whole)]
    pub pretokenizer: PretokenizerArg,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// uniform | ngram:<file> | table:<file> | remote[:<url>]
    #[arg(long, default_value = "uniform")]
    pub model: String,
    /// Score an end-of-sequence token after the text.
    #[arg(long)]
    pub with_eos: bool,
    /// Do not prepend the beginning-of-sequence token.
    #[arg(long)]
    pub no_bos: bool,
    /// Text the tokenizations are conditioned on (tokenized canonically).
    #[arg(long)]
    pub context: Option<String>,
}

#[derive(Args, Debug)]
pub struct MddArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// Print only the number of tokenizations.
    #[arg(long)]
    pub count: bool,
    /// List up to N tokenizations in lexicographic id order.
    #[arg(long, value_name = "N")]
    pub enumerate: Option<usize>,
    /// Print Graphviz DOT.
    #[arg(long)]
    pub dot: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Refuse to enumerate more paths than this.
    #[arg(long, default_value_t = crate::exact::DEFAULT_PATH_CAP)]
    pub cap: u64,
    /// Print only the marginal.
    #[arg(long, conflicts_with = "mle")]
    pub marginal: bool,
    /// Print only the most likely tokenization.
    #[arg(long)]
    pub mle: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MleMethod {
    /// Anytime branch-and-bound seeded with the canonical tokenization.
    Bnb,
    /// Dynamic program; needs a unigram or bigram model.
    Viterbi,
}

#[derive(Args, Debug)]
pub struct MleArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = MleMethod::Bnb)]
    pub method: MleMethod,
    /// Wall-clock budget in seconds; the best tokenization found so far is reported.
    #[arg(long, value_name = "SECS")]
    pub budget: Option<f64>,
    /// Include every pruned prefix in the JSON report.
    #[arg(long)]
    pub record_pruned: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct MarginalArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of samples.
    #[arg(short = 'n', long = "samples", default_value_t = 1024)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    /// Also estimate the mass of the non-canonical tokenizations.
    #[arg(long)]
    pub exclude_canonical: bool,
    /// Write the running estimate (n,log_estimate,ess) as CSV.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    /// Satisfiable iff the most likely tokenization clears a threshold.
    MostLikely,
    /// The model count is read off the marginal probability.
    Marginal,
}

#[derive(Args, Debug)]
pub struct HardnessArgs {
    /// DIMACS CNF file, at most 3 literals per clause.
    #[arg(long, value_name = "FILE")]
    pub cnf: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::MostLikely)]
    pub variant: VariantArg,
    /// Also count models by truth table and compare.
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = crate::exact::DEFAULT_PATH_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassifierArg {
    Canonical,
    Marginal,
    Noncanonical,
    Mixture,
}

impl From<ClassifierArg> for Classifier {
    fn from(c: ClassifierArg) -> Self {
        match c {
            ClassifierArg::Canonical => Classifier::Canonical,
            ClassifierArg::Marginal => Classifier::Marginal,
            ClassifierArg::Noncanonical => Classifier::Noncanonical,
            ClassifierArg::Mixture => Classifier::Mixture,
        }
    }
}

#[derive(Args, Debug)]
pub struct QaModelArgs {
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// uniform | ngram:<file> | table:<file> | remote[:<url>]
    #[arg(long, default_value = "uniform")]
    pub model: String,
    /// Score an end-of-sequence token after each choice.
    #[arg(long)]
    pub with_eos: bool,
    /// Do not prepend the beginning-of-sequence token.
    #[arg(long)]
    pub no_bos: bool,
    /// Score answers by mean per-token log-probability (canonical scores only).
    #[arg(long)]
    pub per_token: bool,
    /// Use one seed for all choices of an example instead of one per choice.
    #[arg(long)]
    pub shared_seeds: bool,
}

#[derive(Args, Debug)]
pub struct QaArgs {
    /// JSONL with {"context", "choices", "label"} per line.
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub common: QaModelArgs,
    #[arg(long, value_enum, default_value_t = ClassifierArg::Canonical)]
    pub classifier: ClassifierArg,
    /// Samples per choice.
    #[arg(short = 'n', long = "samples", default_value_t = 64)]
    pub samples: usize,
    /// Mixture weight of the canonical classifier.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Choose the sample count on --validation first.
    #[arg(long, requires = "validation")]
    pub tune_k: bool,
    /// Choose the mixture weight on --validation first.
    #[arg(long, requires = "validation", conflicts_with = "tune_k")]
    pub tune_alpha: bool,
    /// Validation JSONL for tuning.
    #[arg(long, value_name = "FILE")]
    pub validation: Option<PathBuf>,
    /// Pool size per choice for --tune-k.
    #[arg(long, default_value_t = 256)]
    pub pool: usize,
    /// Random subsets per k for --tune-k.
    #[arg(long, default_value_t = 256)]
    pub trials: usize,
    /// Points in the alpha grid for --tune-alpha.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    /// Repeat sampling classifiers with this many derived seeds.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Required unless the classifier is canonical with no tuning.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-example predictions as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Sweep {
    /// Marginal-classifier accuracy against the sample count.
    K,
    /// Mixture accuracy against the canonical weight.
    Alpha,
}

#[derive(Args, Debug)]
pub struct QaPlotArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub common: QaModelArgs,
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    #[arg(long)]
    pub seed: u64,
    /// Pool size per choice for the k sweep.
    #[arg(long, default_value_t = 256)]
    pub pool: usize,
    /// Random subsets per k for the k sweep.
    #[arg(long, default_value_t = 256)]
    pub trials: usize,
    /// Points in the alpha grid.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    /// Samples per choice for the alpha sweep.
    #[arg(short = 'n', long = "samples", default_value_t = 64)]
    pub samples: usize,
    /// Seeds averaged in the alpha sweep.
    #[arg(long, default_value_t = 8)]
    pub runs: usize,
    /// CSV path; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BridgeCheckArgs {
    /// Bridge base URL; defaults to $TOKSPACE_BRIDGE_URL.
    #[arg(long)]
    pub url: Option<String>,
    /// Rule table the bridge is expected to serve; rows are compared to 1e-6.
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Random prefixes to query.
    #[arg(long, default_value_t = 16)]
    pub probes: usize,
    #[arg(long)]
    pub seed: u64,
    /// Also compare /v1/canonical with local encoding of this text.
    #[arg(long)]
    pub text: Option<String>,
    /// Pretokenizer for the local side of --text.
    #[arg(long, value_enum, default_value_t = PretokenizerArg::Whole)]
    pub pretokenizer: PretokenizerArg,
    #[arg(long)]
    pub json: bool,
}

/// A failed run: usage errors exit 2, domain errors 1.
#[derive(Debug)]
pub enum Failure {
    Usage(clap::Error),
    Domain(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Domain(e.to_string())
    }
}

fn domain(msg: impl Display) -> Failure {
    Failure::Domain(msg.to_string())
}

fn usage(kind: ErrorKind, msg: impl Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, msg))
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let subcommand = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| Cli::command().find_subcommand(a).is_some())
        .map(str::to_string);
    let result =
        apply_config(args).and_then(|args| Cli::try_parse_from(args).map_err(Failure::Usage));
    let result = result.and_then(|cli| dispatch(&cli));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let code = e.exit_code();
            // --help and --version also arrive here, with exit code 0.
            if code == 2 {
                let mut cmd = Cli::command();
                cmd.build();
                let help = match subcommand.and_then(|s| cmd.find_subcommand_mut(&s).cloned()) {
                    Some(mut sub) => sub.render_help(),
                    None => cmd.render_help(),
                };
                eprintln!("{help}");
            }
            let _ = e.print();
            code
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Appends `--key value` for each config key the chosen subcommand accepts
/// and the command line does not already set.
fn apply_config(mut args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| domain(format!("{path}: {e}")))?;
    let table: toml::Table = text.parse().map_err(|e| domain(format!("{path}: {e}")))?;

    let cmd = Cli::command();
    let Some(sub) = strs
        .iter()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().find(|s| s.get_name() == a))
    else {
        return Ok(args);
    };
    let accepted: Vec<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let given = |flag: &str| {
        strs.iter()
            .any(|a| a == flag || a.starts_with(&format!("{flag}=")))
    };

    let mut entries: Vec<(&String, &toml::Value)> =
        table.iter().filter(|(_, v)| !v.is_table()).collect();
    if let Some(toml::Value::Table(t)) = table.get(sub.get_name()) {
        entries.retain(|(k, _)| !t.contains_key(*k));
        entries.extend(t.iter());
    }
    for (key, value) in entries {
        let long = key.replace('_', "-");
        if long == "config" || !accepted.contains(&long) {
            log::debug!("config key {key:?} does not apply to {}", sub.get_name());
            continue;
        }
        let flag = format!("--{long}");
        if given(&flag) {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => args.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => args.extend([flag.into(), s.into()]),
            toml::Value::Integer(i) => args.extend([flag.into(), i.to_string().into()]),
            toml::Value::Float(f) => args.extend([flag.into(), f.to_string().into()]),
            other => {
                return Err(usage(
                    ErrorKind::InvalidValue,
                    format!("config key {key:?}: unsupported value {other}"),
                ))
            }
        }
    }
    Ok(args)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Mdd(a) => cmd_mdd(a),
        Command::Exact(a) => cmd_exact(a),
        Command::Mle(a) => cmd_mle(a, threads),
        Command::Marginal(a) => cmd_marginal(a, threads),
        Command::Hardness(a) => cmd_hardness(a),
        Command::Qa(a) => cmd_qa(a, threads),
        Command::QaPlot(a) => cmd_qa_plot(a, threads),
        Command::BridgeCheck(a) => cmd_bridge_check(a),
    }
}

fn sig(x: f64) -> String {
    format_sig(x, 12)
}

/// Rounds every float in `v` to 12 significant digits.
fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                let r: f64 = format!("{x:.11e}").parse().unwrap_or(x);
                if let Some(m) = serde_json::Number::from_f64(r) {
                    *n = m;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn to_json_string(value: &impl Serialize) -> Result<String, Failure> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

fn print_json(value: &impl Serialize) -> Result<(), Failure> {
    println!("{}", to_json_string(value)?);
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn load_tokenizer(a: &VocabArgs) -> Result<Tokenizer, Failure> {
    let file = VocabFile::load(&a.vocab)?;
    Ok(Tokenizer::from(file).with_pretokenizer(a.pretokenizer.into()))
}

fn special(vocab: &Vocabulary, names: &[&str]) -> Option<TokenId> {
    names
        .iter()
        .filter_map(|s| vocab.id(s))
        .find(|&id| vocab.is_special(id))
}

fn bos_id(model: &dyn ScoringModel, vocab: &Vocabulary) -> Option<TokenId> {
    model.bos_id().or_else(|| special(vocab, &["<s>", "<bos>"]))
}

fn eos_id(vocab: &Vocabulary) -> Result<TokenId, Failure> {
    special(vocab, &["</s>", "<eos>"])
        .ok_or_else(|| domain("--with-eos: the vocabulary has no </s> or <eos> special token"))
}

/// Text, tokenizer, model, diagram, canonical ids and conditioning for the
/// single-string subcommands.
struct Problem {
    tok: Tokenizer,
    model: Box<dyn ScoringModel>,
    mdd: Mdd,
    canonical: Vec<TokenId>,
    cond: Conditioning,
}

impl Problem {
    fn load(text: &str, v: &VocabArgs, m: &ModelArgs) -> Result<Self, Failure> {
        let tok = load_tokenizer(v)?;
        let model = from_spec(&m.model, tok.vocab().len())?;
        let spelled = tok.prepare(text);
        let mdd = Mdd::compile(&spelled, tok.vocab())?;
        let canonical = tok.canonical_encode(&spelled)?.ids;
        let mut prefix: Vec<TokenId> = Vec::new();
        if !m.no_bos {
            prefix.extend(bos_id(model.as_ref(), tok.vocab()));
        }
        if let Some(c) = &m.context {
            prefix.extend(tok.encode_raw(c)?.ids);
        }
        let eos = if m.with_eos {
            Some(eos_id(tok.vocab())?)
        } else {
            None
        };
        Ok(Self {
            tok,
            model,
            mdd,
            canonical,
            cond: Conditioning { prefix, eos },
        })
    }

    fn tokens(&self, ids: &[TokenId]) -> Vec<String> {
        self.tok.token_strings(ids)
    }

    fn canonical_logprob(&self) -> Result<f64, Failure> {
        Ok(self
            .cond
            .score(self.model.as_ref(), &self.canonical)?
            .total_logprob)
    }
}

fn cmd_mdd(a: &MddArgs) -> Result<(), Failure> {
    let tok = load_tokenizer(&a.vocab)?;
    let spelled = tok.prepare(&a.text);
    let mdd = Mdd::compile(&spelled, tok.vocab())?;
    let count = mdd.count_tokenizations();
    if a.count {
        println!("{count}");
        return Ok(());
    }
    if a.dot {
        print!("{}", mdd.to_dot(tok.vocab()));
        return Ok(());
    }
    let paths = if let Some(limit) = a.enumerate {
        mdd.enumerate(&tok, Some(limit))
            .map(|t| json!({"ids": t.ids, "tokens": tok.token_strings(&t.ids), "canonical": t.is_canonical}))
            .collect()
    } else {
        Vec::new()
    };
    if a.json {
        let mut out = json!({
            "text": spelled,
            "nodes": mdd.node_count(),
            "edges": mdd.edge_count(),
            "tokenizations": count.to_string(),
        });
        if a.enumerate.is_some() {
            out["paths"] = Value::Array(paths);
        }
        return print_json(&out);
    }
    println!("text: {spelled:?}");
    println!("nodes: {}", mdd.node_count());
    println!("edges: {}", mdd.edge_count());
    println!("tokenizations: {count}");
    for p in &paths {
        let mark = if p["canonical"] == true {
            "  (canonical)"
        } else {
            ""
        };
        println!("{}{mark}", p["tokens"]);
    }
    Ok(())
}

fn cmd_exact(a: &ExactArgs) -> Result<(), Failure> {
    let p = Problem::load(&a.text, &a.vocab, &a.model)?;
    let s = exact_summary(p.model.as_ref(), &p.mdd, &p.cond, a.cap)?;
    let canonical_logprob = p.canonical_logprob()?;
    let share = 1.0 - (canonical_logprob - s.marginal).exp();
    let (show_marginal, show_best) = match (a.marginal, a.mle) {
        (false, false) => (true, true),
        other => other,
    };
    if a.json {
        let mut out = json!({
            "paths": s.paths,
            "canonical": {"ids": p.canonical, "tokens": p.tokens(&p.canonical), "logprob": canonical_logprob},
        });
        if show_marginal {
            out["marginal_logprob"] = json!(s.marginal);
            out["noncanonical_share"] = json!(share);
        }
        if show_best {
            out["best"] = json!({"ids": s.best.ids, "tokens": p.tokens(&s.best.ids), "logprob": s.best.logprob});
        }
        return print_json(&out);
    }
    println!("paths: {}", s.paths);
    if show_marginal {
        println!("marginal logprob: {}", sig(s.marginal));
    }
    if show_best {
        println!("best logprob: {}", sig(s.best.logprob));
        println!("best tokens: {:?}", p.tokens(&s.best.ids));
    }
    println!("canonical logprob: {}", sig(canonical_logprob));
    println!("canonical tokens: {:?}", p.tokens(&p.canonical));
    if show_marginal {
        println!("non-canonical share: {}", sig(share));
    }
    Ok(())
}

fn cmd_mle(a: &MleArgs, threads: usize) -> Result<(), Failure> {
    let p = Problem::load(&a.text, &a.vocab, &a.model)?;
    let report = match a.method {
        MleMethod::Viterbi => {
            let best = viterbi_bigram(p.model.as_ref(), &p.mdd, &p.cond)?;
            let canonical_logprob = p.canonical_logprob()?;
            json!({
                "method": "viterbi",
                "best": {"ids": best.ids, "tokens": p.tokens(&best.ids), "logprob": best.logprob},
                "canonical_logprob": canonical_logprob,
                "improved_over_canonical": best.logprob > canonical_logprob,
            })
        }
        MleMethod::Bnb => {
            let opts = SearchOptions {
                budget: a.budget.map(Duration::from_secs_f64),
                threads,
                record_pruned: a.record_pruned,
            };
            let r = branch_and_bound(p.model.as_ref(), &p.mdd, &p.cond, &p.canonical, &opts)?;
            let mut v = serde_json::to_value(&r)?;
            v["method"] = json!("bnb");
            v["best"]["tokens"] = json!(p.tokens(&r.best.ids));
            v
        }
    };
    if a.json {
        return print_json(&report);
    }
    let best = &report["best"];
    println!(
        "best logprob: {}",
        sig(best["logprob"].as_f64().unwrap_or(f64::NAN))
    );
    println!("best tokens: {}", best["tokens"]);
    println!(
        "canonical logprob: {}",
        sig(report["canonical_logprob"].as_f64().unwrap_or(f64::NAN))
    );
    println!(
        "improved over canonical: {}",
        report["improved_over_canonical"]
    );
    if let Some(n) = report.get("nodes_expanded") {
        println!("nodes expanded: {n}");
        println!("pruned: {}", report["pruned"]);
        println!("timed out: {}", report["timed_out"]);
    }
    Ok(())
}

fn cmd_marginal(a: &MarginalArgs, threads: usize) -> Result<(), Failure> {
    if a.samples == 0 {
        return Err(usage(
            ErrorKind::InvalidValue,
            "--samples must be at least 1",
        ));
    }
    let p = Problem::load(&a.text, &a.vocab, &a.model)?;
    let m = p.model.as_ref();
    let est = estimate_marginal(m, &p.mdd, &p.cond, a.samples, a.seed, threads)?;
    let canonical_logprob = p.canonical_logprob()?;
    if let Some(path) = &a.trace {
        write_file(path, &est.trace_csv())?;
    }
    let mut out = json!({
        "samples": a.samples,
        "seed": a.seed,
        "marginal_logprob": est.log_estimate,
        "ess": est.ess,
        "canonical_logprob": canonical_logprob,
    });
    if a.exclude_canonical {
        let non = estimate_noncanonical_mass(
            m,
            &p.mdd,
            &p.cond,
            &p.canonical,
            a.samples,
            a.seed,
            threads,
        )?;
        // Share of the string's mass off the canonical tokenization, with the
        // canonical part exact.
        let share = (non.log_estimate - log_sum_exp(&[non.log_estimate, canonical_logprob])).exp();
        out["noncanonical_logprob"] = json!(non.log_estimate);
        out["noncanonical_share"] = json!(share);
    }
    if a.json {
        return print_json(&out);
    }
    println!("marginal logprob: {}", sig(est.log_estimate));
    println!("ess: {}", sig(est.ess));
    println!("canonical logprob: {}", sig(canonical_logprob));
    if a.exclude_canonical {
        println!(
            "non-canonical logprob: {}",
            sig(out["noncanonical_logprob"]
                .as_f64()
                .unwrap_or(f64::NEG_INFINITY))
        );
        println!(
            "non-canonical share: {}",
            sig(out["noncanonical_share"].as_f64().unwrap_or(0.0))
        );
    }
    Ok(())
}

fn cmd_hardness(a: &HardnessArgs) -> Result<(), Failure> {
    let text =
        fs::read_to_string(&a.cnf).map_err(|e| domain(format!("{}: {e}", a.cnf.display())))?;
    let cnf = CnfFormula::parse_dimacs(&text)?;
    let variant = match a.variant {
        VariantArg::MostLikely => Variant::MostLikely,
        VariantArg::Marginal => Variant::Marginal,
    };
    let inst = ReductionInstance::new(&cnf, variant);
    let s = exact_summary(&inst.model, &inst.mdd(), &Conditioning::default(), a.cap)?;
    let mut out = json!({
        "variant": variant,
        "variables": cnf.n_vars(),
        "clauses": cnf.n_clauses(),
        "text": inst.text,
        "tokenizations": s.paths,
    });
    let mut lines = vec![
        format!("formula: {cnf}"),
        format!("tokenizations: {}", s.paths),
    ];
    let verdict_count: Option<u64>;
    match variant {
        Variant::MostLikely => {
            let threshold = inst.log_threshold();
            let sat = s.best.logprob > threshold;
            out["best_logprob"] = json!(s.best.logprob);
            out["threshold_logprob"] = json!(threshold);
            out["verdict"] = json!(if sat { "SAT" } else { "UNSAT" });
            out["assignment"] = json!(inst.assignment_of(&s.best.ids));
            lines.push(format!(
                "best logprob: {} {} threshold logprob: {}",
                sig(s.best.logprob),
                if sat { ">" } else { "<=" },
                sig(threshold)
            ));
            lines.push(format!("verdict: {}", if sat { "SAT" } else { "UNSAT" }));
            verdict_count = None;
            if a.check {
                let count = cnf.brute_force_count()?;
                out["brute_force_count"] = json!(count);
                out["agrees"] = json!((count > 0) == sat);
                lines.push(format!("truth-table models: {count}"));
                if (count > 0) != sat {
                    lines.iter().for_each(|l| println!("{l}"));
                    return Err(domain("reduction verdict disagrees with the truth table"));
                }
            }
        }
        Variant::Marginal => {
            let count = inst.recover_count(s.marginal)?;
            out["marginal_logprob"] = json!(s.marginal);
            out["count"] = json!(count);
            lines.push(format!("marginal logprob: {}", sig(s.marginal)));
            lines.push(format!("models: {count}"));
            verdict_count = Some(count);
        }
    }
    if let (true, Some(count)) = (a.check, verdict_count) {
        let truth = cnf.brute_force_count()?;
        out["brute_force_count"] = json!(truth);
        out["agrees"] = json!(truth == count);
        lines.push(format!("truth-table models: {truth}"));
        if truth != count {
            lines.iter().for_each(|l| println!("{l}"));
            return Err(domain("recovered count disagrees with the truth table"));
        }
    }
    if a.json {
        return print_json(&out);
    }
    lines.iter().for_each(|l| println!("{l}"));
    Ok(())
}

fn qa_setup<'a>(
    c: &QaModelArgs,
    tok: &'a Tokenizer,
    model: &'a dyn ScoringModel,
    threads: usize,
) -> Result<QaHarness<'a>, Failure> {
    let opts = QaOptions {
        bos: if c.no_bos {
            None
        } else {
            bos_id(model, tok.vocab())
        },
        eos: if c.with_eos {
            Some(eos_id(tok.vocab())?)
        } else {
            None
        },
        per_token: c.per_token,
        shared_seeds: c.shared_seeds,
        threads,
    };
    Ok(QaHarness::new(model, tok, opts))
}

fn cmd_qa(a: &QaArgs, threads: usize) -> Result<(), Failure> {
    let classifier: Classifier = a.classifier.into();
    let samples_needed = classifier != Classifier::Canonical || a.tune_k || a.tune_alpha;
    let seed = match (a.seed, samples_needed) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => {
            return Err(usage(
                ErrorKind::MissingRequiredArgument,
                "--seed is required for sampling classifiers and tuning",
            ))
        }
    };
    if a.tune_alpha && classifier != Classifier::Mixture {
        return Err(usage(
            ErrorKind::ArgumentConflict,
            "--tune-alpha needs --classifier mixture",
        ));
    }
    if a.tune_k && classifier == Classifier::Canonical {
        return Err(usage(
            ErrorKind::ArgumentConflict,
            "--tune-k needs a sampling classifier",
        ));
    }
    if a.runs == 0 {
        return Err(usage(ErrorKind::InvalidValue, "--runs must be at least 1"));
    }
    let tok = load_tokenizer(&a.common.vocab)?;
    let model = from_spec(&a.common.model, tok.vocab().len())?;
    let harness = qa_setup(&a.common, &tok, model.as_ref(), threads)?;
    let test = harness.prepare_all(&read_dataset(&a.dataset)?)?;

    let mut n_samples = a.samples;
    let mut alpha = a.alpha;
    let mut tuning = Value::Null;
    if let Some(vpath) = a.validation.as_deref().filter(|_| a.tune_k || a.tune_alpha) {
        let val = harness.prepare_all(&read_dataset(vpath)?)?;
        // Validation randomness is kept apart from test randomness.
        let vseed = derive_seed(seed, u64::MAX);
        if a.tune_k {
            let pools = harness.draw_pools(&val, a.pool, vseed)?;
            let ks: Vec<usize> = (1..=a.pool).collect();
            let t = tune_samples(
                &pools,
                a.pool,
                &ks,
                a.trials,
                derive_seed(vseed, 1),
                threads,
            )?;
            n_samples = t.k;
            tuning = json!({"parameter": "samples", "value": t.k, "accuracy": t.accuracy, "curve": t.curve});
        } else {
            let inputs = harness.all_mixture_inputs(&val, a.samples, vseed)?;
            let t = tune_alpha(&inputs, a.grid)?;
            alpha = t.alpha;
            tuning = json!({"parameter": "alpha", "value": t.alpha, "accuracy": t.accuracy, "curve": t.curve});
        }
    }
    let config = EvalConfig {
        classifier,
        n_samples,
        alpha,
        seeds: (0..a.runs as u64).map(|r| derive_seed(seed, r)).collect(),
    };
    let report = harness.evaluate(&test, &config)?;
    if let Some(path) = &a.csv {
        write_file(path, &report.to_csv()?)?;
    }
    let out = json!({"evaluation": report, "tuning": tuning});
    let text = to_json_string(&out)?;
    match &a.out {
        Some(path) => {
            write_file(path, &text)?;
            println!(
                "accuracy: {} stdev: {} (n_samples {}, alpha {})",
                sig(report.mean_accuracy),
                sig(report.stdev_accuracy),
                n_samples,
                sig(alpha)
            );
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_qa_plot(a: &QaPlotArgs, threads: usize) -> Result<(), Failure> {
    let tok = load_tokenizer(&a.common.vocab)?;
    let model = from_spec(&a.common.model, tok.vocab().len())?;
    let harness = qa_setup(&a.common, &tok, model.as_ref(), threads)?;
    let data = harness.prepare_all(&read_dataset(&a.dataset)?)?;
    let rows = match a.sweep {
        Sweep::K => {
            let pools = harness.draw_pools(&data, a.pool, a.seed)?;
            let ks: Vec<usize> = (1..=a.pool).collect();
            tune_samples(
                &pools,
                a.pool,
                &ks,
                a.trials,
                derive_seed(a.seed, 1),
                threads,
            )?
            .curve
        }
        Sweep::Alpha => {
            let runs = (0..a.runs as u64)
                .map(|r| harness.all_mixture_inputs(&data, a.samples, derive_seed(a.seed, r)))
                .collect::<Result<Vec<_>, _>>()?;
            alpha_curve(&runs, a.grid)?
        }
    };
    let csv = plot_csv(&rows)?;
    match &a.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_bridge_check(a: &BridgeCheckArgs) -> Result<(), Failure> {
    let url = match a.url.clone().or_else(|| std::env::var(BRIDGE_URL_ENV).ok()) {
        Some(u) => u,
        None => {
            return Err(usage(
                ErrorKind::MissingRequiredArgument,
                format!("--url is required when ${BRIDGE_URL_ENV} is unset"),
            ))
        }
    };
    let remote = RemoteModel::connect(&url)?;
    let v = remote.vocab_size();
    let table = a.table.as_deref().map(TableModel::load).transpose()?;
    if let Some(t) = &table {
        if t.vocab_size() != v {
            return Err(domain(format!(
                "bridge vocabulary has {v} tokens, the table {}",
                t.vocab_size()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let prefixes: Vec<Vec<TokenId>> = (0..a.probes)
        .map(|_| {
            let len = rng.random_range(0..4);
            (0..len)
                .map(|_| rng.random_range(0..v as TokenId))
                .collect()
        })
        .collect();
    let mut worst_norm = 0.0f64;
    let mut worst_table = 0.0f64;
    for p in &prefixes {
        let row = remote.next_logprobs(p, None)?;
        worst_norm = worst_norm.max(log_sum_exp(&row).abs());
        if let Some(t) = &table {
            let local = t.next_logprobs(p, None)?;
            for (x, y) in row.iter().zip(&local) {
                let d = if x == y { 0.0 } else { (x - y).abs() };
                worst_table = worst_table.max(d);
            }
        }
    }
    // The batch path must agree with single queries.
    let fresh = RemoteModel::connect(&url)?;
    let queries: Vec<crate::model::Query> = prefixes
        .iter()
        .map(|p| crate::model::Query {
            prefix: p.clone(),
            candidates: None,
        })
        .collect();
    let batch = fresh.next_logprobs_batch(&queries)?;
    let mut worst_batch = 0.0f64;
    for (q, b) in queries.iter().zip(&batch) {
        let single = remote.next_logprobs(&q.prefix, None)?;
        for (x, y) in single.iter().zip(b) {
            worst_batch = worst_batch.max(if x == y { 0.0 } else { (x - y).abs() });
        }
    }
    let canonical = match &a.text {
        Some(text) => {
            let tok = Tokenizer::from(remote.vocab_file().clone())
                .with_pretokenizer(a.pretokenizer.into());
            let served = remote.canonical(text)?;
            let local = tok.encode_raw(text)?.ids;
            Some(json!({"text": text, "served": served, "local": local, "agrees": served == local}))
        }
        None => None,
    };
    let ok = worst_norm <= 1e-4
        && worst_batch <= 1e-9
        && (table.is_none() || worst_table <= 1e-6)
        && canonical.as_ref().is_none_or(|c| c["agrees"] == true);
    let out = json!({
        "url": remote.url(),
        "vocab_size": v,
        "bos": remote.bos_id(),
        "probes": a.probes,
        "max_normalization_error": worst_norm,
        "max_batch_difference": worst_batch,
        "max_table_difference": table.as_ref().map(|_| worst_table),
        "canonical": canonical,
        "ok": ok,
    });
    if a.json {
        print_json(&out)?;
    } else {
        println!("bridge: {}", remote.url());
        println!("vocab size: {v}");
        println!("max |logsumexp|: {}", sig(worst_norm));
        println!("max batch difference: {}", sig(worst_batch));
        if table.is_some() {
            println!("max table difference: {}", sig(worst_table));
        }
        if let Some(c) = &canonical {
            println!("canonical agrees: {}", c["agrees"]);
        }
        println!("ok: {ok}");
    }
    if ok {
        Ok(())
    } else {
        Err(domain("bridge check failed"))
    }
}
