//! Shared helpers for the integration tests: brute-force oracles, random
//! instance generators, a local HTTP bridge, and a small JSON schema checker.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use tokspace::model::{TableModel, TableRule};
use tokspace::{MergeTable, ScoringModel, TokenId, Tokenizer, VocabFile, Vocabulary};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn llama2() -> Tokenizer {
    let f = VocabFile::load(fixture("llama2.json")).expect("llama2 fixture");
    Tokenizer::new(f.vocab, f.merges).with_pretokenizer(tokspace::Pretokenizer::MetaSpace)
}

pub fn toy_tokenizer(tokens: &[&str], merges: &[(&str, &str)]) -> Tokenizer {
    let vocab = Vocabulary::from_tokens(tokens.iter().copied()).unwrap();
    let merges = MergeTable::from_pairs(&vocab, merges.iter().copied()).unwrap();
    Tokenizer::new(vocab, merges)
}

/// Every way to split `text` into members of `tokens`, by plain recursion.
pub fn naive_splits(text: &str, tokens: &[String]) -> Vec<Vec<String>> {
    if text.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for t in tokens {
        if !t.is_empty() && text.starts_with(t.as_str()) {
            for mut rest in naive_splits(&text[t.len()..], tokens) {
                rest.insert(0, t.clone());
                out.push(rest);
            }
        }
    }
    out
}

/// Number of splits, same recursion without materializing them.
pub fn naive_count(text: &str, tokens: &[String]) -> u128 {
    if text.is_empty() {
        return 1;
    }
    tokens
        .iter()
        .filter(|t| !t.is_empty() && text.starts_with(t.as_str()))
        .map(|t| naive_count(&text[t.len()..], tokens))
        .sum()
}

/// Memoized version for long strings; still independent of the diagram code.
pub fn memo_count(text: &[u8], tokens: &[Vec<u8>]) -> u128 {
    let n = text.len();
    let mut ways = vec![0u128; n + 1];
    ways[n] = 1;
    for i in (0..n).rev() {
        ways[i] = tokens
            .iter()
            .filter(|t| !t.is_empty() && text[i..].starts_with(t))
            .map(|t| ways[i + t.len()])
            .sum();
    }
    ways[0]
}

pub fn random_string<R: Rng>(rng: &mut R, alphabet: &[char], len: usize) -> String {
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

/// Up to `max_tokens` distinct strings over `alphabet`, lengths 1..=max_len.
/// Single characters are present only by chance, so dead ends and
/// unspellable strings occur.
pub fn random_token_set<R: Rng>(
    rng: &mut R,
    alphabet: &[char],
    max_tokens: usize,
    max_len: usize,
) -> Vec<String> {
    let target = rng.random_range(1..=max_tokens);
    let mut set = BTreeSet::new();
    for _ in 0..target * 4 {
        if set.len() == target {
            break;
        }
        let len = rng.random_range(1..=max_len);
        set.insert(random_string(rng, alphabet, len));
    }
    set.into_iter().collect()
}

/// A BPE tokenizer grown by random merges over `alphabet`, so every token is
/// reachable and every string over the alphabet is spellable.
pub fn random_tokenizer<R: Rng>(
    rng: &mut R,
    alphabet: &[char],
    max_tokens: usize,
    max_token_len: usize,
) -> Tokenizer {
    let mut tokens: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut merges: Vec<(String, String)> = Vec::new();
    let target = rng.random_range(tokens.len()..=max_tokens.max(tokens.len()));
    for _ in 0..max_tokens * 8 {
        if tokens.len() >= target {
            break;
        }
        let l = tokens.choose(rng).unwrap().clone();
        let r = tokens.choose(rng).unwrap().clone();
        let joined = format!("{l}{r}");
        if joined.len() <= max_token_len && !tokens.contains(&joined) {
            tokens.push(joined);
            merges.push((l, r));
        }
    }
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let table =
        MergeTable::from_pairs(&vocab, merges.iter().map(|(l, r)| (l.as_str(), r.as_str())))
            .unwrap();
    Tokenizer::new(vocab, table)
}

pub fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Bigram table: a start row for the empty prefix and one row per last token.
pub fn random_bigram<R: Rng>(rng: &mut R, vocab_size: usize) -> TableModel {
    let rules = (0..vocab_size as TokenId)
        .map(|t| (TableRule::Suffix(vec![t]), random_row(rng, vocab_size)))
        .collect();
    TableModel::new(vocab_size, Some(random_row(rng, vocab_size)), rules).unwrap()
}

/// Bigram rows plus some two-token suffix rows and exact-prefix rows, so the
/// model is not Markov of any small order.
pub fn random_table<R: Rng>(rng: &mut R, vocab_size: usize) -> TableModel {
    let mut rules: Vec<(TableRule, Vec<f64>)> = (0..vocab_size as TokenId)
        .map(|t| (TableRule::Suffix(vec![t]), random_row(rng, vocab_size)))
        .collect();
    let mut seen = BTreeSet::new();
    for _ in 0..vocab_size {
        let key = vec![
            rng.random_range(0..vocab_size as TokenId),
            rng.random_range(0..vocab_size as TokenId),
        ];
        if seen.insert(key.clone()) {
            rules.push((TableRule::Suffix(key.clone()), random_row(rng, vocab_size)));
            rules.push((TableRule::Exact(key), random_row(rng, vocab_size)));
        }
    }
    TableModel::new(vocab_size, Some(random_row(rng, vocab_size)), rules).unwrap()
}

/// How the local bridge misbehaves, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeFault {
    None,
    /// Every logprobs request answers HTTP 500.
    ServerError,
    /// Logprobs responses drop their last value.
    ShortRows,
    /// Health reports a status other than "ok".
    Unhealthy,
}

/// A minimal HTTP/1.1 server speaking the bridge protocol over a local model.
pub struct MockBridge {
    pub url: String,
    /// Requests to /v1/logprobs, single or batch.
    pub logprobs_calls: Arc<AtomicUsize>,
    /// Highest number of logprobs requests in flight at once.
    pub max_in_flight: Arc<AtomicUsize>,
}

pub struct BridgeConfig {
    pub model: Arc<dyn ScoringModel>,
    pub vocab: VocabFile,
    pub tokenizer: Tokenizer,
    pub fault: BridgeFault,
    /// Sleep before answering each logprobs request.
    pub delay: Duration,
}

impl MockBridge {
    pub fn start(cfg: BridgeConfig) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let logprobs_calls = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let cfg = Arc::new(cfg);
        {
            let calls = logprobs_calls.clone();
            let max = max_in_flight.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (cfg, calls, max, in_flight) =
                        (cfg.clone(), calls.clone(), max.clone(), in_flight.clone());
                    thread::spawn(move || {
                        let _ = serve(stream, &cfg, &calls, &max, &in_flight);
                    });
                }
            });
        }
        Self {
            url,
            logprobs_calls,
            max_in_flight,
        }
    }
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) -> std::io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn answer(model: &dyn ScoringModel, q: &Value, fault: BridgeFault) -> Result<Value, String> {
    let prefix: Vec<TokenId> =
        serde_json::from_value(q["prefix_ids"].clone()).map_err(|e| e.to_string())?;
    let cands: Option<Vec<TokenId>> =
        serde_json::from_value(q["candidate_ids"].clone()).map_err(|e| e.to_string())?;
    let mut lp = model
        .next_logprobs(&prefix, cands.as_deref())
        .map_err(|e| e.to_string())?;
    if fault == BridgeFault::ShortRows {
        lp.pop();
    }
    Ok(json!({ "logprobs": lp }))
}

fn serve(
    mut stream: TcpStream,
    cfg: &BridgeConfig,
    calls: &AtomicUsize,
    max: &AtomicUsize,
    in_flight: &AtomicUsize,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let path = parts.next().unwrap_or("");

    match (method, path) {
        ("GET", "/v1/health") => {
            let status = if cfg.fault == BridgeFault::Unhealthy {
                "loading"
            } else {
                "ok"
            };
            respond(
                &mut stream,
                "200 OK",
                &json!({ "status": status }).to_string(),
            )
        }
        ("GET", "/v1/vocab") => respond(&mut stream, "200 OK", &cfg.vocab.to_json()),
        ("POST", "/v1/canonical") => {
            let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let text = req["text"].as_str().unwrap_or("");
            match cfg.tokenizer.encode_raw(text) {
                Ok(t) => respond(&mut stream, "200 OK", &json!({ "ids": t.ids }).to_string()),
                Err(e) => respond(
                    &mut stream,
                    "400 Bad Request",
                    &json!({ "error": e.to_string() }).to_string(),
                ),
            }
        }
        ("POST", "/v1/logprobs") => {
            calls.fetch_add(1, Ordering::SeqCst);
            let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            max.fetch_max(now, Ordering::SeqCst);
            thread::sleep(cfg.delay);
            let result = if cfg.fault == BridgeFault::ServerError {
                Err("injected failure".to_string())
            } else {
                let req: Value = serde_json::from_slice(&body)
                    .map_err(|e| e.to_string())
                    .unwrap_or(Value::Null);
                match req.get("batch").and_then(Value::as_array) {
                    Some(items) => items
                        .iter()
                        .map(|q| answer(cfg.model.as_ref(), q, cfg.fault))
                        .collect::<Result<Vec<_>, _>>()
                        .map(|rows| json!({ "batch": rows })),
                    None => answer(cfg.model.as_ref(), &req, cfg.fault),
                }
            };
            in_flight.fetch_sub(1, Ordering::SeqCst);
            match result {
                Ok(v) => respond(&mut stream, "200 OK", &v.to_string()),
                Err(e) => respond(
                    &mut stream,
                    "500 Internal Server Error",
                    &json!({ "error": e }).to_string(),
                ),
            }
        }
        _ => respond(&mut stream, "404 Not Found", "{}"),
    }
}

pub fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Checks `value` against the subset of JSON Schema the shipped schemas use:
/// `type`, `properties`, `required`, `additionalProperties: false`, `items`,
/// `enum`, `minimum`, `minItems`, `anyOf`. Returns every violation found.
pub fn schema_errors(schema: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, value, "$", &mut errors);
    errors
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        other => panic!("schema uses unsupported type {other}"),
    }
}

fn check(s: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    if let Some(ty) = s.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword at {at}"),
        };
        if !ok {
            errors.push(format!("{at}: expected {ty}, got {v}"));
            return;
        }
    }
    if let Some(options) = s.get("anyOf").and_then(Value::as_array) {
        if !options.iter().any(|o| schema_errors(o, v).is_empty()) {
            errors.push(format!("{at}: matches no anyOf branch"));
        }
    }
    if let Some(allowed) = s.get("enum").and_then(Value::as_array) {
        if !allowed.contains(v) {
            errors.push(format!("{at}: {v} not in {allowed:?}"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            errors.push(format!("{at}: {x} < minimum {min}"));
        }
    }
    if let Value::Object(map) = v {
        if let Some(req) = s.get("required").and_then(Value::as_array) {
            for k in req {
                let k = k.as_str().unwrap();
                if !map.contains_key(k) {
                    errors.push(format!("{at}: missing {k}"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, child) in map {
            match props.and_then(|p| p.get(k)) {
                Some(cs) => check(cs, child, &format!("{at}.{k}"), errors),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unexpected property {k}"))
                }
                None => {}
            }
        }
    }
    if let Value::Array(items) = v {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                errors.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(is) = s.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(is, item, &format!("{at}[{i}]"), errors);
            }
        }
    }
}

/// Every clause of 1 to 3 distinct variables over `n` variables, literals in
/// variable order.
pub fn all_clauses(n: usize) -> Vec<Vec<tokspace::hardness::Literal>> {
    use tokspace::hardness::Literal;
    let mut out = Vec::new();
    for vars in 1u32..(1 << n) {
        let picked: Vec<usize> = (1..=n).filter(|v| vars >> (v - 1) & 1 == 1).collect();
        if picked.len() > 3 {
            continue;
        }
        for signs in 0u32..(1 << picked.len()) {
            out.push(
                picked
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| Literal {
                        var: v,
                        positive: signs >> j & 1 == 1,
                    })
                    .collect(),
            );
        }
    }
    out
}

/// All CNFs with `n ≤ 3` variables and up to 3 clauses (clause order
/// matters to the reductions, so ordered tuples), then 500 random CNFs with
/// 4 variables and 1 to 5 clauses.
pub fn hardness_corpus() -> Vec<tokspace::hardness::CnfFormula> {
    use tokspace::hardness::{CnfFormula, Literal};
    let mut out = Vec::new();
    for n in 1..=3 {
        let clauses = all_clauses(n);
        let mut level: Vec<Vec<Vec<Literal>>> = vec![Vec::new()];
        for _ in 0..=3 {
            for cs in &level {
                out.push(CnfFormula::new(n, cs.clone()).unwrap());
            }
            level = level
                .iter()
                .flat_map(|cs| {
                    clauses.iter().map(move |c| {
                        let mut next = cs.clone();
                        next.push(c.clone());
                        next
                    })
                })
                .collect();
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let k = rng.random_range(1..=5);
        let clauses = (0..k)
            .map(|_| {
                let width = rng.random_range(1..=3);
                let mut vars: Vec<usize> = (1..=4).collect();
                vars.shuffle(&mut rng);
                vars[..width]
                    .iter()
                    .map(|&v| Literal {
                        var: v,
                        positive: rng.random_bool(0.5),
                    })
                    .collect()
            })
            .collect();
        out.push(CnfFormula::new(4, clauses).unwrap());
    }
    out
}

/// Validation pools where the sample count 8 is optimal. In each "needle"
/// example the gold choice has one sample of weight `L` among `pool` and the
/// rest zero, the wrong choice is constant `c` with `exp(L - c) = 8.5`. With
/// `k` samples the gold estimate is `L - ln k` when the needle is drawn, so
/// the example is right iff the needle is among the `k` and `k ≤ 8`. The
/// expected accuracy is `k / pool` up to 8 and 0 after.
pub fn needle_pools(examples: usize, pool: usize) -> Vec<tokspace::qa::ExamplePool> {
    let c = -20.0;
    let big = c + 8.5f64.ln();
    (0..examples)
        .map(|i| {
            let mut gold = vec![f64::NEG_INFINITY; pool];
            gold[(i * 37) % pool] = big;
            let wrong = vec![c; pool];
            let label = i % 2;
            let choices = if label == 0 {
                vec![gold, wrong]
            } else {
                vec![wrong, gold]
            };
            tokspace::qa::ExamplePool { label, choices }
        })
        .collect()
}

/// Validation inputs for the mixture weight. Each example has two choices
/// with choice-normalized canonical probability `p` and non-canonical
/// probability `q` for the gold answer, chosen so the example is right
/// exactly when `α` is above (or below) a threshold `t`.
pub fn threshold_mixture_set(seed: u64, n: usize) -> Vec<tokspace::qa::MixtureInputs> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            // Mostly "needs α > t" with small t, some "needs α < t" with
            // larger t, a few outliers that no single α satisfies jointly.
            let (t, wants_high): (f64, bool) = match i % 10 {
                0..=4 => (rng.random_range(0.05..0.3), true),
                5..=7 => (rng.random_range(0.4..0.7), false),
                8 => (rng.random_range(0.75..0.95), true),
                _ => (rng.random_range(0.0..0.05), false),
            };
            // α p + (1 - α) q = 1/2 at α = t.
            // Keeping q inside (0, 1) bounds p: above t it needs p < 1 / (2t),
            // below it p > 1 - 1 / (2t).
            let (lo, hi) = if wants_high {
                (0.5, (0.5 / t).min(1.0))
            } else {
                ((1.0 - 0.5 / t).max(0.0), 0.5)
            };
            let p: f64 = lo + (hi - lo) * rng.random_range(0.05..0.95);
            let q = (0.5 - t * p) / (1.0 - t);
            let gold_can = [p.ln(), (1.0 - p).ln()];
            let gold_non = [q.ln(), (1.0 - q).ln()];
            let label = i % 2;
            let order = |pair: [f64; 2]| {
                if label == 0 {
                    pair.to_vec()
                } else {
                    vec![pair[1], pair[0]]
                }
            };
            tokspace::qa::MixtureInputs {
                label,
                canonical: order(gold_can),
                noncanonical: order(gold_non),
            }
        })
        .collect()
}

/// Accuracy of the mixture at `alpha`, in plain probability arithmetic.
pub fn mixture_accuracy_oracle(set: &[tokspace::qa::MixtureInputs], alpha: f64) -> f64 {
    let right = set
        .iter()
        .filter(|x| {
            let norm = |v: &[f64]| {
                let e: Vec<f64> = v.iter().map(|s| s.exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect::<Vec<f64>>()
            };
            let (pc, pn) = (norm(&x.canonical), norm(&x.noncanonical));
            let mix: Vec<f64> = pc
                .iter()
                .zip(&pn)
                .map(|(c, n)| alpha * c + (1.0 - alpha) * n)
                .collect();
            let best = (0..mix.len()).fold(0, |b, j| if mix[j] > mix[b] { j } else { b });
            best == x.label
        })
        .count();
    right as f64 / set.len() as f64
}

/// A random multiple-choice set over `alphabet`: contexts and answers are
/// random strings, answers of one example distinct.
pub fn random_qa_set<R: Rng>(
    rng: &mut R,
    alphabet: &[char],
    n: usize,
) -> Vec<tokspace::qa::QaExample> {
    (0..n)
        .map(|_| {
            let ctx_len = rng.random_range(0..6);
            let context = random_string(rng, alphabet, ctx_len);
            let k = rng.random_range(2..=4);
            let mut choices: Vec<String> = Vec::new();
            while choices.len() < k {
                let len = rng.random_range(1..=7);
                let c = random_string(rng, alphabet, len);
                if !choices.contains(&c) {
                    choices.push(c);
                }
            }
            let label = rng.random_range(0..k);
            tokspace::qa::QaExample {
                context,
                choices,
                label,
            }
        })
        .collect()
}
