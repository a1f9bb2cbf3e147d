//! Canonicity rates of token sequences, per prefix length.

use serde::Serialize;

use crate::bpe::Tokenizer;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub length: usize,
    /// Sequences with at least `length` tokens.
    pub total: usize,
    /// Of those, how many have a canonical first-`length`-token prefix.
    pub canonical: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicityReport {
    pub rows: Vec<RateRow>,
    pub sequences: usize,
    /// Lines skipped because they did not parse or decode.
    pub warnings: usize,
    pub skipped_lines: Vec<usize>,
}

/// Parses one line: a JSON array of ids or whitespace-separated ids.
/// Returns `Ok(None)` for blank lines.
pub fn parse_ids(line: &str) -> Result<Option<Vec<TokenId>>, String> {
    let t = line.trim();
    if t.is_empty() {
        return Ok(None);
    }
    if t.starts_with('[') {
        return serde_json::from_str(t).map(Some).map_err(|e| e.to_string());
    }
    t.split_whitespace()
        .map(|w| w.parse::<TokenId>().map_err(|e| format!("{w:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Per-prefix-length canonicity over the sequences in `text` (one per line).
pub fn canonicity_rate(tokenizer: &Tokenizer, text: &str) -> CanonicityReport {
    let mut canonical: Vec<usize> = Vec::new();
    let mut total: Vec<usize> = Vec::new();
    let mut sequences = 0;
    let mut skipped_lines = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let ids = match parse_ids(line) {
            Ok(Some(ids)) => ids,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("line {}: {e}", lineno + 1);
                skipped_lines.push(lineno + 1);
                continue;
            }
        };
        if let Err(e) = tokenizer.decode_bytes(&ids) {
            log::warn!("line {}: {e}", lineno + 1);
            skipped_lines.push(lineno + 1);
            continue;
        }
        sequences += 1;
        if total.len() < ids.len() {
            total.resize(ids.len(), 0);
            canonical.resize(ids.len(), 0);
        }
        for len in 1..=ids.len() {
            total[len - 1] += 1;
            if tokenizer.is_canonical(&ids[..len]).unwrap_or(false) {
                canonical[len - 1] += 1;
            }
        }
    }
    let rows = total
        .iter()
        .zip(&canonical)
        .enumerate()
        .map(|(i, (&t, &c))| RateRow {
            length: i + 1,
            total: t,
            canonical: c,
            rate: c as f64 / t as f64,
        })
        .collect();
    CanonicityReport {
        rows,
        sequences,
        warnings: skipped_lines.len(),
        skipped_lines,
    }
}
