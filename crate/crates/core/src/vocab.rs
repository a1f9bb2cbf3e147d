//! Vocabularies, merge tables, and the tokenization value type.
//!
//! A [`Vocabulary`] maps token strings to dense ids. Tokens spell byte
//! strings ("surfaces"); special tokens such as `<s>` spell nothing and never
//! appear in a tokenization of text. When byte fallback is enabled, tokens of
//! the form `<0xHH>` spell the single byte `0xHH`.
//!
//! Two on-disk forms are accepted:
//!
//! * JSON with top-level `"vocab"` (token → id) and `"merges"` (ordered
//!   `"left right"` strings). The nested `{"model": {...}}` layout written by
//!   common tokenizer exporters is read as well.
//! * A plain pair of files: `vocab.txt` (one token per line, line number = id)
//!   and `merges.txt` (one `left right` pair per line).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Token identifier.
pub type TokenId = u32;

/// Marker substituted for spaces by the meta-space pretokenizer.
pub const META_SPACE: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocabulary json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("vocabulary format error: {0}")]
    Format(String),
    #[error("duplicate token id {0}")]
    DuplicateId(TokenId),
    #[error("duplicate token string {0:?}")]
    DuplicateToken(String),
    #[error("token ids are not dense: id {0} is missing")]
    SparseIds(TokenId),
    #[error("merge rule {line}: {reason}")]
    BadMerge { line: usize, reason: String },
}

/// Token string ↔ id bijection plus the byte string each token spells.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    surfaces: Vec<Option<Vec<u8>>>,
    byte_tokens: Vec<Option<TokenId>>,
    byte_fallback: bool,
}

fn parse_byte_token(token: &str) -> Option<u8> {
    let hex = token.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

impl Vocabulary {
    /// Builds a vocabulary from tokens listed in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let pairs = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.into(), i as TokenId));
        Self::from_pairs(pairs, false, &[])
    }

    /// Builds a vocabulary from `(token, id)` pairs. Ids must be a permutation
    /// of `0..n`. Tokens named in `special` spell nothing; with
    /// `byte_fallback`, `<0xHH>` tokens spell their byte.
    pub fn from_pairs<I>(
        pairs: I,
        byte_fallback: bool,
        special: &[String],
    ) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = (String, TokenId)>,
    {
        let pairs: Vec<(String, TokenId)> = pairs.into_iter().collect();
        let n = pairs.len();
        let mut slots: Vec<Option<String>> = vec![None; n];
        let mut index = HashMap::with_capacity(n);
        for (token, id) in pairs {
            let slot = id as usize;
            if slot >= n {
                return Err(VocabError::SparseIds(n as TokenId));
            }
            if slots[slot].is_some() {
                return Err(VocabError::DuplicateId(id));
            }
            if index.insert(token.clone(), id).is_some() {
                return Err(VocabError::DuplicateToken(token));
            }
            slots[slot] = Some(token);
        }
        let mut tokens = Vec::with_capacity(n);
        for (i, slot) in slots.into_iter().enumerate() {
            tokens.push(slot.ok_or(VocabError::SparseIds(i as TokenId))?);
        }

        let mut surfaces = Vec::with_capacity(n);
        let mut byte_tokens = vec![None; 256];
        for (id, token) in tokens.iter().enumerate() {
            if special.iter().any(|s| s == token) {
                surfaces.push(None);
                continue;
            }
            if byte_fallback {
                if let Some(b) = parse_byte_token(token) {
                    byte_tokens[b as usize] = Some(id as TokenId);
                    surfaces.push(Some(vec![b]));
                    continue;
                }
            }
            if token.is_empty() {
                surfaces.push(None);
            } else {
                surfaces.push(Some(token.as_bytes().to_vec()));
            }
        }

        Ok(Self {
            tokens,
            index,
            surfaces,
            byte_tokens,
            byte_fallback,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Bytes spelled by `id`; `None` for unknown or special tokens.
    pub fn surface(&self, id: TokenId) -> Option<&[u8]> {
        self.surfaces.get(id as usize).and_then(|s| s.as_deref())
    }

    /// The `<0xHH>` token for `byte`, when byte fallback is active.
    pub fn byte_token(&self, byte: u8) -> Option<TokenId> {
        if self.byte_fallback {
            self.byte_tokens[byte as usize]
        } else {
            None
        }
    }

    pub fn is_byte_token(&self, id: TokenId) -> bool {
        self.byte_fallback
            && self
                .surface(id)
                .is_some_and(|s| s.len() == 1 && self.byte_tokens[s[0] as usize] == Some(id))
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.len() && self.surfaces[id as usize].is_none()
    }

    /// Iterates `(id, surface)` over every token that spells text, excluding
    /// byte-fallback tokens.
    pub fn text_tokens(&self) -> impl Iterator<Item = (TokenId, &[u8])> + '_ {
        self.surfaces.iter().enumerate().filter_map(move |(i, s)| {
            let id = i as TokenId;
            match s {
                Some(bytes) if !self.is_byte_token(id) => Some((id, bytes.as_slice())),
                _ => None,
            }
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Special tokens (spelling nothing), by string.
    pub fn special_tokens(&self) -> Vec<String> {
        self.surfaces
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| self.tokens[i].clone())
            .collect()
    }
}

/// One merge rule: `left + right → merged`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRule {
    pub left: TokenId,
    pub right: TokenId,
    pub merged: TokenId,
}

/// Ordered merge rules; a rule's rank is its position (lower merges first).
#[derive(Debug, Clone, Default)]
pub struct MergeTable {
    rules: Vec<MergeRule>,
    lookup: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl MergeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Resolves `(left, right)` string pairs against `vocab`, checking that the
    /// concatenation is itself a token.
    pub fn from_pairs<I, S>(vocab: &Vocabulary, pairs: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut table = Self::new();
        for (line, (l, r)) in pairs.into_iter().enumerate() {
            let (l, r) = (l.as_ref(), r.as_ref());
            let left = vocab.id(l).ok_or_else(|| VocabError::BadMerge {
                line,
                reason: format!("left token {l:?} not in vocabulary"),
            })?;
            let right = vocab.id(r).ok_or_else(|| VocabError::BadMerge {
                line,
                reason: format!("right token {r:?} not in vocabulary"),
            })?;
            let joined = format!("{l}{r}");
            let merged = vocab.id(&joined).ok_or_else(|| VocabError::BadMerge {
                line,
                reason: format!("merged token {joined:?} not in vocabulary"),
            })?;
            table.push(MergeRule {
                left,
                right,
                merged,
            });
        }
        Ok(table)
    }

    /// Appends a rule with the next rank. A repeated pair keeps its first rank.
    pub fn push(&mut self, rule: MergeRule) {
        let rank = self.rules.len();
        self.rules.push(rule);
        self.lookup
            .entry((rule.left, rule.right))
            .or_insert((rank, rule.merged));
    }

    /// `(rank, merged)` for an adjacent pair, if a rule applies.
    #[inline]
    pub fn lookup(&self, left: TokenId, right: TokenId) -> Option<(usize, TokenId)> {
        self.lookup.get(&(left, right)).copied()
    }

    pub fn rules(&self) -> &[MergeRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// A token sequence that spells a given text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenization {
    pub ids: Vec<TokenId>,
    pub text: String,
    pub is_canonical: bool,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Token strings of this tokenization.
    pub fn token_strings<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.ids
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("<?>"))
            .collect()
    }
}

/// How raw text becomes the string that tokens spell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pretokenizer {
    /// Text is used verbatim.
    #[default]
    Whole,
    /// Prepend `▁` and replace every space with `▁`.
    MetaSpace,
}

impl Pretokenizer {
    pub fn apply(&self, text: &str) -> String {
        match self {
            Pretokenizer::Whole => text.to_string(),
            Pretokenizer::MetaSpace => {
                let mut out = String::with_capacity(text.len() + 3);
                out.push(META_SPACE);
                out.extend(text.chars().map(|c| if c == ' ' { META_SPACE } else { c }));
                out
            }
        }
    }

    /// Maps a spelled string back to its surface form (`▁` → space).
    pub fn restore(&self, spelled: &str) -> String {
        match self {
            Pretokenizer::Whole => spelled.to_string(),
            Pretokenizer::MetaSpace => spelled.replace(META_SPACE, " "),
        }
    }
}

/// A vocabulary and its merge table, as loaded from disk.
#[derive(Debug, Clone)]
pub struct VocabFile {
    pub vocab: Vocabulary,
    pub merges: MergeTable,
}

#[derive(Serialize)]
struct VocabJsonOut {
    vocab: serde_json::Map<String, Value>,
    merges: Vec<String>,
    byte_fallback: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    special_tokens: Vec<String>,
}

fn merge_pair(value: &Value, line: usize) -> Result<(String, String), VocabError> {
    let bad = |reason: &str| VocabError::BadMerge {
        line,
        reason: reason.to_string(),
    };
    match value {
        Value::String(s) => {
            let mut parts = s.splitn(2, ' ');
            let l = parts.next().ok_or_else(|| bad("empty rule"))?;
            let r = parts.next().ok_or_else(|| bad("expected \"left right\""))?;
            Ok((l.to_string(), r.to_string()))
        }
        Value::Array(items) if items.len() == 2 => {
            let l = items[0].as_str().ok_or_else(|| bad("non-string token"))?;
            let r = items[1].as_str().ok_or_else(|| bad("non-string token"))?;
            Ok((l.to_string(), r.to_string()))
        }
        _ => Err(bad("expected a string or a two-element array")),
    }
}

impl VocabFile {
    /// Parses the JSON form.
    pub fn from_json_str(json: &str) -> Result<Self, VocabError> {
        let root: Value = serde_json::from_str(json)?;
        let model = match root.get("model") {
            Some(m) if m.get("vocab").is_some() => m,
            _ => &root,
        };
        let vocab_obj = model
            .get("vocab")
            .and_then(Value::as_object)
            .ok_or_else(|| VocabError::Format("missing object field \"vocab\"".into()))?;
        let byte_fallback = model
            .get("byte_fallback")
            .or_else(|| root.get("byte_fallback"))
            .and_then(Value::as_bool)
            .unwrap_or(false);

        let mut special: Vec<String> = Vec::new();
        if let Some(list) = root.get("special_tokens").and_then(Value::as_array) {
            special.extend(list.iter().filter_map(Value::as_str).map(String::from));
        }
        if let Some(list) = root.get("added_tokens").and_then(Value::as_array) {
            for t in list {
                if t.get("special").and_then(Value::as_bool).unwrap_or(false) {
                    if let Some(c) = t.get("content").and_then(Value::as_str) {
                        special.push(c.to_string());
                    }
                }
            }
        }

        let mut pairs = Vec::with_capacity(vocab_obj.len());
        for (token, id) in vocab_obj {
            let id = id
                .as_u64()
                .filter(|&v| v <= TokenId::MAX as u64)
                .ok_or_else(|| {
                    VocabError::Format(format!("token {token:?} has a non-integer id"))
                })?;
            pairs.push((token.clone(), id as TokenId));
        }
        let vocab = Vocabulary::from_pairs(pairs, byte_fallback, &special)?;

        let merges_json = model
            .get("merges")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let pairs = merges_json
            .iter()
            .enumerate()
            .map(|(i, v)| merge_pair(v, i))
            .collect::<Result<Vec<_>, _>>()?;
        let merges = MergeTable::from_pairs(&vocab, pairs)?;
        Ok(Self { vocab, merges })
    }

    /// Parses the two-file text form.
    pub fn from_text_strs(vocab_txt: &str, merges_txt: &str) -> Result<Self, VocabError> {
        let vocab = Vocabulary::from_tokens(vocab_txt.lines())?;
        let mut pairs = Vec::new();
        for (line, raw) in merges_txt.lines().enumerate() {
            if raw.starts_with("#version") || raw.trim().is_empty() {
                continue;
            }
            pairs.push(merge_pair(&Value::String(raw.to_string()), line)?);
        }
        let merges = MergeTable::from_pairs(&vocab, pairs)?;
        Ok(Self { vocab, merges })
    }

    /// Loads either form. A `.txt` path is read as the vocab half of the
    /// two-file form with `merges.txt` taken from the same directory (an
    /// absent merges file means no merges).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| VocabError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        if path.extension().is_some_and(|e| e == "txt") {
            let merges_path = path.with_file_name("merges.txt");
            let merges = if merges_path.exists() && merges_path != path {
                read(&merges_path)?
            } else {
                String::new()
            };
            Self::from_text_strs(&read(path)?, &merges)
        } else {
            Self::from_json_str(&read(path)?)
        }
    }

    /// Serializes to the top-level JSON form.
    pub fn to_json(&self) -> String {
        let mut vocab = serde_json::Map::new();
        for (id, token) in self.vocab.tokens().iter().enumerate() {
            vocab.insert(token.clone(), Value::from(id as u64));
        }
        let merges = self
            .merges
            .rules()
            .iter()
            .map(|r| {
                format!(
                    "{} {}",
                    self.vocab.token(r.left).unwrap_or_default(),
                    self.vocab.token(r.right).unwrap_or_default()
                )
            })
            .collect();
        let out = VocabJsonOut {
            vocab,
            merges,
            byte_fallback: self.vocab.byte_fallback(),
            special_tokens: self.vocab.special_tokens(),
        };
        serde_json::to_string(&out).expect("vocabulary serializes")
    }
}
