//! Canonical BPE encoding, BPE-dropout encoding, decoding, and canonicity.
//!
//! Encoding splits the input into single-character tokens (or `<0xHH>` byte
//! tokens when byte fallback is on) and then repeatedly applies the
//! lowest-rank merge among adjacent pairs, leftmost occurrence first, until no
//! rule applies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vocab::{MergeTable, Pretokenizer, TokenId, Tokenization, VocabFile, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("no token spells the character at byte offset {0}")]
    UnspellableCharacter(usize),
    #[error("unknown token id {0}")]
    UnknownTokenId(TokenId),
    #[error("token id {0} is a special token and spells no text")]
    SpecialToken(TokenId),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("dropout probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

/// A vocabulary, its merge table, and the pretokenizer used for raw text.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocabulary,
    merges: MergeTable,
    pretokenizer: Pretokenizer,
}

impl From<VocabFile> for Tokenizer {
    fn from(vf: VocabFile) -> Self {
        Tokenizer::new(vf.vocab, vf.merges)
    }
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, merges: MergeTable) -> Self {
        Self {
            vocab,
            merges,
            pretokenizer: Pretokenizer::Whole,
        }
    }

    pub fn with_pretokenizer(mut self, pretokenizer: Pretokenizer) -> Self {
        self.pretokenizer = pretokenizer;
        self
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &MergeTable {
        &self.merges
    }

    pub fn pretokenizer(&self) -> Pretokenizer {
        self.pretokenizer
    }

    /// Applies the pretokenizer to raw text.
    pub fn prepare(&self, raw: &str) -> String {
        self.pretokenizer.apply(raw)
    }

    fn atomize(&self, bytes: &[u8]) -> Result<Vec<TokenId>, EncodeError> {
        let mut out = Vec::with_capacity(bytes.len());
        let mut base = 0usize;
        let mut buf = [0u8; 4];
        for chunk in bytes.utf8_chunks() {
            for (off, ch) in chunk.valid().char_indices() {
                let s = ch.encode_utf8(&mut buf);
                match self
                    .vocab
                    .id(s)
                    .filter(|&id| self.vocab.surface(id) == Some(s.as_bytes()))
                {
                    Some(id) => out.push(id),
                    None => {
                        for (k, &b) in s.as_bytes().iter().enumerate() {
                            let id = self
                                .vocab
                                .byte_token(b)
                                .ok_or(EncodeError::UnspellableCharacter(base + off + k))?;
                            out.push(id);
                        }
                    }
                }
            }
            base += chunk.valid().len();
            for (k, &b) in chunk.invalid().iter().enumerate() {
                let id = self
                    .vocab
                    .byte_token(b)
                    .ok_or(EncodeError::UnspellableCharacter(base + k))?;
                out.push(id);
            }
            base += chunk.invalid().len();
        }
        Ok(out)
    }

    /// Runs the merge loop. `keep` is asked once per candidate occurrence per
    /// round; returning `false` drops that candidate for the round.
    fn merge(&self, symbols: &mut Vec<TokenId>, mut keep: impl FnMut() -> bool) {
        loop {
            let mut best: Option<(usize, usize, TokenId)> = None;
            for i in 0..symbols.len().saturating_sub(1) {
                if let Some((rank, merged)) = self.merges.lookup(symbols[i], symbols[i + 1]) {
                    if !keep() {
                        continue;
                    }
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, i, merged));
                    }
                }
            }
            match best {
                Some((_, i, merged)) => {
                    symbols[i] = merged;
                    symbols.remove(i + 1);
                }
                None => break,
            }
        }
    }

    /// Canonical encoding of already-pretokenized bytes.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Result<Vec<TokenId>, EncodeError> {
        let mut symbols = self.atomize(bytes)?;
        self.merge(&mut symbols, || true);
        Ok(symbols)
    }

    /// Canonical tokenization of an already-pretokenized string.
    pub fn canonical_encode(&self, text: &str) -> Result<Tokenization, EncodeError> {
        Ok(Tokenization {
            ids: self.encode_bytes(text.as_bytes())?,
            text: text.to_string(),
            is_canonical: true,
        })
    }

    /// Pretokenizes `raw` and encodes it canonically.
    pub fn encode_raw(&self, raw: &str) -> Result<Tokenization, EncodeError> {
        self.canonical_encode(&self.prepare(raw))
    }

    /// BPE-dropout encoding: every applicable merge occurrence is skipped with
    /// probability `p_drop`, re-drawn at each application round. Encoding
    /// stops when every candidate of a round is dropped.
    pub fn dropout_encode(
        &self,
        text: &str,
        p_drop: f64,
        seed: u64,
    ) -> Result<Tokenization, EncodeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.dropout_encode_with(text, p_drop, &mut rng)
    }

    pub fn dropout_encode_with<R: Rng + ?Sized>(
        &self,
        text: &str,
        p_drop: f64,
        rng: &mut R,
    ) -> Result<Tokenization, EncodeError> {
        if !(0.0..=1.0).contains(&p_drop) {
            return Err(EncodeError::InvalidProbability(p_drop));
        }
        let mut symbols = self.atomize(text.as_bytes())?;
        self.merge(&mut symbols, || rng.random::<f64>() >= p_drop);
        let canonical = self.encode_bytes(text.as_bytes())?;
        let is_canonical = canonical == symbols;
        Ok(Tokenization {
            ids: symbols,
            text: text.to_string(),
            is_canonical,
        })
    }

    /// Concatenated bytes spelled by `ids`.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, EncodeError> {
        decode_bytes(&self.vocab, ids)
    }

    /// Concatenation of the token strings of `ids` (no pretokenizer undo).
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, EncodeError> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| EncodeError::InvalidUtf8)
    }

    /// Decodes and maps back to surface text (`▁` → space under meta-space).
    pub fn decode_surface(&self, ids: &[TokenId]) -> Result<String, EncodeError> {
        Ok(self.pretokenizer.restore(&self.decode(ids)?))
    }

    /// Whether `ids` equals the canonical encoding of its own decoding.
    pub fn is_canonical(&self, ids: &[TokenId]) -> Result<bool, EncodeError> {
        let bytes = self.decode_bytes(ids)?;
        match self.encode_bytes(&bytes) {
            Ok(canonical) => Ok(canonical == ids),
            Err(EncodeError::UnspellableCharacter(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Token strings for display.
    pub fn token_strings(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.vocab.token(id).unwrap_or("<?>").to_string())
            .collect()
    }
}

/// Concatenated bytes spelled by `ids` under `vocab`.
pub fn decode_bytes(vocab: &Vocabulary, ids: &[TokenId]) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::new();
    for &id in ids {
        if (id as usize) >= vocab.len() {
            return Err(EncodeError::UnknownTokenId(id));
        }
        let s = vocab.surface(id).ok_or(EncodeError::SpecialToken(id))?;
        out.extend_from_slice(s);
    }
    Ok(out)
}
