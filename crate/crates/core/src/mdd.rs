//! Decision diagram of all tokenizations of a string.
//!
//! Nodes are byte offsets into the text (0 is the root, `len` the terminal).
//! An edge `(i, t, j)` means token `t` spells `text[i..j]`. Every
//! root-to-terminal path is one tokenization and vice versa. Nodes that do
//! not lie on such a path are trimmed after construction.

use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::bpe::Tokenizer;
use crate::vocab::{TokenId, Tokenization, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MddError {
    #[error("no tokenization spells the text (stuck at byte offset {0})")]
    NoTokenization(usize),
    #[error("position {0} is not a live node of the diagram")]
    InvalidPosition(usize),
}

/// Byte trie over the text-spelling tokens of a vocabulary.
#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(u8, u32)>,
    token: Option<TokenId>,
}

impl TokenTrie {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut trie = TokenTrie {
            nodes: vec![TrieNode::default()],
        };
        for (id, surface) in vocab.text_tokens() {
            trie.insert(surface, id);
        }
        trie
    }

    fn insert(&mut self, bytes: &[u8], id: TokenId) {
        let mut cur = 0usize;
        for &b in bytes {
            cur = match self.nodes[cur].children.binary_search_by_key(&b, |c| c.0) {
                Ok(k) => self.nodes[cur].children[k].1 as usize,
                Err(k) => {
                    let next = self.nodes.len() as u32;
                    self.nodes[cur].children.insert(k, (b, next));
                    self.nodes.push(TrieNode::default());
                    next as usize
                }
            };
        }
        self.nodes[cur].token = Some(id);
    }

    /// Calls `f(len, token)` for every token that is a prefix of `text`.
    pub fn for_each_prefix(&self, text: &[u8], mut f: impl FnMut(usize, TokenId)) {
        let mut cur = 0usize;
        for (k, &b) in text.iter().enumerate() {
            match self.nodes[cur].children.binary_search_by_key(&b, |c| c.0) {
                Ok(i) => cur = self.nodes[cur].children[i].1 as usize,
                Err(_) => return,
            }
            if let Some(t) = self.nodes[cur].token {
                f(k + 1, t);
            }
        }
    }

    /// The token spelling exactly `bytes`, if any.
    pub fn exact(&self, bytes: &[u8]) -> Option<TokenId> {
        let mut cur = 0usize;
        for &b in bytes {
            let k = self.nodes[cur]
                .children
                .binary_search_by_key(&b, |c| c.0)
                .ok()?;
            cur = self.nodes[cur].children[k].1 as usize;
        }
        self.nodes[cur].token
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Reusable compiler holding the trie and byte-fallback table of one
/// vocabulary.
#[derive(Debug, Clone)]
pub struct MddCompiler {
    trie: TokenTrie,
    byte_tokens: Option<Vec<Option<TokenId>>>,
}

impl MddCompiler {
    pub fn new(vocab: &Vocabulary) -> Self {
        let byte_tokens = vocab
            .byte_fallback()
            .then(|| (0..=255u8).map(|b| vocab.byte_token(b)).collect());
        Self {
            trie: TokenTrie::new(vocab),
            byte_tokens,
        }
    }

    pub fn trie(&self) -> &TokenTrie {
        &self.trie
    }

    /// Builds the diagram for `text`. Characters with no single-character
    /// token are spelled by a chain of byte tokens when byte fallback is on.
    pub fn compile(&self, text: &str) -> Result<Mdd, MddError> {
        let bytes = text.as_bytes();
        let n = bytes.len();
        let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); n + 1];
        for (i, ch) in text.char_indices() {
            let w = ch.len_utf8();
            self.trie.for_each_prefix(&bytes[i..], |len, token| {
                edges[i].push(Edge {
                    token,
                    target: i + len,
                })
            });
            if let Some(table) = &self.byte_tokens {
                if self.trie.exact(&bytes[i..i + w]).is_none() {
                    for k in i..i + w {
                        if let Some(token) = table[bytes[k] as usize] {
                            edges[k].push(Edge {
                                token,
                                target: k + 1,
                            });
                        }
                    }
                }
            }
        }

        let mut forward = vec![false; n + 1];
        forward[0] = true;
        let mut furthest = 0;
        for i in 0..=n {
            if forward[i] {
                furthest = i;
                for e in &edges[i] {
                    forward[e.target] = true;
                }
            }
        }
        let mut reaches_end = vec![false; n + 1];
        reaches_end[n] = true;
        for i in (0..n).rev() {
            edges[i].retain(|e| reaches_end[e.target]);
            reaches_end[i] = !edges[i].is_empty();
        }
        if !reaches_end[0] {
            return Err(MddError::NoTokenization(furthest));
        }

        let mut live = vec![false; n + 1];
        live[0] = true;
        for i in 0..n {
            if live[i] {
                for e in &edges[i] {
                    live[e.target] = true;
                }
            } else {
                edges[i].clear();
            }
        }
        for list in edges.iter_mut() {
            list.sort_by_key(|e| e.token);
        }
        Ok(Mdd {
            text: text.to_string(),
            edges,
            live,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub token: TokenId,
    pub target: usize,
}

#[derive(Debug, Clone)]
pub struct Mdd {
    text: String,
    edges: Vec<Vec<Edge>>,
    live: Vec<bool>,
}

impl Mdd {
    /// Compiles `text` against `vocab`. Builds a fresh trie; use
    /// [`MddCompiler`] to amortize it over many strings.
    pub fn compile(text: &str, vocab: &Vocabulary) -> Result<Mdd, MddError> {
        MddCompiler::new(vocab).compile(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn terminal(&self) -> usize {
        self.text.len()
    }

    /// Outgoing edges of `pos`, sorted by token id. Empty for the terminal
    /// and for trimmed positions.
    pub fn edges(&self, pos: usize) -> &[Edge] {
        self.edges.get(pos).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_live(&self, pos: usize) -> bool {
        self.live.get(pos).copied().unwrap_or(false)
    }

    pub fn live_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.live
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i)
    }

    pub fn node_count(&self) -> usize {
        self.live.iter().filter(|&&l| l).count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Number of paths from every position to the terminal (zero for
    /// trimmed positions).
    pub fn path_counts(&self) -> Vec<BigUint> {
        let n = self.terminal();
        let mut counts = vec![BigUint::zero(); n + 1];
        counts[n] = BigUint::one();
        for i in (0..n).rev() {
            let mut c = BigUint::zero();
            for e in &self.edges[i] {
                c += &counts[e.target];
            }
            counts[i] = c;
        }
        counts
    }

    pub fn count_tokenizations(&self) -> BigUint {
        self.path_counts().swap_remove(0)
    }

    /// Path count saturated to `u64`.
    pub fn count_saturating(&self) -> u64 {
        let n = self.terminal();
        let mut counts = vec![0u64; n + 1];
        counts[n] = 1;
        for i in (0..n).rev() {
            counts[i] = self.edges[i]
                .iter()
                .fold(0u64, |acc, e| acc.saturating_add(counts[e.target]));
        }
        counts[0]
    }

    /// Token ids that extend a tokenization prefix ending at `pos` towards
    /// the terminal.
    pub fn valid_next_tokens(&self, pos: usize) -> Result<Vec<TokenId>, MddError> {
        if !self.is_live(pos) {
            return Err(MddError::InvalidPosition(pos));
        }
        Ok(self.edges[pos].iter().map(|e| e.token).collect())
    }

    /// Follows `ids` from the root; returns the position reached, or `None`
    /// if some token has no matching edge.
    pub fn walk(&self, ids: &[TokenId]) -> Option<usize> {
        let mut pos = 0;
        for &t in ids {
            pos = self.edge_for(pos, t)?.target;
        }
        Some(pos)
    }

    pub fn edge_for(&self, pos: usize, token: TokenId) -> Option<&Edge> {
        let list = self.edges(pos);
        list.binary_search_by_key(&token, |e| e.token)
            .ok()
            .map(|k| &list[k])
    }

    /// Whether `ids` is a complete root-to-terminal path.
    pub fn contains(&self, ids: &[TokenId]) -> bool {
        self.walk(ids) == Some(self.terminal())
    }

    /// All paths in lexicographic token-id order.
    pub fn paths(&self) -> Paths<'_> {
        Paths {
            mdd: self,
            stack: vec![(0, 0)],
            ids: Vec::new(),
        }
    }

    /// Enumerates tokenizations, flagging the canonical one.
    pub fn enumerate<'a>(
        &'a self,
        tokenizer: &'a Tokenizer,
        limit: Option<usize>,
    ) -> impl Iterator<Item = Tokenization> + 'a {
        let canonical = tokenizer.encode_bytes(self.text.as_bytes()).ok();
        self.paths()
            .take(limit.unwrap_or(usize::MAX))
            .map(move |ids| Tokenization {
                is_canonical: canonical.as_deref() == Some(ids.as_slice()),
                ids,
                text: self.text.clone(),
            })
    }

    /// Graphviz rendering: one node per live position, edges labeled by
    /// token string.
    pub fn to_dot(&self, vocab: &Vocabulary) -> String {
        let mut out = String::from("digraph mdd {\n  rankdir=LR;\n");
        for pos in self.live_positions() {
            let shape = if pos == self.terminal() {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = writeln!(out, "  n{pos} [label=\"{pos}\", shape={shape}];");
        }
        for (pos, list) in self.edges.iter().enumerate() {
            for e in list {
                let label = vocab.token(e.token).unwrap_or("?");
                let _ = writeln!(
                    out,
                    "  n{pos} -> n{} [label=\"{}\"];",
                    e.target,
                    label.replace('\\', "\\\\").replace('"', "\\\"")
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Depth-first path iterator; see [`Mdd::paths`].
pub struct Paths<'a> {
    mdd: &'a Mdd,
    stack: Vec<(usize, usize)>,
    ids: Vec<TokenId>,
}

impl Iterator for Paths<'_> {
    type Item = Vec<TokenId>;

    fn next(&mut self) -> Option<Vec<TokenId>> {
        let terminal = self.mdd.terminal();
        while let Some(top) = self.stack.last_mut() {
            let node = top.0;
            if node == terminal {
                let out = self.ids.clone();
                self.stack.pop();
                self.ids.pop();
                return Some(out);
            }
            let edges = self.mdd.edges(node);
            if top.1 < edges.len() {
                let e = edges[top.1];
                top.1 += 1;
                self.ids.push(e.token);
                self.stack.push((e.target, 0));
            } else {
                self.stack.pop();
                self.ids.pop();
            }
        }
        None
    }
}
