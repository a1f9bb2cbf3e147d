//! BPE dropout: how often each tokenization of a word appears as the drop
//! rate grows, and what fraction stays canonical.

use std::collections::BTreeMap;

use tokspace::{Pretokenizer, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/llama2.json");
    let tok = Tokenizer::from(VocabFile::load(path)?).with_pretokenizer(Pretokenizer::MetaSpace);
    let text = tok.prepare("Tokenizations");

    for p in [0.0, 0.1, 0.3, 0.6] {
        let mut seen: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut canonical = 0;
        for seed in 0..2000 {
            let t = tok.dropout_encode(&text, p, seed)?;
            canonical += usize::from(t.is_canonical);
            *seen.entry(tok.token_strings(&t.ids)).or_default() += 1;
        }
        let mut top: Vec<_> = seen.into_iter().collect();
        top.sort_by_key(|e| std::cmp::Reverse(e.1));
        println!(
            "p = {p}: {} distinct, {:.1}% canonical",
            top.len(),
            canonical as f64 / 20.0
        );
        for (pieces, n) in top.iter().take(3) {
            println!("  {n:>5}  {}", pieces.join(" "));
        }
    }
    Ok(())
}
