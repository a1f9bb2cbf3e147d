//! How fast the number of tokenizations grows with string length, under the
//! Llama2 vocabulary.
//!
//!     cargo run --example count_tokenizations -- "Your sentence here"

use tokspace::{Mdd, Pretokenizer, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/llama2.json");
    let tok = Tokenizer::from(VocabFile::load(path)?).with_pretokenizer(Pretokenizer::MetaSpace);

    let sentence = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Tokenizations grow rapidly with sentence length".to_string());
    let words: Vec<usize> = sentence
        .match_indices(' ')
        .map(|(i, _)| i)
        .chain([sentence.len()])
        .collect();
    for end in words {
        let text = tok.prepare(&sentence[..end]);
        let mdd = Mdd::compile(&text, tok.vocab())?;
        println!(
            "{end:>4} chars  {:>30}  {:?}",
            mdd.count_tokenizations(),
            &sentence[..end]
        );
    }
    Ok(())
}
