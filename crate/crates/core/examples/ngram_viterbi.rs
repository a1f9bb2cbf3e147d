//! A bigram model trained on canonical encodings, and the exact most likely
//! tokenization under it by dynamic programming over the diagram.

use tokspace::exact::{exact_most_likely, viterbi_bigram};
use tokspace::model::NgramModel;
use tokspace::{Conditioning, Mdd, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy.json");
    let tok = Tokenizer::from(VocabFile::load(path)?);
    let corpus: Vec<Vec<u32>> = ["abcab", "cabca", "bcabc", "aabbcc", "abcabcabc"]
        .iter()
        .map(|s| tok.canonical_encode(s).map(|t| t.ids))
        .collect::<Result<_, _>>()?;
    let model = NgramModel::train(2, tok.vocab().len(), &corpus, 0.5)?;

    let text = "abcabcabca";
    let mdd = Mdd::compile(text, tok.vocab())?;
    let cond = Conditioning::default();
    let dp = viterbi_bigram(&model, &mdd, &cond)?;
    let brute = exact_most_likely(&model, &mdd, &cond, 1 << 20)?;
    println!(
        "viterbi   {:.6} {:?}",
        dp.logprob,
        tok.token_strings(&dp.ids)
    );
    println!(
        "exhaustive {:.6} over {} paths",
        brute.logprob,
        mdd.count_tokenizations()
    );
    Ok(())
}
