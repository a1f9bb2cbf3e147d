//! Exhaustive scoring: the exact marginal probability of a string, its most
//! likely tokenization, and how much mass the canonical one leaves behind.

use tokspace::exact::exact_summary;
use tokspace::model::TableModel;
use tokspace::{Conditioning, Mdd, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let tok = Tokenizer::from(VocabFile::load(format!("{dir}/toy.json"))?);
    let model = TableModel::load(format!("{dir}/toy_table.json").as_ref())?;
    let bos = tok.vocab().id("<s>").expect("toy vocabulary has <s>");
    let cond = Conditioning::default().with_context(&[bos]);

    for text in ["abc", "abcab", "cabcabca"] {
        let mdd = Mdd::compile(text, tok.vocab())?;
        let s = exact_summary(&model, &mdd, &cond, 1 << 16)?;
        let canonical = tok.canonical_encode(text)?.ids;
        let can = cond.score(&model, &canonical)?.total_logprob;
        println!("{text}: {} tokenizations", s.paths);
        println!("  marginal      {:.6}", s.marginal);
        println!(
            "  canonical     {can:.6}  {:?}",
            tok.token_strings(&canonical)
        );
        println!(
            "  most likely   {:.6}  {:?}",
            s.best.logprob,
            tok.token_strings(&s.best.ids)
        );
        println!("  off-canonical {:.4}", 1.0 - (can - s.marginal).exp());
    }
    Ok(())
}
