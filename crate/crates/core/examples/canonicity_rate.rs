//! Fraction of dropout-sampled sequences whose first k tokens are canonical,
//! per k.

use tokspace::canonicity::canonicity_rate;
use tokspace::{Pretokenizer, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/llama2.json");
    let tok = Tokenizer::from(VocabFile::load(path)?).with_pretokenizer(Pretokenizer::MetaSpace);
    let text = tok.prepare("Tokenizations grow rapidly with sentence length");

    let mut lines = String::new();
    for seed in 0..500 {
        let ids = tok.dropout_encode(&text, 0.05, seed)?.ids;
        lines.push_str(&serde_json::to_string(&ids)?);
        lines.push('\n');
    }
    let report = canonicity_rate(&tok, &lines);
    for row in report.rows.iter().step_by(3) {
        println!(
            "{:>3} tokens  {:.3}  ({}/{})",
            row.length, row.rate, row.canonical, row.total
        );
    }
    Ok(())
}
