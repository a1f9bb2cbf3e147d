//! Importance-sampling estimate of a marginal string probability, watched
//! converging towards the exact value.

use tokspace::exact::exact_marginal;
use tokspace::model::TableModel;
use tokspace::sampler::{estimate_marginal, estimate_noncanonical_mass};
use tokspace::{Conditioning, Mdd, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let tok = Tokenizer::from(VocabFile::load(format!("{dir}/toy.json"))?);
    let model = TableModel::load(format!("{dir}/toy_table.json").as_ref())?;
    let cond = Conditioning::default().with_context(&[0]);

    let text = "abcabcaabcbc";
    let mdd = Mdd::compile(text, tok.vocab())?;
    let exact = exact_marginal(&model, &mdd, &cond, 1 << 20)?;
    let est = estimate_marginal(&model, &mdd, &cond, 1 << 16, 7, 4)?;
    println!("{:>7}  {:>12}  {:>10}", "n", "log p(x)", "ess");
    for t in &est.trace {
        println!("{:>7}  {:>12.6}  {:>10.1}", t.n, t.log_estimate, t.ess);
    }
    println!("exact    {exact:>12.6}");

    let canonical = tok.canonical_encode(text)?.ids;
    let non = estimate_noncanonical_mass(&model, &mdd, &cond, &canonical, 1 << 14, 7, 4)?;
    println!("non-canonical mass {:.6} (log)", non.log_estimate);
    Ok(())
}
