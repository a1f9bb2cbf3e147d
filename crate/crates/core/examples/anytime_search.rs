//! Branch-and-bound for the most likely tokenization of a string too long to
//! enumerate. The canonical tokenization seeds the incumbent; each improvement
//! is printed with the node count at which it was found.

use std::time::Duration;

use tokspace::model::{TableModel, TableRule};
use tokspace::search::{branch_and_bound, SearchOptions};
use tokspace::{Conditioning, Mdd, Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let tok = Tokenizer::from(VocabFile::load(format!("{dir}/toy.json"))?);
    // Ids: <s> </s> a b c ab bc abc ca. Two-letter tokens are favoured, so the
    // canonical "abc"-heavy tokenization is far from the best.
    let row = vec![0.0, 0.01, 0.1, 0.1, 0.1, 0.25, 0.2, 0.04, 0.2];
    let after_ab = vec![0.0, 0.01, 0.05, 0.05, 0.3, 0.09, 0.1, 0.1, 0.3];
    let model = TableModel::new(9, Some(row), vec![(TableRule::Suffix(vec![5]), after_ab)])?;

    let text = "abcabcaabcbcabcabcaab".repeat(3);
    let mdd = Mdd::compile(&text, tok.vocab())?;
    let canonical = tok.canonical_encode(&text)?.ids;
    println!(
        "{} tokenizations of {} characters",
        mdd.count_tokenizations(),
        text.len()
    );

    let opts = SearchOptions {
        budget: Some(Duration::from_secs(2)),
        threads: 4,
        ..SearchOptions::default()
    };
    let r = branch_and_bound(&model, &mdd, &Conditioning::default(), &canonical, &opts)?;
    for u in &r.incumbent_trace {
        println!(
            "  {:>10} nodes  {:>8.3} ms  {:.6}",
            u.nodes_expanded,
            u.elapsed_secs * 1e3,
            u.logprob
        );
    }
    println!(
        "best {:.6} vs canonical {:.6}; {} nodes, {} pruned, timed out: {}",
        r.best.logprob, r.canonical_logprob, r.nodes_expanded, r.pruned, r.timed_out
    );
    println!("{:?}", tok.token_strings(&r.best.ids));
    Ok(())
}
