//! The decision diagram of " Bird" over a thirteen-token vocabulary: every
//! path, then the diagram itself in Graphviz DOT.

use tokspace::{Mdd, Vocabulary};

fn main() {
    let vocab = Vocabulary::from_tokens([
        "▁", "▁B", "▁Bi", "▁Bir", "▁Bird", "B", "Bi", "i", "ir", "ird", "r", "rd", "d",
    ])
    .expect("distinct tokens");
    let mdd = Mdd::compile("▁Bird", &vocab).expect("tokenizable");

    println!(
        "{} live positions, {} paths",
        mdd.live_positions().count(),
        mdd.count_tokenizations()
    );
    for path in mdd.paths() {
        let pieces: Vec<&str> = path.iter().map(|&id| vocab.token(id).unwrap()).collect();
        println!("  {}", pieces.join(" | "));
    }
    println!();
    print!("{}", mdd.to_dot(&vocab));
}
