//! Scoring through a running logits bridge. Start one, then:
//!
//!     TOKSPACE_BRIDGE_URL=http://127.0.0.1:8000 cargo run --example bridge_client -- Tokens

use tokspace::model::{RemoteModel, BRIDGE_URL_ENV};
use tokspace::sampler::estimate_noncanonical_mass;
use tokspace::{Conditioning, Mdd, Pretokenizer, ScoringModel, Tokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(url) = std::env::var(BRIDGE_URL_ENV) else {
        eprintln!("set {BRIDGE_URL_ENV} to the bridge's base URL");
        std::process::exit(2);
    };
    let word = std::env::args().nth(1).unwrap_or_else(|| "Tokens".into());

    let remote = RemoteModel::connect(&url)?;
    let tok =
        Tokenizer::from(remote.vocab_file().clone()).with_pretokenizer(Pretokenizer::MetaSpace);
    let text = tok.prepare(&word);
    let mdd = Mdd::compile(&text, tok.vocab())?;
    let canonical = remote.canonical(&word)?;
    let cond = Conditioning::default().with_context(remote.bos_id().as_slice());

    let can = cond.score(&remote, &canonical)?.total_logprob;
    let non =
        estimate_noncanonical_mass(&remote, &mdd, &cond, &canonical, 1000, 0, 8)?.log_estimate;
    let share = 1.0 / (1.0 + (can - non).exp());
    println!("{} tokenizations of {word:?}", mdd.count_tokenizations());
    println!("canonical {:?}: {can:.6}", tok.token_strings(&canonical));
    println!("non-canonical share ≈ {share:.4}");
    Ok(())
}
