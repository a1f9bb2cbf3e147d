//! Multiple-choice scoring with the canonical, marginal, non-canonical and
//! mixture classifiers on a tiny dataset.

use tokspace::model::TableModel;
use tokspace::qa::{read_dataset, Classifier, EvalConfig, QaHarness, QaOptions};
use tokspace::{Tokenizer, VocabFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let tok = Tokenizer::from(VocabFile::load(format!("{dir}/toy.json"))?);
    let model = TableModel::load(format!("{dir}/toy_table.json").as_ref())?;
    let opts = QaOptions {
        bos: tok.vocab().id("<s>"),
        ..QaOptions::default()
    };
    let harness = QaHarness::new(&model, &tok, opts);
    let data = harness.prepare_all(&read_dataset(format!("{dir}/qa.jsonl").as_ref())?)?;

    for (classifier, alpha) in [
        (Classifier::Canonical, 1.0),
        (Classifier::Marginal, 1.0),
        (Classifier::Noncanonical, 0.0),
        (Classifier::Mixture, 0.5),
    ] {
        let config = EvalConfig {
            classifier,
            n_samples: 32,
            alpha,
            seeds: (0..8).collect(),
        };
        let r = harness.evaluate(&data, &config)?;
        println!(
            "{classifier:?}: accuracy {:.3} ± {:.3}",
            r.mean_accuracy, r.stdev_accuracy
        );
    }
    Ok(())
}
