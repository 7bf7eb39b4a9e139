//! Trains one variant on a generated corpus and prints per-epoch accuracy.
//!
//! cargo run --release -p vsl-core --example synthetic_train -- vsl-gg-hier 0.1

use std::time::Instant;

use vsl_core::data::{Corpus, SplitManifest, SyntheticConfig, SyntheticGrammar, VocabOptions};
use vsl_core::train::{train_with, Phase, TrainConfig, TrainData};
use vsl_core::{ModelConfig, Variant, VocabSizes, VslModel};

fn main() -> vsl_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let variant: Variant = args.get(1).map_or("vsl-gg-hier", String::as_str).parse()?;
    let alpha: f64 = args.get(2).map_or(Ok(0.1), |a| a.parse()).expect("alpha must be a number");
    let n: usize = args.get(3).map_or(Ok(50), |a| a.parse()).expect("size must be an integer");
    let epochs: usize = args.get(4).map_or(Ok(200), |a| a.parse()).expect("epochs must be an integer");

    let grammar = SyntheticGrammar::new(SyntheticConfig::default())?;
    let train = grammar.sample(n, 0);
    let dev = grammar.sample(200, 1);
    let corpus = Corpus::build(&train, &[], &dev, &VocabOptions::default(), SplitManifest::supervised(n))?;
    let dev = corpus.vocabs.encode_all(&dev, 1_000_000)?;
    let sizes = VocabSizes {
        words: corpus.vocabs.words.len(),
        chars: corpus.vocabs.chars.len(),
        labels: corpus.vocabs.labels.len(),
    };
    let config = ModelConfig {
        variant,
        word_dim: 16,
        char_dim: 8,
        char_hidden: 8,
        word_hidden: 16,
        z_dim: 8,
        y_dim: 8,
        decoder_hidden: 16,
        freeze_word_embeddings: None,
    };
    let mut model = VslModel::new(&config, sizes, None, 0)?;
    let train_config = TrainConfig {
        epochs,
        learning_rate: 0.01,
        patience: epochs,
        ..TrainConfig::default()
    };
    let priors = model.new_prior_store(1)?;
    let data = TrainData {
        labeled: &corpus.labeled,
        unlabeled: &[],
        dev: &dev,
        labels: &corpus.vocabs.labels,
    };
    let start = Instant::now();
    let outcome = train_with(&mut model, priors, data, &train_config, alpha, Phase::Main, &mut |r| {
        println!("epoch {:3} loss {:8.4} dev {:.4}", r.epoch, r.loss, r.dev_metric);
        Ok(())
    })?;
    let acc = vsl_core::train::evaluate_tokens(&model, &corpus.labeled)?;
    println!(
        "{variant}: best dev {:.4} at epoch {}, train accuracy {acc:.4}, {:.1}s",
        outcome.best_metric,
        outcome.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
