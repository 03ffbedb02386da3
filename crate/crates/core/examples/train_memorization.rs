//! Train one seed on one regimen and print the per-epoch curve.
//!
//! ```text
//! cargo run --release --example train_memorization -- [regimen] [n] [hidden] [epochs] [examples]
//! cargo run --release --example train_memorization -- language 40 50 60 20000
//! ```
//!
//! Uses the desk-scale settings: synthetic corpus, gradient norm clipped at 1.

use std::time::Instant;

use memlab::corpus::{Corpus, SynthConfig};
use memlab::datagen::{generate, split_validation, DatasetSpec, Regimen};
use memlab::model::ModelConfig;
use memlab::numkit::RandomStream;
use memlab::trainer::{Datasets, TrainConfig, Trainer};

fn main() -> memlab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let regimen: Regimen = arg(0, "language").parse()?;
    let n: usize = arg(1, "40").parse().expect("n");
    let hidden: usize = arg(2, "50").parse().expect("hidden");
    let epochs: usize = arg(3, "60").parse().expect("epochs");
    let examples: usize = arg(4, "20000").parse().expect("examples");
    let seed = 7;

    let synth = SynthConfig {
        n_tokens: examples * n,
        ..Default::default()
    };
    let corpus = Corpus::synthetic(seed, &synth)?;
    println!("corpus: {} tokens, {} types", corpus.stream.len(), corpus.vocab.len());

    let spec = |regimen, count| DatasetSpec {
        regimen,
        n,
        count,
        seed,
        source: "synthetic".into(),
    };
    let all = generate(&spec(regimen, None), &corpus.vocab, Some(&corpus.stream))?;
    let test = generate(&spec(Regimen::RareTest, Some(2_000)), &corpus.vocab, None)?;
    let (train, validation) = split_validation(all, 0.05, &mut RandomStream::new(seed, "split"))?;
    println!("train {} / validation {} / rare test {}", train.len(), validation.len(), test.len());

    let config = TrainConfig {
        max_epochs: epochs,
        clip: Some(1.0),
        ..Default::default()
    };
    let data = Datasets {
        train: &train,
        validation: &validation,
        test: &test,
    };
    let mut trainer = Trainer::new(&config, &ModelConfig::new(corpus.vocab.len(), hidden, seed))?;
    println!("epoch  lr        train_loss  val_loss  val_acc  test_acc  secs");
    while !trainer.is_finished() {
        let start = Instant::now();
        let m = trainer.run_epoch(&data)?;
        println!(
            "{:>5}  {:.2e}  {:>10.4}  {:>8.4}  {:>7.4}  {:>8.4}  {:.1}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.val_loss,
            m.val_acc,
            m.test_acc,
            start.elapsed().as_secs_f64()
        );
    }
    println!("stopped: {}", trainer.stop_reason().expect("finished"));
    Ok(())
}
