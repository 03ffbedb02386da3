//! The file-based pipeline end to end on a tiny grid: generate data, train
//! with seed selection, evaluate, probe, and export figure CSVs. The same
//! steps are available as `memlab gen-data | train | eval | probe | report`.
//!
//! ```text
//! cargo run --release --example pipeline -- [out-dir]
//! ```

use memlab::corpus::SynthConfig;
use memlab::datagen::Regimen;
use memlab::experiment::{self, CorpusSource, ExperimentConfig};
use memlab::trainer::{Cell, TrainConfig};

fn main() -> memlab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "memlab-pipeline-demo".into());
    let cfg = ExperimentConfig {
        corpus: CorpusSource::Synthetic(SynthConfig {
            n_tokens: 60_000,
            vocab_size: 500,
            ..Default::default()
        }),
        regimens: vec![Regimen::Language, Regimen::Unigram, Regimen::Uniform],
        lengths: vec![5, 9],
        hidden_sizes: vec![32],
        train: TrainConfig {
            max_epochs: 40,
            n_seeds: 2,
            clip: Some(1.0),
            ..Default::default()
        },
        max_examples: Some(6_000),
        rare_test_size: 500,
        out: out.into(),
        seed: 11,
        ..Default::default()
    };
    cfg.save(&std::path::PathBuf::from(&cfg.out).with_extension("json"))?;

    let gen = experiment::cmd_gen_data(&cfg)?;
    println!("vocabulary {} types, {} training sets", gen.vocab_size, gen.training_sets);

    let results = experiment::cmd_train(&cfg, &[], 1)?;
    print!("{}", memlab::trainer::summary_csv(&results));

    let best = results
        .iter()
        .filter(|r| r.cell.regimen == Regimen::Language)
        .max_by(|a, b| a.test_acc.total_cmp(&b.test_acc))
        .expect("language cells were trained");
    let cell: Cell = best.cell;
    let report = experiment::cmd_probe(&cfg, &cell, 100)?;
    println!(
        "probe {cell}: full-state R2 c={:.3}, best neuron {} R2 c={:.3}",
        report.full_state_r2_c,
        report.top_neuron().neuron,
        report.top_neuron().r2_c
    );

    let files = experiment::cmd_report(&cfg)?;
    for f in files.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
