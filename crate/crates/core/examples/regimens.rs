//! Generate every data regimen from one synthetic corpus and show what each
//! keeps: unigram frequencies, local order, or nothing at all.
//!
//! ```text
//! cargo run --release --example regimens -- [n]
//! ```

use std::collections::HashSet;

use memlab::corpus::{Corpus, SynthConfig};
use memlab::datagen::{generate, DatasetSpec, Example, Regimen};

/// Share of adjacent token pairs that also occur adjacently in the corpus.
fn corpus_bigram_share(examples: &[Example], seen: &HashSet<(u32, u32)>) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for ex in examples {
        for w in ex.tokens.windows(2) {
            total += 1;
            hit += seen.contains(&(w[0], w[1])) as usize;
        }
    }
    hit as f64 / total.max(1) as f64
}

fn main() -> memlab::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(10, |a| a.parse().expect("n"));
    let synth = SynthConfig {
        n_tokens: 200_000,
        vocab_size: 5_000,
        ..Default::default()
    };
    let corpus = Corpus::synthetic(1, &synth)?;
    let seen: HashSet<(u32, u32)> = corpus.stream.ids.windows(2).map(|w| (w[0], w[1])).collect();
    println!("corpus: {} tokens, {} types, n={n}", corpus.stream.len(), corpus.vocab.len());
    println!("{:<10} {:>8} {:>10} {:>12} {:>14}", "regimen", "examples", "labels", "top1 share", "corpus bigrams");

    let regimens = [
        Regimen::Language,
        Regimen::KGram(5),
        Regimen::KGram(1),
        Regimen::Unigram,
        Regimen::Uniform,
        Regimen::RareTest,
    ];
    for regimen in regimens {
        let spec = DatasetSpec {
            regimen,
            n,
            count: if regimen == Regimen::RareTest { Some(5_000) } else { None },
            seed: 1,
            source: "synthetic".into(),
        };
        let examples = generate(&spec, &corpus.vocab, Some(&corpus.stream))?;
        let labels: HashSet<u32> = examples.iter().map(|e| e.label).collect();
        let top = corpus.vocab.freqs().iter().position(|&f| f == *corpus.vocab.freqs().iter().max().unwrap());
        let top_share = examples
            .iter()
            .filter(|e| Some(e.label as usize) == top)
            .count() as f64
            / examples.len() as f64;
        println!(
            "{:<10} {:>8} {:>10} {:>12.4} {:>14.3}",
            regimen.to_string(),
            examples.len(),
            labels.len(),
            top_share,
            corpus_bigram_share(&examples, &seen)
        );
    }

    let first = generate(
        &DatasetSpec {
            regimen: Regimen::Language,
            n,
            count: Some(1),
            seed: 1,
            source: "synthetic".into(),
        },
        &corpus.vocab,
        Some(&corpus.stream),
    )?
    .remove(0);
    let words = corpus.vocab.decode(&first.tokens)?;
    println!("\nfirst language example: {}", words.join(" "));
    println!("label (position {}): {}", n / 2 + 1, corpus.vocab.token_of(first.label).unwrap());
    Ok(())
}
