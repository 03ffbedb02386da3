//! Linear probes for a timestep counter. A hand-wired network that solves the
//! task carries an explicit counter unit; an untrained network of the same
//! size does not.
//!
//! ```text
//! cargo run --release --example counting_probe -- [n] [hidden]
//! ```

use memlab::datagen::gen_uniform;
use memlab::model::{init_model, middle_token_model, LstmParams, ModelConfig};
use memlab::numkit::RandomStream;
use memlab::probe::{self, StateKind};

fn show(name: &str, params: &LstmParams, n: usize) -> memlab::Result<()> {
    let examples = gen_uniform(params.vocab_size(), n, 200, &mut RandomStream::new(9, "probe-demo"))?;
    let acc = memlab::trainer::evaluate(params, &examples)?;
    let report = probe::probe(params, &examples, 100, 2)?;
    println!("\n{name}: accuracy {acc:.3}");
    println!(
        "  full-state R2  c={:.4}  h={:.4}",
        report.full_state_r2_c, report.full_state_r2_h
    );
    for r in report.per_neuron.iter().take(3) {
        println!("  neuron {:>3}  R2 c={:.4}  h={:.4}", r.neuron, r.r2_c, r.r2_h);
    }
    for s in &report.top_shapes {
        println!(
            "  neuron {:>3}  |pre-target r|={:.3}  post/at-target magnitude={:.3}  ({} examples)",
            s.neuron, s.mean_abs_pre_corr, s.mean_post_mag_ratio, s.examples
        );
    }
    let top = report.top_neuron().neuron;
    let trace = probe::trace_neuron(params, &examples[0], top, StateKind::C)?;
    let values: Vec<String> = trace.iter().map(|(_, v)| format!("{v:.2}")).collect();
    println!("  c[{top}] over t=1..{n}: {}", values.join(" "));
    Ok(())
}

fn main() -> memlab::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let n = args.first().copied().unwrap_or(20);
    let hidden = args.get(1).copied().unwrap_or(16);
    let vocab = 50;
    show("hand-wired counter", &middle_token_model(vocab, hidden, n, 1)?, n)?;
    show("untrained", &init_model(&ModelConfig::new(vocab, hidden, 1))?, n)?;
    Ok(())
}
