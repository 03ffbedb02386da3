//! Compare the analytic BPTT gradient with central finite differences on a
//! small random model.
//!
//! ```text
//! cargo run --release --example gradient_check -- [vocab] [hidden] [n]
//! ```

use memlab::datagen::{gen_uniform, Example};
use memlab::model::{self, init_model, ModelConfig};
use memlab::numkit::{softmax_cross_entropy, RandomStream};

const EPS: f64 = 1e-5;

fn loss(params: &memlab::model::LstmParams, ex: &Example) -> f64 {
    let (logits, _) = model::forward(params, &ex.tokens).unwrap();
    softmax_cross_entropy(&logits, ex.label as usize).unwrap()
}

fn main() -> memlab::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let vocab = args.first().copied().unwrap_or(30);
    let hidden = args.get(1).copied().unwrap_or(8);
    let n = args.get(2).copied().unwrap_or(7);

    let mut params = init_model(&ModelConfig::new(vocab, hidden, 3))?;
    let ex = gen_uniform(vocab, n, 1, &mut RandomStream::new(3, "gradient-check"))?.remove(0);
    let (_, cache) = model::forward(&params, &ex.tokens)?;
    let (l, analytic) = model::backward(&params, &cache, ex.label)?;
    println!("V={vocab} d={hidden} n={n} label={} loss={l:.6}", ex.label);

    let names = ["w_x", "w_h", "b"];
    for k in 0..3 {
        let mut worst = 0.0f64;
        let mut worst_at = 0;
        for i in 0..analytic.tensors()[k].len() {
            let orig = params.weights.tensors()[k][i];
            params.weights.tensors_mut()[k][i] = orig + EPS;
            let up = loss(&params, &ex);
            params.weights.tensors_mut()[k][i] = orig - EPS;
            let down = loss(&params, &ex);
            params.weights.tensors_mut()[k][i] = orig;
            let fd = (up - down) / (2.0 * EPS);
            let a = analytic.tensors()[k][i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            if rel > worst {
                worst = rel;
                worst_at = i;
            }
        }
        println!(
            "{:<4} {:>5} entries  worst relative error {:.2e} (entry {worst_at})",
            names[k],
            analytic.tensors()[k].len(),
            worst
        );
    }
    Ok(())
}
