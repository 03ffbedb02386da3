#![allow(dead_code)]

use memlab::datagen::{gen_uniform, Example};
use memlab::model::{self, init_model, LstmParams, LstmWeights, ModelConfig};
use memlab::numkit::{softmax_cross_entropy, RandomStream};

/// Central-difference step used by every gradient check.
pub const FD_EPS: f64 = 1e-5;

/// Gradient entries smaller than this are compared against it instead of
/// their own magnitude. At `FD_EPS` the difference quotient carries about
/// 1e-11 of absolute rounding noise, which would swamp the ratio for
/// entries near zero.
pub const REL_FLOOR: f64 = 1e-4;

/// Mean cross-entropy over `batch`, straight from the forward pass.
pub fn mean_loss(params: &LstmParams, batch: &[&Example]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|ex| {
            let (logits, _) = model::forward(params, &ex.tokens).unwrap();
            softmax_cross_entropy(&logits, ex.label as usize).unwrap()
        })
        .sum();
    total / batch.len() as f64
}

/// Central finite differences of [`mean_loss`] for every trainable entry.
pub fn fd_gradient(params: &LstmParams, batch: &[&Example], eps: f64) -> LstmWeights {
    let mut grad = LstmWeights::zeros(params.hidden());
    let mut probe = params.clone();
    for k in 0..3 {
        let len = params.weights.tensors()[k].len();
        for i in 0..len {
            let orig = probe.weights.tensors()[k][i];
            probe.weights.tensors_mut()[k][i] = orig + eps;
            let up = mean_loss(&probe, batch);
            probe.weights.tensors_mut()[k][i] = orig - eps;
            let down = mean_loss(&probe, batch);
            probe.weights.tensors_mut()[k][i] = orig;
            grad.tensors_mut()[k][i] = (up - down) / (2.0 * eps);
        }
    }
    grad
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
pub fn max_rel_err(a: &LstmWeights, b: &LstmWeights, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (ta, tb) in a.tensors().into_iter().zip(b.tensors()) {
        for (x, y) in ta.iter().zip(tb) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// One random gradient-check instance: V ≤ 50, d ≤ 16, n ≤ 10.
pub struct GradInstance {
    pub params: LstmParams,
    pub examples: Vec<Example>,
}

pub fn grad_instance(rng: &mut RandomStream, case: u64, batch: usize) -> GradInstance {
    let v = 2 + rng.below(49);
    let d = 1 + rng.below(16);
    let n = 1 + rng.below(10);
    let mut cfg = ModelConfig::new(v, d, case);
    // larger gate weights so the check also covers partly saturated units
    cfg.init_scale = 0.5 + rng.next_f64();
    let mut params = init_model(&cfg).unwrap();
    for t in params.weights.tensors_mut() {
        if t.len() == 4 * d {
            for b in t.iter_mut() {
                *b += rng.next_f64() - 0.5;
            }
        }
    }
    GradInstance {
        params,
        examples: gen_uniform(v, n, batch, rng).unwrap(),
    }
}

/// Worst relative error of the single-example BPTT gradient over `count`
/// random instances.
pub fn single_example_grad_check(seed: u64, count: u64) -> Vec<(String, f64)> {
    let mut rng = RandomStream::new(seed, "gradcheck/instances");
    (0..count)
        .map(|case| {
            let inst = grad_instance(&mut rng, case, 1);
            let ex = &inst.examples[0];
            let (_, cache) = model::forward(&inst.params, &ex.tokens).unwrap();
            let (_, analytic) = model::backward(&inst.params, &cache, ex.label).unwrap();
            let numeric = fd_gradient(&inst.params, &[ex], FD_EPS);
            let label = format!(
                "V={} d={} n={}",
                inst.params.vocab_size(),
                inst.params.hidden(),
                ex.len()
            );
            (label, max_rel_err(&analytic, &numeric, REL_FLOOR))
        })
        .collect()
}

/// Outcome of one dataset invariant.
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

fn counts(ids: impl Iterator<Item = u32>, v: usize) -> Vec<u64> {
    let mut c = vec![0u64; v];
    for t in ids {
        c[t as usize] += 1;
    }
    c
}

/// Dataset invariants over roughly `target` generated examples per regimen.
pub fn dataset_invariants(seed: u64, target: usize) -> Vec<Check> {
    use memlab::corpus::{Corpus, SynthConfig};
    use memlab::datagen::{
        gen_kgram, gen_language, gen_rare_test, gen_unigram, generate, label_index, DatasetSpec, Regimen,
        RARE_SET_SIZE,
    };

    let n = 10;
    let k = 5;
    let cfg = SynthConfig {
        n_tokens: target * n,
        vocab_size: 2_000,
        ..Default::default()
    };
    let corpus = Corpus::synthetic(seed, &cfg).unwrap();
    let stream = &corpus.stream;
    let v = corpus.vocab.len();
    let t = stream.len();
    assert_eq!(t % (n * k), 0, "corpus length must be a multiple of n·k");
    let mut out = Vec::new();

    let uni = gen_unigram(stream, n, &mut RandomStream::new(seed, "inv/unigram")).unwrap();
    let uni_counts = counts(uni.iter().flat_map(|e| e.tokens.iter().copied()), v);
    let corpus_counts = counts(stream.ids.iter().copied(), v);
    out.push(Check {
        name: "unigram permutation preserves the frequency vector",
        ok: uni_counts == corpus_counts && uni.len() == t / n,
        detail: format!("{} examples, {} types", uni.len(), v),
    });

    let kg = gen_kgram(stream, k, n, &mut RandomStream::new(seed, "inv/kgram")).unwrap();
    let flat: Vec<u32> = kg.iter().flat_map(|e| e.tokens.iter().copied()).collect();
    let mut got: Vec<&[u32]> = flat.chunks_exact(k).collect();
    let mut want: Vec<&[u32]> = stream.ids.chunks_exact(k).collect();
    got.sort_unstable();
    want.sort_unstable();
    out.push(Check {
        name: "k-gram output is a permutation of the corpus chunks",
        ok: got == want,
        detail: format!("k={k}, {} chunks", want.len()),
    });

    let k1 = gen_kgram(stream, 1, n, &mut RandomStream::new(seed, "inv/same")).unwrap();
    let u1 = gen_unigram(stream, n, &mut RandomStream::new(seed, "inv/same")).unwrap();
    out.push(Check {
        name: "k=1 chunking reduces to the unigram regimen",
        ok: k1 == u1,
        detail: format!("{} examples compared", k1.len()),
    });

    let rare = corpus.vocab.rarest(RARE_SET_SIZE).unwrap();
    let rt = gen_rare_test(&corpus.vocab, n, target, RARE_SET_SIZE, &mut RandomStream::new(seed, "inv/rare")).unwrap();
    let all_rare = rt.iter().all(|e| e.tokens.iter().all(|tok| rare.contains(tok)));
    let rare_max = rare.iter().map(|&r| corpus.vocab.freq(r)).max().unwrap();
    let others_min = (0..v as u32).filter(|i| !rare.contains(i)).map(|i| corpus.vocab.freq(i)).min().unwrap();
    out.push(Check {
        name: "rare test uses only the 100 rarest types",
        ok: all_rare && rare.len() == RARE_SET_SIZE && rare_max <= others_min,
        detail: format!("{} examples; max rare freq {rare_max}, min other freq {others_min}", rt.len()),
    });

    let mut bad = 0usize;
    let mut checked = 0usize;
    let lang = gen_language(stream, n).unwrap();
    let mut sets = vec![("uniform", gen_uniform(v, n, target, &mut RandomStream::new(seed, "inv/uniform")).unwrap())];
    sets.push(("unigram", uni));
    sets.push(("kgram", kg));
    sets.push(("language", lang));
    sets.push(("rare_test", rt));
    for regimen in [Regimen::KGram(10), Regimen::KGram(50)] {
        let spec = DatasetSpec {
            regimen,
            n,
            count: None,
            seed,
            source: "invariants".into(),
        };
        sets.push(("kgram", generate(&spec, &corpus.vocab, Some(stream)).unwrap()));
    }
    let mid = label_index(n).unwrap();
    let mut shortest = usize::MAX;
    for (_, exs) in &sets {
        shortest = shortest.min(exs.len());
        for e in exs {
            checked += 1;
            if e.label != e.tokens[mid] || e.tokens.len() != n {
                bad += 1;
            }
        }
    }
    out.push(Check {
        name: "label is the middle token in every regimen",
        ok: bad == 0 && shortest >= target,
        detail: format!("{checked} examples over {} sets, {bad} mismatches", sets.len()),
    });
    out
}
