//! The training regimens, the rare-word test distribution, validation splits,
//! and the JSON Lines dataset format.
//!
//! Every example's label is the token at [`label_index`]: the middle token for
//! odd lengths, the `(n/2 + 1)`-th (1-based) for even lengths.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{TokenId, TokenStream, Vocabulary};
use crate::error::{Error, Result};
use crate::numkit::RandomStream;

/// Sequence lengths used for the full accuracy-vs-length grid.
pub const FULL_GRID_LENGTHS: [usize; 16] = [
    10, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200, 220, 240, 260, 280, 300,
];

/// Number of rare types the test distribution draws from.
pub const RARE_SET_SIZE: usize = 100;

/// 0-based position of the label inside a length-`n` sequence.
pub fn label_index(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    Ok(n / 2)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub label: TokenId,
}

impl Example {
    /// Build an example, labelling it with its middle token.
    pub fn from_tokens(tokens: Vec<TokenId>) -> Result<Self> {
        let label = tokens[label_index(tokens.len())?];
        Ok(Self { tokens, label })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Where training sequences come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regimen {
    /// i.i.d. uniform tokens over the vocabulary.
    Uniform,
    /// The corpus with its tokens randomly permuted.
    Unigram,
    /// The corpus cut into length-k chunks, chunks randomly permuted.
    KGram(usize),
    /// The corpus in its original order.
    Language,
    /// i.i.d. uniform over the rarest types (evaluation only).
    RareTest,
}

impl Regimen {
    /// The six training regimens in increasing order of linguistic structure.
    pub fn full_grid_regimens() -> Vec<Regimen> {
        vec![
            Regimen::Uniform,
            Regimen::Unigram,
            Regimen::KGram(5),
            Regimen::KGram(10),
            Regimen::KGram(50),
            Regimen::Language,
        ]
    }

    pub fn needs_corpus(self) -> bool {
        matches!(self, Regimen::Unigram | Regimen::KGram(_) | Regimen::Language)
    }
}

impl fmt::Display for Regimen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regimen::Uniform => f.write_str("uniform"),
            Regimen::Unigram => f.write_str("unigram"),
            Regimen::KGram(k) => write!(f, "{k}gram"),
            Regimen::Language => f.write_str("language"),
            Regimen::RareTest => f.write_str("rare_test"),
        }
    }
}

impl FromStr for Regimen {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Regimen::Uniform),
            "unigram" => Ok(Regimen::Unigram),
            "language" => Ok(Regimen::Language),
            "rare_test" => Ok(Regimen::RareTest),
            other => other
                .strip_suffix("gram")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(Regimen::KGram)
                .ok_or_else(|| Error::Config(format!("unknown regimen {other:?}"))),
        }
    }
}

impl Serialize for Regimen {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Regimen {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub regimen: Regimen,
    pub n: usize,
    /// Number of examples; `None` means every window the corpus yields.
    pub count: Option<usize>,
    pub seed: u64,
    pub source: String,
}

impl DatasetSpec {
    fn stream(&self) -> RandomStream {
        RandomStream::new(self.seed, format!("datagen/{}/n{}", self.regimen, self.n))
    }
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    Ok(())
}

fn windows(ids: &[TokenId], n: usize) -> Result<Vec<Example>> {
    ids.chunks_exact(n).map(|w| Example::from_tokens(w.to_vec())).collect()
}

pub fn gen_uniform(vocab_size: usize, n: usize, count: usize, rng: &mut RandomStream) -> Result<Vec<Example>> {
    check_len(n)?;
    if vocab_size == 0 {
        return Err(Error::Config("uniform regimen needs a non-empty vocabulary".into()));
    }
    (0..count)
        .map(|_| Example::from_tokens((0..n).map(|_| rng.below(vocab_size) as TokenId).collect()))
        .collect()
}

/// Permute every corpus token, then cut into `⌊T/n⌋` windows.
pub fn gen_unigram(corpus: &TokenStream, n: usize, rng: &mut RandomStream) -> Result<Vec<Example>> {
    check_len(n)?;
    if corpus.len() < n {
        return Err(Error::Data(format!("corpus has {} tokens, shorter than n={n}", corpus.len())));
    }
    let mut ids = corpus.ids.clone();
    rng.shuffle(&mut ids);
    windows(&ids, n)
}

/// Cut the corpus into length-`k` chunks (short tail dropped), permute the
/// chunks, concatenate, then window as in [`gen_unigram`].
pub fn gen_kgram(corpus: &TokenStream, k: usize, n: usize, rng: &mut RandomStream) -> Result<Vec<Example>> {
    check_len(n)?;
    if k == 0 {
        return Err(Error::Config("chunk length k must be at least 1".into()));
    }
    if corpus.len() < k {
        return Err(Error::Data(format!("corpus has {} tokens, shorter than k={k}", corpus.len())));
    }
    let mut chunks: Vec<&[TokenId]> = corpus.ids.chunks_exact(k).collect();
    rng.shuffle(&mut chunks);
    let ids: Vec<TokenId> = chunks.concat();
    if ids.len() < n {
        return Err(Error::Data(format!("chunked corpus has {} tokens, shorter than n={n}", ids.len())));
    }
    windows(&ids, n)
}

/// Consecutive non-overlapping windows in corpus order.
pub fn gen_language(corpus: &TokenStream, n: usize) -> Result<Vec<Example>> {
    check_len(n)?;
    if corpus.len() < n {
        return Err(Error::Data(format!("corpus has {} tokens, shorter than n={n}", corpus.len())));
    }
    windows(&corpus.ids, n)
}

/// Tokens i.i.d. uniform over the `rare_k` rarest vocabulary types.
pub fn gen_rare_test(
    vocab: &Vocabulary,
    n: usize,
    count: usize,
    rare_k: usize,
    rng: &mut RandomStream,
) -> Result<Vec<Example>> {
    check_len(n)?;
    if vocab.len() < rare_k {
        return Err(Error::Config(format!(
            "rare test needs V >= {rare_k}, vocabulary has {}",
            vocab.len()
        )));
    }
    let rare = vocab.rarest(rare_k)?;
    (0..count)
        .map(|_| Example::from_tokens((0..n).map(|_| rare[rng.below(rare.len())]).collect()))
        .collect()
}

/// Uniform random split into `(train, validation)` with
/// `|validation| = round(frac · N)`.
pub fn split_validation(
    examples: Vec<Example>,
    frac: f64,
    rng: &mut RandomStream,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!("validation fraction must be in (0, 1), got {frac}")));
    }
    let total = examples.len();
    let n_val = (frac * total as f64).round() as usize;
    if n_val == 0 || n_val == total {
        return Err(Error::Data(format!(
            "validation split of {frac} over {total} examples leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut order);
    let mut is_val = vec![false; total];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = examples
        .into_iter()
        .zip(is_val)
        .partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(e, _)| e).collect(),
        val.into_iter().map(|(e, _)| e).collect(),
    ))
}

/// Generate the dataset a spec describes. Corpus regimens need `corpus`.
pub fn generate(spec: &DatasetSpec, vocab: &Vocabulary, corpus: Option<&TokenStream>) -> Result<Vec<Example>> {
    let mut rng = spec.stream();
    let need = || {
        corpus.ok_or_else(|| Error::Config(format!("regimen {} needs a corpus", spec.regimen)))
    };
    let mut examples = match spec.regimen {
        Regimen::Uniform => {
            let count = match (spec.count, corpus) {
                (Some(c), _) => c,
                (None, Some(c)) => c.len() / spec.n,
                (None, None) => {
                    return Err(Error::Config("uniform regimen needs a count or a corpus to match".into()))
                }
            };
            gen_uniform(vocab.len(), spec.n, count, &mut rng)?
        }
        Regimen::Unigram => gen_unigram(need()?, spec.n, &mut rng)?,
        Regimen::KGram(k) => gen_kgram(need()?, k, spec.n, &mut rng)?,
        Regimen::Language => gen_language(need()?, spec.n)?,
        Regimen::RareTest => {
            let count = spec
                .count
                .ok_or_else(|| Error::Config("rare test set needs an explicit count".into()))?;
            gen_rare_test(vocab, spec.n, count, RARE_SET_SIZE.min(vocab.len()), &mut rng)?
        }
    };
    if let Some(count) = spec.count {
        if count > examples.len() {
            return Err(Error::Data(format!(
                "{} at n={} yields {} examples, fewer than the requested {count}",
                spec.regimen,
                spec.n,
                examples.len()
            )));
        }
        examples.truncate(count);
    }
    Ok(examples)
}

/// Write examples as JSON Lines; returns the SHA-256 of the bytes written.
pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<String> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut hasher = Sha256::new();
    for ex in examples {
        let mut line = serde_json::to_vec(ex).map_err(|e| Error::json(path, e))?;
        line.push(b'\n');
        hasher.update(&line);
        w.write_all(&line).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Sidecar written next to every dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub vocab_hash: String,
    /// File name → SHA-256 of its contents.
    pub files: Vec<(String, String)>,
    pub examples: usize,
    pub global_seed: u64,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Refuse data built against a different vocabulary or since modified.
    pub fn verify(&self, dir: &Path, vocab: &Vocabulary) -> Result<()> {
        let actual = vocab.content_hash();
        if actual != self.vocab_hash {
            return Err(Error::Integrity(format!(
                "{}: built against vocabulary {} but current vocabulary is {}",
                dir.display(),
                self.vocab_hash,
                actual
            )));
        }
        for (name, hash) in &self.files {
            let got = file_sha256(&dir.join(name))?;
            if &got != hash {
                return Err(Error::Integrity(format!("{}: content hash mismatch", dir.join(name).display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ids: Vec<TokenId>) -> TokenStream {
        TokenStream {
            ids,
            source: "test".into(),
        }
    }

    #[test]
    fn label_index_examples() {
        assert_eq!(label_index(10).unwrap(), 5);
        assert_eq!(label_index(2).unwrap(), 1);
        assert_eq!(label_index(301).unwrap(), 150);
        assert_eq!(label_index(1).unwrap(), 0);
        assert!(label_index(0).is_err());
    }

    #[test]
    fn regimen_names_round_trip() {
        for r in Regimen::full_grid_regimens().into_iter().chain([Regimen::RareTest]) {
            assert_eq!(r.to_string().parse::<Regimen>().unwrap(), r);
        }
        assert!("0gram".parse::<Regimen>().is_err());
        assert!("bigram".parse::<Regimen>().is_err());
        assert_eq!(serde_json::to_string(&Regimen::KGram(50)).unwrap(), "\"50gram\"");
    }

    #[test]
    fn uniform_is_deterministic_and_labelled() {
        let a = gen_uniform(50, 9, 100, &mut RandomStream::new(1, "u")).unwrap();
        let b = gen_uniform(50, 9, 100, &mut RandomStream::new(1, "u")).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.label == e.tokens[4] && e.tokens.iter().all(|&t| t < 50)));
    }

    #[test]
    fn unigram_small_corpus() {
        let c = stream(vec![0, 1, 2, 3]);
        let ex = gen_unigram(&c, 2, &mut RandomStream::new(3, "g")).unwrap();
        assert_eq!(ex.len(), 2);
        let mut all: Vec<TokenId> = ex.iter().flat_map(|e| e.tokens.clone()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(gen_unigram(&c, 5, &mut RandomStream::new(3, "g")).is_err());
    }

    #[test]
    fn kgram_small_corpus_keeps_pairs() {
        let c = stream(vec![1, 2, 3, 4, 5, 6]);
        let ex = gen_kgram(&c, 2, 6, &mut RandomStream::new(8, "k")).unwrap();
        assert_eq!(ex.len(), 1);
        let toks = &ex[0].tokens;
        for pair in toks.chunks(2) {
            assert_eq!(pair[1], pair[0] + 1);
            assert_eq!(pair[0] % 2, 1);
        }
    }

    #[test]
    fn kgram_with_single_chunk_keeps_order() {
        let c = stream((0..12).collect());
        let ex = gen_kgram(&c, 12, 4, &mut RandomStream::new(8, "k")).unwrap();
        let flat: Vec<TokenId> = ex.iter().flat_map(|e| e.tokens.clone()).collect();
        assert_eq!(flat, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn language_windows() {
        let c = stream((0..23).collect());
        let ex = gen_language(&c, 5).unwrap();
        assert_eq!(ex.len(), 4);
        assert_eq!(ex[0].tokens, vec![0, 1, 2, 3, 4]);
        assert_eq!(ex[0].label, 2);
        let flat: Vec<TokenId> = ex.iter().flat_map(|e| e.tokens.clone()).collect();
        assert_eq!(flat, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn rare_test_needs_enough_types() {
        let toks: Vec<String> = (0..50).map(|i| format!("t{i}")).collect();
        let v = Vocabulary::build(&toks, 100).unwrap();
        assert!(gen_rare_test(&v, 10, 5, 100, &mut RandomStream::new(0, "r")).is_err());
        let ex = gen_rare_test(&v, 10, 5, 20, &mut RandomStream::new(0, "r")).unwrap();
        let rare = v.rarest(20).unwrap();
        assert!(ex.iter().flat_map(|e| &e.tokens).all(|t| rare.contains(t)));
    }

    #[test]
    fn split_examples() {
        let ex = gen_uniform(100, 4, 1000, &mut RandomStream::new(2, "u")).unwrap();
        let (tr, va) = split_validation(ex.clone(), 0.1, &mut RandomStream::new(2, "split")).unwrap();
        assert_eq!((tr.len(), va.len()), (900, 100));
        let (tr2, va2) = split_validation(ex.clone(), 0.1, &mut RandomStream::new(2, "split")).unwrap();
        assert_eq!((&tr, &va), (&tr2, &va2));
        let mut union: Vec<Example> = tr.into_iter().chain(va.iter().cloned()).collect();
        let mut orig = ex;
        union.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        orig.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        assert_eq!(union, orig);

        let tiny = gen_uniform(10, 4, 3, &mut RandomStream::new(2, "u")).unwrap();
        assert!(split_validation(tiny, 0.1, &mut RandomStream::new(0, "s")).is_err());
        assert!(split_validation(vec![], 0.0, &mut RandomStream::new(0, "s")).is_err());
    }

    #[test]
    fn generate_respects_count_and_errors() {
        let toks: Vec<String> = (0..200).map(|i| format!("t{}", i % 37)).collect();
        let v = Vocabulary::build(&toks, 100).unwrap();
        let c = stream(v.encode(&toks, Default::default()).unwrap());
        let spec = DatasetSpec {
            regimen: Regimen::Language,
            n: 10,
            count: Some(5),
            seed: 1,
            source: "t".into(),
        };
        assert_eq!(generate(&spec, &v, Some(&c)).unwrap().len(), 5);
        assert!(generate(&spec, &v, None).is_err());
        let too_many = DatasetSpec {
            count: Some(100),
            ..spec.clone()
        };
        assert!(generate(&too_many, &v, Some(&c)).is_err());
        let uni = DatasetSpec {
            regimen: Regimen::Uniform,
            count: None,
            ..spec
        };
        assert_eq!(generate(&uni, &v, Some(&c)).unwrap().len(), 20);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ex = gen_uniform(30, 5, 7, &mut RandomStream::new(0, "u")).unwrap();
        let hash = write_jsonl(&path, &ex).unwrap();
        assert_eq!(hash, file_sha256(&path).unwrap());
        assert_eq!(read_jsonl(&path).unwrap(), ex);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"tokens\":["));
    }
}
