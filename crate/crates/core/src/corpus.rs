//! Whitespace-tokenized corpora, the frequency-ranked vocabulary, rare-type
//! selection, and a synthetic Zipf/Markov corpus for when no real text is
//! available.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::RandomStream;

pub type TokenId = u32;

pub const EOS_TOKEN: &str = "<eos>";
/// Reserved type that absorbs tokens cut by `max_types`.
pub const UNKNOWN_TOKEN: &str = "<oov>";

/// Split text on whitespace runs. With `eos`, every non-blank line is
/// followed by [`EOS_TOKEN`].
pub fn tokenize(text: &str, eos: bool) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let before = out.len();
        out.extend(line.split_whitespace().map(str::to_owned));
        if eos && out.len() > before {
            out.push(EOS_TOKEN.to_owned());
        }
    }
    out
}

/// Read a corpus file and tokenize it. Non-UTF-8 input is rejected.
pub fn read_tokens(path: &Path, eos: bool) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Data(format!("{}: invalid UTF-8: {e}", path.display())))?;
    Ok(tokenize(&text, eos))
}

/// How [`Vocabulary::encode`] treats tokens outside the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OovPolicy {
    #[default]
    Error,
    MapToUnknown,
}

/// Token/id bijection with corpus frequencies. Ids are dense and ordered by
/// descending frequency, ties lexicographic.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    freqs: Vec<u64>,
    unknown: Option<TokenId>,
}

impl Vocabulary {
    pub fn build(tokens: &[String], max_types: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty token sequence".into()));
        }
        if max_types == 0 {
            return Err(Error::Config("max_types must be at least 1".into()));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let dropped: u64 = ranked.iter().skip(max_types).map(|(_, c)| c).sum();
        ranked.truncate(max_types);

        let mut vocab_tokens: Vec<String> = ranked.iter().map(|(t, _)| (*t).to_owned()).collect();
        let mut freqs: Vec<u64> = ranked.iter().map(|(_, c)| *c).collect();
        let unknown = if dropped > 0 {
            vocab_tokens.push(UNKNOWN_TOKEN.to_owned());
            freqs.push(dropped);
            Some((vocab_tokens.len() - 1) as TokenId)
        } else {
            None
        };
        Self::from_parts(vocab_tokens, freqs, unknown)
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>, unknown: Option<TokenId>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            ids,
            freqs,
            unknown,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn freq(&self, id: TokenId) -> u64 {
        self.freqs[id as usize]
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }

    pub fn unknown_id(&self) -> Option<TokenId> {
        self.unknown
    }

    pub fn total_count(&self) -> u64 {
        self.freqs.iter().sum()
    }

    pub fn encode(&self, tokens: &[String], policy: OovPolicy) -> Result<Vec<TokenId>> {
        tokens
            .iter()
            .map(|t| match (self.id_of(t), policy) {
                (Some(id), _) => Ok(id),
                (None, OovPolicy::MapToUnknown) => self.unknown.ok_or_else(|| {
                    Error::Data(format!("token {t:?} not in vocabulary and no unknown type reserved"))
                }),
                (None, OovPolicy::Error) => Err(Error::Data(format!("token {t:?} not in vocabulary"))),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token_of(id)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Data(format!("id {id} out of range for V={}", self.len())))
            })
            .collect()
    }

    /// The `k` lowest-frequency types, ties broken lexicographically, in that order.
    pub fn rarest(&self, k: usize) -> Result<Vec<TokenId>> {
        if k > self.len() {
            return Err(Error::Config(format!("asked for {k} rarest types but V={}", self.len())));
        }
        let mut ids: Vec<TokenId> = (0..self.len() as TokenId).collect();
        ids.sort_by(|&a, &b| {
            self.freqs[a as usize]
                .cmp(&self.freqs[b as usize])
                .then_with(|| self.tokens[a as usize].cmp(&self.tokens[b as usize]))
        });
        ids.truncate(k);
        Ok(ids)
    }

    /// `token<TAB>frequency` per line, in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, f) in self.tokens.iter().zip(&self.freqs) {
            let _ = writeln!(out, "{t}\t{f}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        let mut unknown = None;
        for (lineno, line) in text.lines().enumerate() {
            let (tok, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("vocabulary line {}: missing tab", lineno + 1)))?;
            let freq: u64 = freq
                .parse()
                .map_err(|e| Error::Data(format!("vocabulary line {}: {e}", lineno + 1)))?;
            if tok == UNKNOWN_TOKEN {
                unknown = Some(tokens.len() as TokenId);
            }
            tokens.push(tok.to_owned());
            freqs.push(freq);
        }
        if tokens.is_empty() {
            return Err(Error::Data("empty vocabulary file".into()));
        }
        Self::from_parts(tokens, freqs, unknown)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    /// SHA-256 of the exported TSV form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Free-function form of [`Vocabulary::build`].
pub fn build_vocab(tokens: &[String], max_types: usize) -> Result<Vocabulary> {
    Vocabulary::build(tokens, max_types)
}

/// Free-function form of [`Vocabulary::rarest`].
pub fn rarest_types(vocab: &Vocabulary, k: usize) -> Result<Vec<TokenId>> {
    vocab.rarest(k)
}

/// An encoded corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStream {
    pub ids: Vec<TokenId>,
    pub source: String,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Parameters of the synthetic Zipf/Markov corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_tokens: usize,
    pub vocab_size: usize,
    /// Zipf exponent; 0 gives a uniform unigram distribution.
    pub zipf_s: f64,
    /// Context length of the transition table; 0 disables Markov structure.
    pub markov_order: usize,
    /// Size of the preferred successor set per context.
    pub successors: usize,
    /// Probability of drawing the next token from the successor set.
    pub stickiness: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tokens: 1_000_000,
            vocab_size: 10_000,
            zipf_s: 1.0,
            markov_order: 1,
            successors: 8,
            stickiness: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn describe(&self) -> String {
        format!(
            "synth(n_tokens={}, V={}, zipf_s={}, markov_order={}, successors={}, stickiness={})",
            self.n_tokens, self.vocab_size, self.zipf_s, self.markov_order, self.successors, self.stickiness
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Zipf-distributed token ranks with optional order-`m` transition structure.
///
/// Ids are Zipf ranks (0 is the most probable type). When `markov_order > 0`,
/// each context of the previous `m` ids owns a fixed set of `successors`
/// preferred next tokens, themselves Zipf draws keyed by a hash of the context,
/// so the transition table is random but never materialized. With probability
/// `stickiness` the next token comes from that set, otherwise from the unigram
/// distribution.
pub fn synth_corpus(rng: &mut RandomStream, cfg: &SynthConfig) -> Result<TokenStream> {
    if cfg.vocab_size < 2 {
        return Err(Error::Config("synthetic corpus needs V >= 2".into()));
    }
    if cfg.n_tokens == 0 {
        return Err(Error::Config("synthetic corpus needs n_tokens >= 1".into()));
    }
    if !(cfg.zipf_s >= 0.0 && cfg.zipf_s.is_finite()) {
        return Err(Error::Config(format!("zipf_s must be >= 0, got {}", cfg.zipf_s)));
    }
    if !(0.0..=1.0).contains(&cfg.stickiness) {
        return Err(Error::Config(format!("stickiness must be in [0, 1], got {}", cfg.stickiness)));
    }
    if cfg.markov_order > 0 && cfg.successors == 0 {
        return Err(Error::Config("successors must be >= 1 with markov_order > 0".into()));
    }

    let weights: Vec<f64> = (1..=cfg.vocab_size).map(|r| (r as f64).powf(-cfg.zipf_s)).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    let unigram = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let inverse_cdf = |u: f64| -> TokenId { cdf.partition_point(|&c| c <= u).min(cfg.vocab_size - 1) as TokenId };

    let table_key = splitmix64(rng.seed() ^ 0x5A17_C0DE);
    let mut ids: Vec<TokenId> = Vec::with_capacity(cfg.n_tokens);
    for t in 0..cfg.n_tokens {
        let sticky = cfg.markov_order > 0 && t >= cfg.markov_order && rng.next_f64() < cfg.stickiness;
        let next = if sticky {
            let mut h = table_key;
            for &prev in &ids[t - cfg.markov_order..t] {
                h = splitmix64(h ^ prev as u64);
            }
            let slot = rng.below(cfg.successors) as u64;
            let bits = splitmix64(h ^ slot.wrapping_mul(0xD6E8_FEB8_6659_FD93));
            inverse_cdf((bits >> 11) as f64 / (1u64 << 53) as f64)
        } else {
            unigram.sample(rng.rng()) as TokenId
        };
        ids.push(next);
    }
    Ok(TokenStream {
        ids,
        source: cfg.describe(),
    })
}

/// A vocabulary plus the corpus encoded against it.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub stream: TokenStream,
}

impl Corpus {
    pub fn from_tokens(tokens: &[String], max_types: usize, source: impl Into<String>) -> Result<Self> {
        let vocab = Vocabulary::build(tokens, max_types)?;
        let policy = if vocab.unknown_id().is_some() {
            OovPolicy::MapToUnknown
        } else {
            OovPolicy::Error
        };
        let ids = vocab.encode(tokens, policy)?;
        Ok(Self {
            vocab,
            stream: TokenStream {
                ids,
                source: source.into(),
            },
        })
    }

    pub fn from_file(path: &Path, max_types: usize, eos: bool) -> Result<Self> {
        let tokens = read_tokens(path, eos)?;
        Self::from_tokens(&tokens, max_types, path.display().to_string())
    }

    /// Synthesize a corpus and build its vocabulary. Types named `w<rank>`.
    pub fn synthetic(seed: u64, cfg: &SynthConfig) -> Result<Self> {
        let mut rng = RandomStream::new(seed, "corpus/synth");
        let raw = synth_corpus(&mut rng, cfg)?;
        let tokens: Vec<String> = raw.ids.iter().map(|r| format!("w{r}")).collect();
        Self::from_tokens(&tokens, cfg.vocab_size, raw.source)
    }
}
