//! A laboratory for the middle-token memorization task on LSTMs.
//!
//! An LSTM with a frozen random embedding (tied to its output projection) is
//! trained to recall the middle token of fixed-length sequences. Training data
//! comes from regimens with increasing linguistic structure (uniform, unigram,
//! k-gram chunks, running text) and every model is scored on sequences drawn
//! only from the rarest vocabulary types. The [`probe`] module regresses the
//! timestep onto recorded hidden and cell states to find counting neurons.
//!
//! Module map:
//!
//! - [`numkit`]: matrices, keyed random streams, softmax/cross-entropy
//! - [`corpus`]: tokenization, vocabulary, synthetic Zipf/Markov corpora
//! - [`datagen`]: regimens, rare-word test sets, validation splits, JSONL files
//! - [`model`]: LSTM forward pass and backpropagation through time
//! - [`optim`]: Adam and the plateau learning-rate rule
//! - [`trainer`]: epoch loop, multi-seed selection, sweeps, checkpoints
//! - [`probe`]: timestep regression and counting-neuron traces
//! - [`experiment`]: file-based pipeline behind the `memlab` binary

pub mod corpus;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numkit;
pub mod optim;
pub mod probe;
pub mod trainer;

pub use error::{Error, Result};
