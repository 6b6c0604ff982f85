//! Sample-level tokenization of continuous multichannel time series.
//!
//! The crate bundles three tokenizer families (μ-law and standard-quantile
//! codecs, and a learnable GRU/convolutional-dictionary autoencoder), a small
//! decoder-only transformer trained on the resulting token streams, and the
//! metrics used to compare them: reconstruction PVE, Welch spectra, TDE
//! fingerprinting, loss-convergence rates, Welch's t-test and a linear
//! decoding probe. Synthetic oscillatory recordings stand in for real data.

pub mod error;
pub mod eval;
pub mod fixedtok;
pub mod gpt;
pub mod io;
pub mod learntok;
pub mod nnkit;
pub mod parallel;
pub mod series;
pub mod synth;
pub mod tokens;

#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
pub use series::{clip, standardize, ScaleParams, SeriesMeta, TimeSeries};
pub use tokens::{TokenSequence, Tokenizer};
