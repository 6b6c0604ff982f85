//! A small neural-network kit with hand-derived backward passes.
//!
//! Every layer exposes `forward`, which returns its output plus a cache of
//! the activations it needs, and `backward`, which consumes that cache and
//! returns the gradient with respect to the input together with one gradient
//! tensor per parameter (in the order of [`Parameterized::params`]).
//!
//! Caches are stamped with the identity and generation of the layer that
//! produced them. Mutable parameter access bumps the generation, so a cache
//! computed before an optimizer step is rejected as [`Error::StaleCache`].

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod activation;
mod adam;
mod attention;
pub mod checkpoint;
mod conv;
mod dense;
mod embedding;
mod gru;
mod init;
mod loss;
mod norm;
mod tensor;

pub use activation::{Dropout, Gelu, LeakyRelu};
pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use attention::MultiHeadSelfAttention;
pub use checkpoint::{Checkpoint, CheckpointWriter};
pub use conv::Conv1d;
pub use dense::Dense;
pub use embedding::{Embedding, EmbeddingCache};
pub use gru::Gru;
pub use init::{glorot_uniform, orthogonal};
pub use loss::{cross_entropy, log_softmax_rows, mse, softmax_rows};
pub use norm::LayerNorm;
pub use tensor::Tensor;

pub(crate) use tensor::gemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Training mode; dropout masks are drawn from `seed`.
    Train { seed: u64 },
}

static NEXT_LAYER_ID: AtomicU64 = AtomicU64::new(1);

/// Identity and parameter generation of a layer instance.
#[derive(Debug)]
pub struct Stamp {
    id: u64,
    generation: u64,
}

/// The stamp value captured into a cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StampToken {
    id: u64,
    generation: u64,
}

impl Stamp {
    pub fn new() -> Self {
        Self {
            id: NEXT_LAYER_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }

    pub fn bump(&mut self) {
        self.generation += 1;
    }

    pub fn token(&self) -> StampToken {
        StampToken {
            id: self.id,
            generation: self.generation,
        }
    }

    pub fn check(&self, token: StampToken) -> Result<()> {
        if token != self.token() {
            return Err(Error::StaleCache);
        }
        Ok(())
    }
}

impl Default for Stamp {
    fn default() -> Self {
        Self::new()
    }
}

// a clone is a distinct layer whose caches must not be mixed with the original's
impl Clone for Stamp {
    fn clone(&self) -> Self {
        Self::new()
    }
}

/// Layer descriptors as recorded in checkpoint manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Gru { input: usize, hidden: usize },
    LayerNorm { dim: usize },
    Conv1d { kernel_width: usize, channels: usize, causal: bool },
    Embedding { vocab: usize, dim: usize },
    MultiHeadSelfAttention { dim: usize, heads: usize, causal: bool },
    Dropout { rate: f64 },
    Gelu,
    LeakyRelu { slope: f64 },
    /// Per-token mixing weights and biases of a convolutional dictionary decoder.
    TokenMix { vocab: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            LayerSpec::MultiHeadSelfAttention { dim, heads, .. } if heads == 0 || dim % heads != 0 => {
                bad(format!("{heads} heads do not divide dimension {dim}"))
            }
            LayerSpec::Conv1d { kernel_width: 0, .. } => bad("kernel width must be at least 1".into()),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => bad(format!("dropout rate {rate} outside [0, 1)")),
            _ => Ok(()),
        }
    }
}

/// Anything that owns trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;

    /// Mutable access to the parameters; invalidates outstanding caches.
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_names(&self) -> Vec<&'static str>;

    fn spec(&self) -> LayerSpec;

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

pub trait Layer: Parameterized {
    type Cache;

    fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Self::Cache)>;

    /// Gradient with respect to the input, and one gradient per parameter.
    fn backward(&self, grad_out: &Tensor, cache: &Self::Cache) -> Result<(Tensor, Vec<Tensor>)>;
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
