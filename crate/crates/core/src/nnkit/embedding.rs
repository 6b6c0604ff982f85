use rand::Rng;

use super::{glorot_uniform, LayerSpec, Parameterized, Stamp, StampToken, Tensor};
use crate::error::{shape_err, Error, Result};

/// Lookup table `(vocab, dim)`.
///
/// Not a [`super::Layer`]: its input is integer ids and it has no input gradient.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub(crate) table: Tensor,
    stamp: Stamp,
}

pub struct EmbeddingCache {
    ids: Vec<usize>,
    token: StampToken,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            table: glorot_uniform(rng, &[vocab, dim], vocab, dim),
            stamp: Stamp::new(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        let d = self.dim();
        &self.table.data()[id * d..(id + 1) * d]
    }

    /// Rows for `ids`, shaped `(ids.len(), dim)`.
    pub fn forward(&self, ids: &[usize]) -> Result<(Tensor, EmbeddingCache)> {
        let d = self.dim();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= self.vocab() {
                return Err(Error::LabelOutOfRange {
                    label: id,
                    vocab: self.vocab(),
                });
            }
            out.extend_from_slice(self.row(id));
        }
        Ok((
            Tensor::new(vec![ids.len(), d], out)?,
            EmbeddingCache {
                ids: ids.to_vec(),
                token: self.stamp.token(),
            },
        ))
    }

    /// Gradient of the table given the gradient of the looked-up rows.
    pub fn backward(&self, grad_out: &Tensor, cache: &EmbeddingCache) -> Result<Tensor> {
        self.stamp.check(cache.token)?;
        let d = self.dim();
        if grad_out.len() != cache.ids.len() * d {
            return Err(shape_err(format!("embedding gradient {:?} for {} ids", grad_out.shape(), cache.ids.len())));
        }
        let mut g = Tensor::zeros(self.table.shape());
        for (&id, row) in cache.ids.iter().zip(grad_out.data().chunks_exact(d)) {
            for (a, v) in g.data_mut()[id * d..(id + 1) * d].iter_mut().zip(row) {
                *a += v;
            }
        }
        Ok(g)
    }
}

impl Parameterized for Embedding {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp.bump();
        vec![&mut self.table]
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["table"]
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Embedding {
            vocab: self.vocab(),
            dim: self.dim(),
        }
    }
}
