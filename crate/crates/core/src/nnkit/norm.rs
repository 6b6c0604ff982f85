use super::{Layer, LayerSpec, Mode, Parameterized, Stamp, StampToken, Tensor};
use crate::error::{shape_err, Result};

/// Normalizes each innermost vector to zero mean and unit variance, then applies `gain * x + shift`.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub(crate) gain: Tensor,
    pub(crate) shift: Tensor,
    eps: f64,
    stamp: Stamp,
}

pub struct LayerNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    token: StampToken,
}

pub const LAYER_NORM_EPS: f64 = 1e-8;

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::filled(&[dim], 1.0),
            shift: Tensor::zeros(&[dim]),
            eps: LAYER_NORM_EPS,
            stamp: Stamp::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    /// Normalized values before the affine parameters are applied.
    pub fn normalize(&self, input: &Tensor) -> Result<Tensor> {
        let (_, cache) = self.forward(input, Mode::Infer)?;
        Tensor::new(cache.shape, cache.normalized)
    }
}

impl Parameterized for LayerNorm {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.gain, &self.shift]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp.bump();
        vec![&mut self.gain, &mut self.shift]
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["gain", "shift"]
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::LayerNorm { dim: self.dim() }
    }
}

impl Layer for LayerNorm {
    type Cache = LayerNormCache;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, LayerNormCache)> {
        let d = self.dim();
        if input.last_dim() != d {
            return Err(shape_err(format!("layer norm over {d} got {:?}", input.shape())));
        }
        let rows = input.rows();
        let mut normalized = Vec::with_capacity(input.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(input.len());
        for row in input.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                normalized.push(xh);
                out.push(self.gain.data()[j] * xh + self.shift.data()[j]);
            }
        }
        Ok((
            Tensor::new(input.shape().to_vec(), out)?,
            LayerNormCache {
                normalized,
                inv_std,
                shape: input.shape().to_vec(),
                token: self.stamp.token(),
            },
        ))
    }

    fn backward(&self, grad_out: &Tensor, cache: &LayerNormCache) -> Result<(Tensor, Vec<Tensor>)> {
        self.stamp.check(cache.token)?;
        let d = self.dim();
        if grad_out.len() != cache.normalized.len() {
            return Err(shape_err("layer norm gradient does not match cached input"));
        }
        let mut gin = Vec::with_capacity(grad_out.len());
        let mut ggain = vec![0.0; d];
        let mut gshift = vec![0.0; d];
        let mut gxh = vec![0.0; d];
        for ((g, xh), &inv) in grad_out
            .data()
            .chunks_exact(d)
            .zip(cache.normalized.chunks_exact(d))
            .zip(&cache.inv_std)
        {
            let mut sum = 0.0;
            let mut sum_x = 0.0;
            for j in 0..d {
                ggain[j] += g[j] * xh[j];
                gshift[j] += g[j];
                gxh[j] = g[j] * self.gain.data()[j];
                sum += gxh[j];
                sum_x += gxh[j] * xh[j];
            }
            let n = d as f64;
            for j in 0..d {
                gin.push(inv / n * (n * gxh[j] - sum - xh[j] * sum_x));
            }
        }
        Ok((
            Tensor::new(cache.shape.clone(), gin)?,
            vec![Tensor::new(vec![d], ggain)?, Tensor::new(vec![d], gshift)?],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{check_layer, probe_values};
    use proptest::prelude::*;

    #[test]
    fn finite_differences() {
        let mut ln = LayerNorm::new(5);
        for (i, v) in ln.params_mut()[0].data_mut().iter_mut().enumerate() {
            *v = 0.5 + 0.2 * i as f64;
        }
        ln.params_mut()[1].data_mut()[2] = 0.3;
        let x = Tensor::new(vec![3, 5], probe_values(15, 3)).unwrap();
        assert!(check_layer(&mut ln, &x, Mode::Infer, 1e-5) < 1e-4);
    }

    proptest! {
        #[test]
        fn normalized_moments(xs in prop::collection::vec(-50f64..50.0, 8)) {
            let (_, s) = crate::series::mean_std(&xs);
            prop_assume!(s > 0.1);
            let ln = LayerNorm::new(8);
            let z = ln.normalize(&Tensor::new(vec![1, 8], xs).unwrap()).unwrap();
            let (zm, zs) = crate::series::mean_std(z.data());
            prop_assert!(zm.abs() < 1e-6);
            prop_assert!((zs * zs - 1.0).abs() < 1e-6);
        }
    }
}
