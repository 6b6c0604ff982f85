use rand::Rng;

use super::{gemm, glorot_uniform, Layer, LayerSpec, Mode, Parameterized, Stamp, StampToken, Tensor};
use crate::error::{shape_err, Result};

/// Affine map over the innermost axis: `y = x W + b`, `W` stored `(in, out)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
    stamp: Stamp,
}

pub struct DenseCache {
    input: Tensor,
    token: StampToken,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::from_params(glorot_uniform(rng, &[input, output], input, output), Tensor::zeros(&[output])).unwrap()
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self::from_params(Tensor::zeros(&[input, output]), Tensor::zeros(&[output])).unwrap()
    }

    pub fn from_params(w: Tensor, b: Tensor) -> Result<Self> {
        if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
            return Err(shape_err(format!("dense weights {:?} with bias {:?}", w.shape(), b.shape())));
        }
        Ok(Self {
            w,
            b,
            stamp: Stamp::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> &Tensor {
        &self.b
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp.bump();
        vec![&mut self.w, &mut self.b]
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["weight", "bias"]
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            input: self.input_dim(),
            output: self.output_dim(),
        }
    }
}

impl Layer for Dense {
    type Cache = DenseCache;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, DenseCache)> {
        let (din, dout) = (self.input_dim(), self.output_dim());
        if input.last_dim() != din {
            return Err(shape_err(format!("dense expects last dim {din}, got {:?}", input.shape())));
        }
        let rows = input.rows();
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(self.b.data());
        }
        gemm(rows, din, dout, 1.0, input.data(), false, self.w.data(), false, 1.0, &mut out);
        let out = Tensor::new(input.with_last_dim(dout), out)?;
        Ok((
            out,
            DenseCache {
                input: input.clone(),
                token: self.stamp.token(),
            },
        ))
    }

    fn backward(&self, grad_out: &Tensor, cache: &DenseCache) -> Result<(Tensor, Vec<Tensor>)> {
        self.stamp.check(cache.token)?;
        let (din, dout) = (self.input_dim(), self.output_dim());
        let rows = cache.input.rows();
        if grad_out.len() != rows * dout {
            return Err(shape_err(format!("dense gradient {:?} for {rows} rows", grad_out.shape())));
        }
        let mut gin = vec![0.0; rows * din];
        gemm(rows, dout, din, 1.0, grad_out.data(), false, self.w.data(), true, 0.0, &mut gin);
        let mut gw = vec![0.0; din * dout];
        gemm(din, rows, dout, 1.0, cache.input.data(), true, grad_out.data(), false, 0.0, &mut gw);
        let mut gb = vec![0.0; dout];
        for row in grad_out.data().chunks_exact(dout) {
            for (a, g) in gb.iter_mut().zip(row) {
                *a += g;
            }
        }
        Ok((
            Tensor::new(cache.input.shape().to_vec(), gin)?,
            vec![Tensor::new(vec![din, dout], gw)?, Tensor::new(vec![dout], gb)?],
        ))
    }
}
