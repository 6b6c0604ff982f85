use rand::Rng;

use super::{glorot_uniform, Layer, LayerSpec, Mode, Parameterized, Stamp, StampToken, Tensor};
use crate::error::{shape_err, Result};

/// Depthwise 1D convolution over time-major input `(T, B, C)` with zero padding.
///
/// Kernel row `k` holds the tap for lag `τ = k + τ_min`:
///
/// ```text
/// y[t, b, c] = Σ_k K[k, c] · x[t - τ, b, c]
/// ```
///
/// Causal kernels use `τ ∈ [0, w-1]`; noncausal kernels use
/// `τ ∈ [-floor((w-1)/2), ceil((w-1)/2)]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub(crate) kernel: Tensor,
    causal: bool,
    stamp: Stamp,
}

pub struct Conv1dCache {
    input: Tensor,
    token: StampToken,
}

impl Conv1d {
    pub fn new(width: usize, channels: usize, causal: bool, rng: &mut impl Rng) -> Self {
        Self::from_kernel(glorot_uniform(rng, &[width, channels], width, width), causal).unwrap()
    }

    pub fn from_kernel(kernel: Tensor, causal: bool) -> Result<Self> {
        if kernel.shape().len() != 2 || kernel.shape()[0] == 0 {
            return Err(shape_err(format!("conv kernel must be (width >= 1, channels), got {:?}", kernel.shape())));
        }
        Ok(Self {
            kernel,
            causal,
            stamp: Stamp::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    /// Smallest lag covered by the kernel.
    pub fn tau_min(&self) -> isize {
        if self.causal {
            0
        } else {
            -(((self.width() - 1) / 2) as isize)
        }
    }

    fn taps(&self, steps: usize) -> impl Iterator<Item = (usize, isize)> + '_ {
        let t0 = self.tau_min();
        (0..self.width()).map(move |k| (k, k as isize + t0)).filter(move |&(_, tau)| tau.unsigned_abs() < steps)
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.kernel]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp.bump();
        vec![&mut self.kernel]
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["kernel"]
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv1d {
            kernel_width: self.width(),
            channels: self.channels(),
            causal: self.causal,
        }
    }
}

impl Layer for Conv1d {
    type Cache = Conv1dCache;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, Conv1dCache)> {
        let c = self.channels();
        let shape = input.shape();
        if shape.len() != 3 || shape[2] != c {
            return Err(shape_err(format!("conv expects (T, B, {c}), got {shape:?}")));
        }
        let (steps, batch) = (shape[0], shape[1]);
        let stride = batch * c;
        let x = input.data();
        let kern = self.kernel.data();
        let mut out = vec![0.0; x.len()];
        for (k, tau) in self.taps(steps) {
            let krow = &kern[k * c..(k + 1) * c];
            // y[t] += K[k] x[t - tau] for t - tau inside [0, T)
            let lo = tau.max(0) as usize;
            let hi = (steps as isize + tau.min(0)) as usize;
            for t in lo..hi {
                let src = (t as isize - tau) as usize;
                let (yo, xo) = (t * stride, src * stride);
                for b in 0..batch {
                    for j in 0..c {
                        out[yo + b * c + j] += krow[j] * x[xo + b * c + j];
                    }
                }
            }
        }
        Ok((
            Tensor::new(shape.to_vec(), out)?,
            Conv1dCache {
                input: input.clone(),
                token: self.stamp.token(),
            },
        ))
    }

    fn backward(&self, grad_out: &Tensor, cache: &Conv1dCache) -> Result<(Tensor, Vec<Tensor>)> {
        self.stamp.check(cache.token)?;
        let shape = cache.input.shape();
        if grad_out.shape() != shape {
            return Err(shape_err(format!("conv gradient {:?} for input {shape:?}", grad_out.shape())));
        }
        let c = self.channels();
        let (steps, batch) = (shape[0], shape[1]);
        let stride = batch * c;
        let (x, g) = (cache.input.data(), grad_out.data());
        let kern = self.kernel.data();
        let mut gin = vec![0.0; x.len()];
        let mut gk = vec![0.0; kern.len()];
        for (k, tau) in self.taps(steps) {
            let lo = tau.max(0) as usize;
            let hi = (steps as isize + tau.min(0)) as usize;
            for t in lo..hi {
                let src = (t as isize - tau) as usize;
                let (yo, xo) = (t * stride, src * stride);
                for b in 0..batch {
                    for j in 0..c {
                        gin[xo + b * c + j] += kern[k * c + j] * g[yo + b * c + j];
                        gk[k * c + j] += x[xo + b * c + j] * g[yo + b * c + j];
                    }
                }
            }
        }
        Ok((Tensor::new(shape.to_vec(), gin)?, vec![Tensor::new(self.kernel.shape().to_vec(), gk)?]))
    }
}
