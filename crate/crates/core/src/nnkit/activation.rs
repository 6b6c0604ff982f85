use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, LayerSpec, Mode, Parameterized, Tensor};
use crate::error::{shape_err, Result};

fn check_len(grad: &Tensor, n: usize) -> Result<()> {
    if grad.len() != n {
        return Err(shape_err(format!("activation gradient {:?} for {n} values", grad.shape())));
    }
    Ok(())
}

macro_rules! stateless {
    ($t:ty) => {
        impl Parameterized for $t {
            fn params(&self) -> Vec<&Tensor> {
                Vec::new()
            }

            fn params_mut(&mut self) -> Vec<&mut Tensor> {
                Vec::new()
            }

            fn param_names(&self) -> Vec<&'static str> {
                Vec::new()
            }

            fn spec(&self) -> LayerSpec {
                self.layer_spec()
            }
        }
    };
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
/// training, inference is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        LayerSpec::Dropout { rate }.validate()?;
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn layer_spec(&self) -> LayerSpec {
        LayerSpec::Dropout { rate: self.rate }
    }
}

stateless!(Dropout);

impl Layer for Dropout {
    /// Per-element multiplier, `None` when the layer acted as the identity.
    type Cache = Option<Vec<f64>>;

    fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Self::Cache)> {
        match mode {
            Mode::Train { seed } if self.rate > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keep = 1.0 / (1.0 - self.rate);
                let mask: Vec<f64> = (0..input.len())
                    .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
                    .collect();
                let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
                Ok((Tensor::new(input.shape().to_vec(), out)?, Some(mask)))
            }
            _ => Ok((input.clone(), None)),
        }
    }

    fn backward(&self, grad_out: &Tensor, cache: &Self::Cache) -> Result<(Tensor, Vec<Tensor>)> {
        match cache {
            None => Ok((grad_out.clone(), Vec::new())),
            Some(mask) => {
                check_len(grad_out, mask.len())?;
                let g = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Ok((Tensor::new(grad_out.shape().to_vec(), g)?, Vec::new()))
            }
        }
    }
}

/// GELU, tanh approximation.
#[derive(Clone, Debug, Default)]
pub struct Gelu;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl Gelu {
    pub fn apply(x: f64) -> f64 {
        0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
    }

    pub fn derivative(x: f64) -> f64 {
        let u = GELU_C * (x + 0.044715 * x * x * x);
        let t = u.tanh();
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
    }

    fn layer_spec(&self) -> LayerSpec {
        LayerSpec::Gelu
    }
}

stateless!(Gelu);

impl Layer for Gelu {
    type Cache = Tensor;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, Tensor)> {
        let out = input.data().iter().map(|&x| Self::apply(x)).collect();
        Ok((Tensor::new(input.shape().to_vec(), out)?, input.clone()))
    }

    fn backward(&self, grad_out: &Tensor, input: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        check_len(grad_out, input.len())?;
        let g = grad_out.data().iter().zip(input.data()).map(|(g, &x)| g * Self::derivative(x)).collect();
        Ok((Tensor::new(input.shape().to_vec(), g)?, Vec::new()))
    }
}

#[derive(Clone, Debug)]
pub struct LeakyRelu {
    slope: f64,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope }
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    fn layer_spec(&self) -> LayerSpec {
        LayerSpec::LeakyRelu { slope: self.slope }
    }
}

impl Default for LeakyRelu {
    fn default() -> Self {
        Self::new(0.01)
    }
}

stateless!(LeakyRelu);

impl Layer for LeakyRelu {
    type Cache = Tensor;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, Tensor)> {
        let out = input.data().iter().map(|&x| if x > 0.0 { x } else { self.slope * x }).collect();
        Ok((Tensor::new(input.shape().to_vec(), out)?, input.clone()))
    }

    fn backward(&self, grad_out: &Tensor, input: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        check_len(grad_out, input.len())?;
        let g = grad_out
            .data()
            .iter()
            .zip(input.data())
            .map(|(g, &x)| if x > 0.0 { *g } else { self.slope * g })
            .collect();
        Ok((Tensor::new(input.shape().to_vec(), g)?, Vec::new()))
    }
}
