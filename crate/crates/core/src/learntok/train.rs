use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LearnableTokenizer;
use crate::error::{Error, Result};
use crate::nnkit::{adam_step, clip_grad_norm, mse, AdamConfig, AdamState, Tensor};
use crate::series::TimeSeries;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnableConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub d_token: usize,
    pub causal: bool,
    pub batch_size: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Independent runs; the one with the lowest final loss is kept.
    pub restarts: usize,
    /// Optional cap on the global gradient norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for LearnableConfig {
    fn default() -> Self {
        Self {
            vocab_size: 128,
            hidden: 128,
            d_token: 10,
            causal: false,
            batch_size: 32,
            seq_len: 200,
            epochs: 40,
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            restarts: 1,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl LearnableConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidVocab(self.vocab_size));
        }
        if self.hidden == 0 || self.d_token == 0 || self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Config("hidden, d_token, batch_size and seq_len must be positive".into()));
        }
        if self.epochs == 0 || self.restarts == 0 {
            return Err(Error::Config("epochs and restarts must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Linear decay of `κ` from 1 at epoch 0 to 0 at epoch `epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub epochs: usize,
}

impl AnnealSchedule {
    pub fn kappa(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return 0.0;
        }
        (1.0 - epoch as f64 / self.epochs as f64).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch of the selected run.
    pub loss_curve: Vec<f64>,
    /// `κ` used in each epoch.
    pub kappas: Vec<f64>,
    /// Final-epoch loss of every run.
    pub restart_losses: Vec<f64>,
    pub selected: usize,
    pub seed: u64,
}

/// Cuts every channel of every recording into non-overlapping segments of `len` samples.
pub fn segment_pool(data: &[TimeSeries], len: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for ts in data {
        for w in ts.windows(len, len)? {
            for c in 0..w.channels() {
                out.push(w.channel(c).to_vec());
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(out)
}

fn run_seed(seed: u64, run: usize) -> u64 {
    seed ^ (run as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Stacks segments into a time-major batch `(T, B, 1)`.
fn batch_tensor(segments: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let t = segments[idx[0]].len();
    let b = idx.len();
    let mut x = vec![0.0; t * b];
    for (j, &i) in idx.iter().enumerate() {
        for (s, &v) in segments[i].iter().enumerate() {
            x[s * b + j] = v;
        }
    }
    Tensor::new(vec![t, b, 1], x).expect("consistent batch")
}

impl LearnableTokenizer {
    /// Mean-squared reconstruction loss of a batch and its parameter gradients.
    pub fn loss_and_grads(&self, batch: &Tensor, kappa: f64) -> Result<(f64, Vec<Tensor>)> {
        let pass = self.forward_pass(batch, kappa)?;
        let (loss, grad) = mse(&pass.recon, batch.data())?;
        Ok((loss, self.backward_pass(&pass, &grad, kappa)?))
    }

    /// Reconstruction loss only.
    pub fn loss(&self, batch: &Tensor, kappa: f64) -> Result<f64> {
        let pass = self.forward_pass(batch, kappa)?;
        Ok(mse(&pass.recon, batch.data())?.0)
    }

    fn train_once(segments: &[Vec<f64>], cfg: &LearnableConfig, seed: u64) -> Result<(Self, Vec<f64>)> {
        let mut tok = Self::seeded(cfg.vocab_size, cfg.hidden, cfg.d_token, cfg.causal, seed)?;
        let mut shuffle = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut adam = AdamState::new(AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            ..AdamConfig::default()
        });
        let schedule = AnnealSchedule { epochs: cfg.epochs };
        let mut order: Vec<usize> = (0..segments.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let kappa = schedule.kappa(epoch);
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for idx in order.chunks(cfg.batch_size) {
                let batch = batch_tensor(segments, idx);
                let (loss, mut grads) = tok.loss_and_grads(&batch, kappa)?;
                if !loss.is_finite() {
                    return Err(Error::DegenerateCurve(format!("non-finite loss in epoch {epoch}")));
                }
                if let Some(max) = cfg.grad_clip {
                    clip_grad_norm(&mut grads, max);
                }
                adam_step(tok.params_mut(), &grads, &mut adam)?;
                total += loss * idx.len() as f64;
            }
            curve.push(total / segments.len() as f64);
        }
        Ok((tok, curve))
    }

    /// Trains `cfg.restarts` independent runs on equal-length single-channel
    /// segments and keeps the one with the lowest final loss.
    pub fn train(segments: &[Vec<f64>], cfg: &LearnableConfig) -> Result<(Self, TrainReport)> {
        cfg.validate()?;
        let len = segments.first().ok_or(Error::EmptyData)?.len();
        if len == 0 || segments.iter().any(|s| s.len() != len) {
            return Err(Error::InvalidSeries("training segments must be non-empty and of equal length".into()));
        }
        let runs: Vec<Result<(Self, Vec<f64>)>> = crate::parallel::install(|| {
            (0..cfg.restarts)
                .into_par_iter()
                .map(|r| Self::train_once(segments, cfg, run_seed(cfg.seed, r)))
                .collect()
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let restart_losses: Vec<f64> = runs.iter().map(|(_, c)| *c.last().expect("epochs >= 1")).collect();
        let selected = (0..runs.len())
            .min_by(|&a, &b| restart_losses[a].total_cmp(&restart_losses[b]))
            .expect("restarts >= 1");
        let (mut tok, loss_curve) = runs.into_iter().nth(selected).expect("selected run exists");
        let schedule = AnnealSchedule { epochs: cfg.epochs };
        let report = TrainReport {
            loss_curve,
            kappas: (0..cfg.epochs).map(|e| schedule.kappa(e)).collect(),
            restart_losses,
            selected,
            seed: run_seed(cfg.seed, selected),
        };
        tok.set_training_record(report.clone());
        Ok((tok, report))
    }
}
