use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GptModel, TokenWindow};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_p: 0.99,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Indices of the smallest descending-probability prefix whose mass reaches
/// `top_p`. Equal probabilities keep index order.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut mass = 0.0;
    for (k, &i) in order.iter().enumerate() {
        mass += probs[i];
        // rounding can leave the full sum a hair below 1
        if mass >= top_p - 1e-12 {
            order.truncate(k + 1);
            break;
        }
    }
    order
}

/// Independent draws proportional to `counts`.
pub fn sample_prompt(counts: &[u64], length: usize, seed: u64) -> Result<Vec<u32>> {
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyHistogram);
    }
    let dist = WeightedIndex::new(counts).map_err(|_| Error::EmptyHistogram)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..length).map(|_| dist.sample(&mut rng) as u32).collect())
}

/// `n` independent draws from the renormalized nucleus of `probs`.
pub fn sample_nucleus(probs: &[f64], top_p: f64, n: usize, seed: u64) -> Result<Vec<usize>> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::Config(format!("top_p {top_p} outside (0, 1]")));
    }
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || probs.iter().sum::<f64>() <= 0.0 {
        return Err(Error::EmptyHistogram);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw(probs, top_p, &mut rng) as usize).collect())
}

fn softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

fn draw(probs: &[f64], top_p: f64, rng: &mut ChaCha8Rng) -> u32 {
    let keep = nucleus(probs, top_p);
    let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
    let u = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &keep {
        acc += probs[i];
        if u < acc {
            return i as u32;
        }
    }
    *keep.last().expect("nucleus is never empty") as u32
}

impl GptModel {
    /// Extends `prompt` by `steps` tokens per channel. Each step conditions on
    /// the trailing `receptive_field` tokens and samples every channel from
    /// its nucleus.
    pub fn generate(&self, prompt: &TokenWindow, steps: usize, sampler: &SamplerConfig) -> Result<TokenWindow> {
        sampler.validate()?;
        if prompt.len == 0 {
            return Err(Error::EmptyData);
        }
        let c = prompt.channels;
        let mut rows: Vec<Vec<u32>> = (0..c).map(|ch| prompt.labels[ch * prompt.len..][..prompt.len].to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
        let r = self.cfg.receptive_field;
        for _ in 0..steps {
            let len = rows[0].len();
            let from = len.saturating_sub(r);
            let ctx = TokenWindow {
                labels: rows.iter().flat_map(|row| row[from..].iter().copied()).collect(),
                channels: c,
                len: len - from,
                subject: prompt.subject,
            };
            let pass = self.forward_pass(std::slice::from_ref(&ctx), None)?;
            let v = self.cfg.vocab_size;
            for (ch, row) in rows.iter_mut().enumerate() {
                let at = (ch * ctx.len + ctx.len - 1) * v;
                let probs = softmax_t(&pass.logits.data()[at..at + v], sampler.temperature);
                row.push(draw(&probs, sampler.top_p, &mut rng));
            }
        }
        let len = rows[0].len();
        TokenWindow::new(rows.concat(), c, len, prompt.subject)
    }
}
