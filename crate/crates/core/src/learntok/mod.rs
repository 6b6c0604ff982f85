//! Learnable sample-level tokenizer.
//!
//! A GRU reads the signal one sample at a time; a dense layer and a layer
//! norm turn its state into token logits `α`. The decoder treats the token
//! assignment `ζ` as a train of impulses, convolves each token's row with its
//! own kernel and mixes the results:
//!
//! ```text
//! x̃_t = Σ_v ( w_v Σ_τ e_{τ,v} ζ_{t-τ,v} + b_v )
//! ```
//!
//! During training `ζ = (1-κ) onehot(argmax α) + κ softmax(α)`, with `κ`
//! annealed from 1 to 0. Tokenizing uses `κ = 0`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nnkit::checkpoint::{Checkpoint, CheckpointWriter};
use crate::nnkit::{Conv1d, Dense, Gru, Layer, LayerNorm, LayerSpec, Mode, Parameterized, Stamp, Tensor};
use crate::series::{SeriesMeta, TimeSeries};
use crate::tokens::{TokenSequence, Tokenizer};

mod train;

pub use train::{segment_pool, AnnealSchedule, LearnableConfig, TrainReport};

const SIDECAR_FORMAT: &str = "neurotok-learnable/1";

/// Relabeling produced by [`LearnableTokenizer::refactorize`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefactorMap {
    /// `new_to_old[k]` is the original token behind label `k`.
    pub new_to_old: Vec<u32>,
    /// Usage count of each retained token, in new-label order.
    pub counts: Vec<u64>,
}

impl RefactorMap {
    pub fn v_star(&self) -> usize {
        self.new_to_old.len()
    }

    /// Label reserved for tokens outside the retained set.
    pub fn oov_label(&self) -> u32 {
        self.v_star() as u32
    }

    fn old_to_new(&self, vocab: usize) -> Vec<Option<u32>> {
        let mut map = vec![None; vocab];
        for (new, &old) in self.new_to_old.iter().enumerate() {
            map[old as usize] = Some(new as u32);
        }
        map
    }
}

/// Mixing weights `w` and biases `b` of the decoder.
#[derive(Clone, Debug)]
pub(crate) struct TokenMix {
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
    stamp: Stamp,
}

impl Parameterized for TokenMix {
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
        LayerSpec::TokenMix { vocab: self.w.len() }
    }
}

#[derive(Clone, Debug)]
pub struct LearnableTokenizer {
    pub(crate) gru: Gru,
    pub(crate) dense: Dense,
    pub(crate) norm: LayerNorm,
    pub(crate) kernels: Conv1d,
    pub(crate) mix: TokenMix,
    refactor: Option<RefactorMap>,
    anneal: Option<TrainReport>,
}

/// Everything the backward pass needs from one batched forward pass.
pub(crate) struct Pass {
    gru: <Gru as Layer>::Cache,
    dense: <Dense as Layer>::Cache,
    norm: <LayerNorm as Layer>::Cache,
    conv: <Conv1d as Layer>::Cache,
    alpha: Tensor,
    soft: Vec<f64>,
    zeta: Tensor,
    filtered: Vec<f64>,
    pub(crate) recon: Vec<f64>,
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &a) in out.iter_mut().zip(row) {
        *o = (a - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

impl LearnableTokenizer {
    pub fn new(vocab_size: usize, hidden: usize, d_token: usize, causal: bool, rng: &mut impl Rng) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidVocab(vocab_size));
        }
        if hidden == 0 || d_token == 0 {
            return Err(Error::Config("hidden size and kernel width must be at least 1".into()));
        }
        Ok(Self {
            gru: Gru::new(1, hidden, rng),
            dense: Dense::new(hidden, vocab_size, rng),
            norm: LayerNorm::new(vocab_size),
            kernels: Conv1d::new(d_token, vocab_size, causal, rng),
            mix: TokenMix {
                w: Tensor::filled(&[vocab_size], 1.0),
                b: Tensor::zeros(&[vocab_size]),
                stamp: Stamp::new(),
            },
            refactor: None,
            anneal: None,
        })
    }

    pub fn seeded(vocab_size: usize, hidden: usize, d_token: usize, causal: bool, seed: u64) -> Result<Self> {
        Self::new(vocab_size, hidden, d_token, causal, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Size of the raw token set `V`, before refactorization.
    pub fn raw_vocab_size(&self) -> usize {
        self.mix.w.len()
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden()
    }

    pub fn d_token(&self) -> usize {
        self.kernels.width()
    }

    pub fn causal(&self) -> bool {
        self.kernels.causal()
    }

    pub fn refactor_map(&self) -> Option<&RefactorMap> {
        self.refactor.as_ref()
    }

    pub fn training_record(&self) -> Option<&TrainReport> {
        self.anneal.as_ref()
    }

    pub(crate) fn set_training_record(&mut self, report: TrainReport) {
        self.anneal = Some(report);
    }

    /// Kernel matrix `e`, shaped `(d_token, V)`.
    pub fn kernels(&self) -> &Tensor {
        self.kernels.kernel()
    }

    pub fn mixing_weights(&self) -> &[f64] {
        self.mix.w.data()
    }

    pub fn biases(&self) -> &[f64] {
        self.mix.b.data()
    }

    /// All trainable tensors in a fixed order; invalidates outstanding passes.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.gru.params_mut();
        p.extend(self.dense.params_mut());
        p.extend(self.norm.params_mut());
        p.extend(self.kernels.params_mut());
        p.extend(self.mix.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.gru.params();
        p.extend(self.dense.params());
        p.extend(self.norm.params());
        p.extend(self.kernels.params());
        p.extend(self.mix.params());
        p
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Logits for a time-major batch `(T, B, 1)`, shaped `(T, B, V)`.
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (h, _) = self.gru.forward(x, Mode::Infer)?;
        let (a, _) = self.dense.forward(&h, Mode::Infer)?;
        Ok(self.norm.forward(&a, Mode::Infer)?.0)
    }

    /// Token assignment for logits `alpha` at relaxation `kappa`.
    fn relax(alpha: &Tensor, kappa: f64) -> (Vec<f64>, Tensor) {
        let v = alpha.last_dim();
        let mut soft = vec![0.0; alpha.len()];
        let mut zeta = vec![0.0; alpha.len()];
        for ((a, s), z) in alpha.data().chunks_exact(v).zip(soft.chunks_exact_mut(v)).zip(zeta.chunks_exact_mut(v)) {
            softmax_into(a, s);
            for (zi, si) in z.iter_mut().zip(s.iter()) {
                *zi = kappa * si;
            }
            z[argmax(a)] += 1.0 - kappa;
        }
        (soft, Tensor::new(alpha.shape().to_vec(), zeta).expect("same shape"))
    }

    /// Decoder applied to an assignment tensor `(T, B, V)`; returns `(filtered, recon)`.
    fn decode_batch(&self, zeta: &Tensor) -> Result<(Vec<f64>, Vec<f64>, <Conv1d as Layer>::Cache)> {
        let (u, cache) = self.kernels.forward(zeta, Mode::Infer)?;
        let v = self.raw_vocab_size();
        let bias: f64 = self.mix.b.data().iter().sum();
        let w = self.mix.w.data();
        let recon = u
            .data()
            .chunks_exact(v)
            .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias)
            .collect();
        Ok((u.into_data(), recon, cache))
    }

    /// Full encode/decode pass over a time-major batch `(T, B, 1)`.
    pub(crate) fn forward_pass(&self, x: &Tensor, kappa: f64) -> Result<Pass> {
        if x.shape().len() != 3 || x.shape()[2] != 1 {
            return Err(shape_err(format!("tokenizer batch must be (T, B, 1), got {:?}", x.shape())));
        }
        let (h, gru) = self.gru.forward(x, Mode::Infer)?;
        let (a, dense) = self.dense.forward(&h, Mode::Infer)?;
        let (alpha, norm) = self.norm.forward(&a, Mode::Infer)?;
        let (soft, zeta) = Self::relax(&alpha, kappa);
        let (filtered, recon, conv) = self.decode_batch(&zeta)?;
        Ok(Pass {
            gru,
            dense,
            norm,
            conv,
            alpha,
            soft,
            zeta,
            filtered,
            recon,
        })
    }

    /// Parameter gradients given `d loss / d recon`, in [`Self::params`] order.
    pub(crate) fn backward_pass(&self, pass: &Pass, grad_recon: &[f64], kappa: f64) -> Result<Vec<Tensor>> {
        let v = self.raw_vocab_size();
        if grad_recon.len() != pass.recon.len() {
            return Err(shape_err("reconstruction gradient has the wrong length"));
        }
        let w = self.mix.w.data();
        let mut gw = vec![0.0; v];
        let mut gu = vec![0.0; pass.filtered.len()];
        for ((&g, u), gu_row) in grad_recon.iter().zip(pass.filtered.chunks_exact(v)).zip(gu.chunks_exact_mut(v)) {
            for j in 0..v {
                gw[j] += g * u[j];
                gu_row[j] = g * w[j];
            }
        }
        let gb = vec![grad_recon.iter().sum::<f64>(); v];
        let (gzeta, gkern) = self.kernels.backward(&Tensor::new(pass.zeta.shape().to_vec(), gu)?, &pass.conv)?;

        // only the softmax share of ζ depends smoothly on α
        let mut galpha = vec![0.0; gzeta.len()];
        if kappa != 0.0 {
            for ((gz, s), ga) in gzeta.data().chunks_exact(v).zip(pass.soft.chunks_exact(v)).zip(galpha.chunks_exact_mut(v)) {
                let dot: f64 = gz.iter().zip(s).map(|(a, b)| a * b).sum();
                for j in 0..v {
                    ga[j] = kappa * s[j] * (gz[j] - dot);
                }
            }
        }
        let galpha = Tensor::new(pass.alpha.shape().to_vec(), galpha)?;
        let (ga, gnorm) = self.norm.backward(&galpha, &pass.norm)?;
        let (gh, gdense) = self.dense.backward(&ga, &pass.dense)?;
        let (_, ggru) = self.gru.backward(&gh, &pass.gru)?;

        let mut grads = ggru;
        grads.extend(gdense);
        grads.extend(gnorm);
        grads.extend(gkern);
        grads.push(Tensor::new(vec![v], gw)?);
        grads.push(Tensor::new(vec![v], gb)?);
        Ok(grads)
    }

    /// Logits `α` and assignment `ζ` of one single-channel sequence, both `(T, V)`.
    pub fn encode(&self, x: &[f64], kappa: f64) -> Result<(Tensor, Tensor)> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::Config(format!("annealing coefficient {kappa} outside [0, 1]")));
        }
        let input = Tensor::new(vec![x.len(), 1, 1], x.to_vec())?;
        let alpha = self.logits(&input)?;
        let (_, zeta) = Self::relax(&alpha, kappa);
        let shape = [x.len(), self.raw_vocab_size()];
        Ok((alpha.reshape(&shape)?, zeta.reshape(&shape)?))
    }

    /// Reconstruction from an assignment `ζ` shaped `(T, V)`.
    pub fn decode(&self, zeta: &Tensor) -> Result<Vec<f64>> {
        let v = self.raw_vocab_size();
        if zeta.shape().len() != 2 || zeta.shape()[1] != v {
            return Err(shape_err(format!("assignment must be (T, {v}), got {:?}", zeta.shape())));
        }
        let t = zeta.shape()[0];
        let (_, recon, _) = self.decode_batch(&zeta.clone().reshape(&[t, 1, v])?)?;
        Ok(recon)
    }

    /// Raw (pre-refactorization) hard labels for each channel, computed as one batch.
    fn raw_labels(&self, channels: &[&[f64]]) -> Result<Vec<Vec<u32>>> {
        let b = channels.len();
        let t = channels.first().map_or(0, |c| c.len());
        if channels.iter().any(|c| c.len() != t) {
            return Err(shape_err("channels have unequal lengths"));
        }
        let mut x = vec![0.0; t * b];
        for (c, ch) in channels.iter().enumerate() {
            for (i, &v) in ch.iter().enumerate() {
                x[i * b + c] = v;
            }
        }
        let alpha = self.logits(&Tensor::new(vec![t, b, 1], x)?)?;
        let v = self.raw_vocab_size();
        let mut out = vec![Vec::with_capacity(t); b];
        for (r, row) in alpha.data().chunks_exact(v).enumerate() {
            out[r % b].push(argmax(row) as u32);
        }
        Ok(out)
    }

    /// Decodes rows of raw labels; `None` marks a position with no token (bias only).
    fn decode_raw(&self, rows: &[Vec<Option<u32>>]) -> Result<Vec<Vec<f64>>> {
        let b = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        let v = self.raw_vocab_size();
        let mut zeta = vec![0.0; t * b * v];
        for (c, row) in rows.iter().enumerate() {
            for (i, l) in row.iter().enumerate() {
                if let Some(l) = l {
                    zeta[(i * b + c) * v + *l as usize] = 1.0;
                }
            }
        }
        let (_, recon, _) = self.decode_batch(&Tensor::new(vec![t, b, v], zeta)?)?;
        let mut out = vec![Vec::with_capacity(t); b];
        for (r, x) in recon.into_iter().enumerate() {
            out[r % b].push(x);
        }
        Ok(out)
    }

    /// Tokenize-then-decode of single-channel sequences at `κ = 0`.
    pub fn reconstruct(&self, channels: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let raw = self.raw_labels(channels)?;
        let rows: Vec<Vec<Option<u32>>> = raw.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        self.decode_raw(&rows)
    }

    /// Usage count of each raw token over `data` at `κ = 0`.
    pub fn usage(&self, data: &[&[f64]]) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; self.raw_vocab_size()];
        for ch in data {
            for l in &self.raw_labels(&[ch])?[0] {
                counts[*l as usize] += 1;
            }
        }
        Ok(counts)
    }

    /// Drops tokens never chosen on `data` and relabels the rest by
    /// descending usage (ties keep the original order). Label `V*` becomes
    /// the out-of-vocabulary token. Returns `V*`.
    pub fn refactorize(&mut self, data: &[&[f64]]) -> Result<usize> {
        let counts = self.usage(data)?;
        let mut used: Vec<u32> = (0..counts.len() as u32).filter(|&v| counts[v as usize] > 0).collect();
        if used.is_empty() {
            return Err(Error::EmptyData);
        }
        used.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        let map = RefactorMap {
            counts: used.iter().map(|&v| counts[v as usize]).collect(),
            new_to_old: used,
        };
        let v_star = map.v_star();
        self.refactor = Some(map);
        Ok(v_star)
    }

    /// Writes the sidecar JSON at `path` and the weights next to it
    /// (`<stem>.weights.json` / `<stem>.weights.bin`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let weights = path.with_extension("weights.json");
        let weights_name = weights
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Format(format!("bad tokenizer path {}", path.display())))?
            .to_string();
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.to_string(),
            vocab_size: self.raw_vocab_size(),
            v_star: self.refactor.as_ref().map(RefactorMap::v_star),
            hidden: self.hidden(),
            d_token: self.d_token(),
            causal: self.causal(),
            refactor: self.refactor.clone(),
            training: self.anneal.clone(),
            weights: weights_name,
        };
        CheckpointWriter::new()
            .add("encoder.gru", &self.gru)
            .add("encoder.dense", &self.dense)
            .add("encoder.norm", &self.norm)
            .add("decoder.kernels", &self.kernels)
            .add("decoder.mix", &self.mix)
            .save(&weights, serde_json::to_value(&sidecar)?)?;
        fs::write(path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::Format(format!("unknown tokenizer format {:?}", sidecar.format)));
        }
        let mut tok = Self::seeded(sidecar.vocab_size, sidecar.hidden, sidecar.d_token, sidecar.causal, 0)?;
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        let ck = Checkpoint::load(&dir.join(&sidecar.weights))?;
        ck.restore("encoder.gru", &mut tok.gru)?;
        ck.restore("encoder.dense", &mut tok.dense)?;
        ck.restore("encoder.norm", &mut tok.norm)?;
        ck.restore("decoder.kernels", &mut tok.kernels)?;
        ck.restore("decoder.mix", &mut tok.mix)?;
        if let Some(map) = &sidecar.refactor {
            if map.new_to_old.iter().any(|&v| v as usize >= sidecar.vocab_size) || map.counts.len() != map.v_star() {
                return Err(Error::Format("refactor map does not fit the vocabulary".into()));
            }
        }
        tok.refactor = sidecar.refactor;
        tok.anneal = sidecar.training;
        Ok(tok)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    vocab_size: usize,
    v_star: Option<usize>,
    hidden: usize,
    d_token: usize,
    causal: bool,
    refactor: Option<RefactorMap>,
    training: Option<TrainReport>,
    weights: String,
}

impl Tokenizer for LearnableTokenizer {
    /// `V* + 1` once refactorized (the extra label is OOV), otherwise `V`.
    fn vocab_size(&self) -> usize {
        match &self.refactor {
            Some(m) => m.v_star() + 1,
            None => self.raw_vocab_size(),
        }
    }

    fn name(&self) -> String {
        let kind = if self.causal() { "causal" } else { "noncausal" };
        format!("learnable-{kind}-{}", self.vocab_size())
    }

    fn tokenize(&self, ts: &TimeSeries) -> Result<TokenSequence> {
        let channels: Vec<&[f64]> = ts.iter_channels().collect();
        let mut rows = self.raw_labels(&channels)?;
        if let Some(map) = &self.refactor {
            let fwd = map.old_to_new(self.raw_vocab_size());
            for row in &mut rows {
                for l in row.iter_mut() {
                    *l = fwd[*l as usize].unwrap_or(map.oov_label());
                }
            }
        }
        TokenSequence::new(rows.concat(), ts.channels(), ts.samples(), self.vocab_size(), self.name())
    }

    fn detokenize(&self, tokens: &TokenSequence, meta: &SeriesMeta) -> Result<TimeSeries> {
        if tokens.vocab_size() != self.vocab_size() {
            return Err(Error::VocabMismatch {
                expected: self.vocab_size(),
                actual: tokens.vocab_size(),
            });
        }
        let rows: Vec<Vec<Option<u32>>> = tokens
            .iter_channels()
            .map(|row| {
                row.iter()
                    .map(|&l| match &self.refactor {
                        Some(map) => map.new_to_old.get(l as usize).copied(),
                        None => Some(l),
                    })
                    .collect()
            })
            .collect();
        meta.build(self.decode_raw(&rows)?)
    }
}

#[cfg(test)]
mod tests;
