//! Decoder-only transformer over multichannel token streams.
//!
//! Every channel is its own sequence: attention runs along time within a
//! channel, and channel identity enters only through a channel embedding.
//! The input at `(channel c, position t)` is the sum of the token, channel,
//! position and subject embeddings. Blocks are pre-norm:
//!
//! ```text
//! x = x + Attn(LN(x))
//! x = x + W2 GELU(W1 LN(x))
//! ```
//!
//! followed by a final layer norm and the prediction head
//! `Dense -> Dropout -> LeakyReLU -> Dropout -> Dense(V)`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nnkit::checkpoint::{Checkpoint, CheckpointWriter};
use crate::nnkit::{
    Dense, Dropout, Embedding, EmbeddingCache, Gelu, Layer, LayerNorm, LeakyRelu, Mode, MultiHeadSelfAttention, Parameterized, Tensor,
};

mod sample;
mod train;

pub use sample::{nucleus, sample_nucleus, sample_prompt, SamplerConfig};
pub use train::{GptDataset, GptReport, SequenceSplit};

const SIDECAR_FORMAT: &str = "neurotok-gpt/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GptConfig {
    /// Includes the out-of-vocabulary label when the tokenizer has one.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Longest context, in time steps.
    pub receptive_field: usize,
    pub n_channels: usize,
    pub n_subjects: usize,
    /// Width of the feed-forward sublayer in each block.
    pub ffn_dim: usize,
    /// Width of the prediction head's hidden layer.
    pub head_hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Evaluate and record the curves every this many steps.
    pub eval_every: usize,
    /// Upper bound on validation windows per evaluation.
    pub max_eval_windows: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for GptConfig {
    fn default() -> Self {
        Self {
            vocab_size: 108,
            embed_dim: 64,
            n_layers: 2,
            n_heads: 2,
            receptive_field: 32,
            n_channels: 1,
            n_subjects: 1,
            ffn_dim: 256,
            head_hidden: 64,
            dropout: 0.1,
            leaky_slope: 0.01,
            lr: 1e-3,
            batch_size: 8,
            steps: 2000,
            eval_every: 100,
            max_eval_windows: 64,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

impl GptConfig {
    /// Full-scale pretraining configuration
    /// (400-dimensional embeddings, four layers of four heads, 80-token context).
    pub fn full_scale(vocab_size: usize, n_channels: usize, n_subjects: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 400,
            n_layers: 4,
            n_heads: 4,
            receptive_field: 80,
            n_channels,
            n_subjects,
            ffn_dim: 1600,
            head_hidden: 400,
            lr: 1e-5,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return Err(Error::InvalidVocab(self.vocab_size));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!("{} heads do not divide embed_dim {}", self.n_heads, self.embed_dim));
        }
        if self.receptive_field < 2 {
            return bad(format!("receptive_field {} must be at least 2", self.receptive_field));
        }
        if self.n_layers == 0 || self.n_channels == 0 || self.n_subjects == 0 || self.ffn_dim == 0 || self.head_hidden == 0 {
            return bad("layer, channel, subject and hidden counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.eval_every == 0 || self.max_eval_windows == 0 {
            return bad("lr, batch_size, eval_every and max_eval_windows must be positive".into());
        }
        Ok(())
    }
}

/// `channels x len` labels, channel-major, from one subject.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenWindow {
    pub labels: Vec<u32>,
    pub channels: usize,
    pub len: usize,
    pub subject: u32,
}

impl TokenWindow {
    pub fn new(labels: Vec<u32>, channels: usize, len: usize, subject: u32) -> Result<Self> {
        if labels.len() != channels * len {
            return Err(shape_err(format!("{} labels for {channels} x {len}", labels.len())));
        }
        Ok(Self {
            labels,
            channels,
            len,
            subject,
        })
    }

    /// Time-major `L x C` rows to a window.
    pub fn from_time_major(rows: &[Vec<u32>], subject: u32) -> Result<Self> {
        let len = rows.len();
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(shape_err("time steps have different channel counts"));
        }
        let mut labels = vec![0; len * channels];
        for (t, row) in rows.iter().enumerate() {
            for (c, &l) in row.iter().enumerate() {
                labels[c * len + t] = l;
            }
        }
        Self::new(labels, channels, len, subject)
    }

    pub fn at(&self, t: usize, c: usize) -> u32 {
        self.labels[c * self.len + t]
    }

    /// Positions `start..start + len` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> TokenWindow {
        let labels = (0..self.channels)
            .flat_map(|c| self.labels[c * self.len + start..c * self.len + start + len].iter().copied())
            .collect();
        TokenWindow {
            labels,
            channels: self.channels,
            len,
            subject: self.subject,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    ln1: LayerNorm,
    attn: MultiHeadSelfAttention,
    ln2: LayerNorm,
    ff1: Dense,
    act: Gelu,
    ff2: Dense,
}

struct BlockCache {
    ln1: <LayerNorm as Layer>::Cache,
    attn: <MultiHeadSelfAttention as Layer>::Cache,
    ln2: <LayerNorm as Layer>::Cache,
    ff1: <Dense as Layer>::Cache,
    act: <Gelu as Layer>::Cache,
    ff2: <Dense as Layer>::Cache,
}

impl Block {
    fn new(cfg: &GptConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(cfg.embed_dim),
            attn: MultiHeadSelfAttention::new(cfg.embed_dim, cfg.n_heads, true, rng)?,
            ln2: LayerNorm::new(cfg.embed_dim),
            ff1: Dense::new(cfg.embed_dim, cfg.ffn_dim, rng),
            act: Gelu,
            ff2: Dense::new(cfg.ffn_dim, cfg.embed_dim, rng),
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (a, ln1) = self.ln1.forward(x, Mode::Infer)?;
        let (mut b, attn) = self.attn.forward(&a, Mode::Infer)?;
        b.add_assign(x)?;
        let (c, ln2) = self.ln2.forward(&b, Mode::Infer)?;
        let (d, ff1) = self.ff1.forward(&c, Mode::Infer)?;
        let (e, act) = self.act.forward(&d, Mode::Infer)?;
        let (mut f, ff2) = self.ff2.forward(&e, Mode::Infer)?;
        f.add_assign(&b)?;
        Ok((f, BlockCache { ln1, attn, ln2, ff1, act, ff2 }))
    }

    fn backward(&self, g: &Tensor, c: &BlockCache, grads: &mut Vec<Tensor>) -> Result<Tensor> {
        let (ge, gff2) = self.ff2.backward(g, &c.ff2)?;
        let (gd, _) = self.act.backward(&ge, &c.act)?;
        let (gc, gff1) = self.ff1.backward(&gd, &c.ff1)?;
        let (mut gb, gln2) = self.ln2.backward(&gc, &c.ln2)?;
        gb.add_assign(g)?;
        let (ga, gattn) = self.attn.backward(&gb, &c.attn)?;
        let (mut gx, gln1) = self.ln1.backward(&ga, &c.ln1)?;
        gx.add_assign(&gb)?;
        grads.extend(gln1);
        grads.extend(gattn);
        grads.extend(gln2);
        grads.extend(gff1);
        grads.extend(gff2);
        Ok(gx)
    }

    fn layers(&self) -> [(&'static str, &dyn Parameterized); 5] {
        [("ln1", &self.ln1), ("attn", &self.attn), ("ln2", &self.ln2), ("ff1", &self.ff1), ("ff2", &self.ff2)]
    }

    fn layers_mut(&mut self) -> [(&'static str, &mut dyn Parameterized); 5] {
        [
            ("ln1", &mut self.ln1),
            ("attn", &mut self.attn),
            ("ln2", &mut self.ln2),
            ("ff1", &mut self.ff1),
            ("ff2", &mut self.ff2),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct GptModel {
    cfg: GptConfig,
    tok_emb: Embedding,
    ch_emb: Embedding,
    pos_emb: Embedding,
    subj_emb: Embedding,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head1: Dense,
    drop: Dropout,
    act: LeakyRelu,
    head2: Dense,
}

/// Activations of one batched forward pass.
pub(crate) struct Pass {
    shape: (usize, usize, usize),
    ids: [EmbeddingCache; 4],
    blocks: Vec<BlockCache>,
    /// Output of the last block, `(N, L, D)`.
    features: Tensor,
    ln_f: <LayerNorm as Layer>::Cache,
    head1: <Dense as Layer>::Cache,
    drop1: <Dropout as Layer>::Cache,
    act: <LeakyRelu as Layer>::Cache,
    drop2: <Dropout as Layer>::Cache,
    head2: <Dense as Layer>::Cache,
    /// `(N, L, V)` with `N = batch * channels`, rows ordered `(window, channel)`.
    pub(crate) logits: Tensor,
}

fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl GptModel {
    pub fn new(cfg: GptConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embed_dim;
        let tok_emb = Embedding::new(cfg.vocab_size, d, &mut rng);
        let ch_emb = Embedding::new(cfg.n_channels, d, &mut rng);
        let pos_emb = Embedding::new(cfg.receptive_field, d, &mut rng);
        let subj_emb = Embedding::new(cfg.n_subjects, d, &mut rng);
        let blocks = (0..cfg.n_layers).map(|_| Block::new(&cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
        let head1 = Dense::new(d, cfg.head_hidden, &mut rng);
        let mut head2 = Dense::new(cfg.head_hidden, cfg.vocab_size, &mut rng);
        // small output weights keep the initial prediction close to uniform
        head2.params_mut()[0].scale(0.1);
        Ok(Self {
            drop: Dropout::new(cfg.dropout)?,
            act: LeakyRelu::new(cfg.leaky_slope),
            cfg,
            tok_emb,
            ch_emb,
            pos_emb,
            subj_emb,
            blocks,
            ln_f: LayerNorm::new(d),
            head1,
            head2,
        })
    }

    pub fn config(&self) -> &GptConfig {
        &self.cfg
    }

    fn named_layers(&self) -> Vec<(String, &dyn Parameterized)> {
        let mut out: Vec<(String, &dyn Parameterized)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("ch_emb".into(), &self.ch_emb),
            ("pos_emb".into(), &self.pos_emb),
            ("subj_emb".into(), &self.subj_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, l) in b.layers() {
                out.push((format!("block{i}.{name}"), l));
            }
        }
        out.push(("ln_f".into(), &self.ln_f));
        out.push(("head1".into(), &self.head1));
        out.push(("head2".into(), &self.head2));
        out
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut dyn Parameterized)> {
        let mut out: Vec<(String, &mut dyn Parameterized)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("ch_emb".into(), &mut self.ch_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("subj_emb".into(), &mut self.subj_emb),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, l) in b.layers_mut() {
                out.push((format!("block{i}.{name}"), l));
            }
        }
        out.push(("ln_f".into(), &mut self.ln_f));
        out.push(("head1".into(), &mut self.head1));
        out.push(("head2".into(), &mut self.head2));
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_layers().into_iter().flat_map(|(_, l)| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_layers_mut().into_iter().flat_map(|(_, l)| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_windows(&self, windows: &[TokenWindow]) -> Result<usize> {
        let len = windows.first().ok_or(Error::EmptyData)?.len;
        for w in windows {
            if w.len != len {
                return Err(shape_err("windows in a batch must share one length"));
            }
            if w.len == 0 || w.len > self.cfg.receptive_field {
                return Err(Error::ContextTooLong {
                    len: w.len,
                    max: self.cfg.receptive_field,
                });
            }
            if w.channels != self.cfg.n_channels {
                return Err(shape_err(format!("model has {} channels, window has {}", self.cfg.n_channels, w.channels)));
            }
            if w.subject as usize >= self.cfg.n_subjects {
                return Err(Error::Config(format!(
                    "subject {} outside the {} subject embeddings",
                    w.subject, self.cfg.n_subjects
                )));
            }
            if let Some(&bad) = w.labels.iter().find(|&&l| l as usize >= self.cfg.vocab_size) {
                return Err(Error::LabelOutOfRange {
                    label: bad as usize,
                    vocab: self.cfg.vocab_size,
                });
            }
        }
        Ok(len)
    }

    /// Batched forward pass. `dropout_seed` switches the head to training mode.
    pub(crate) fn forward_pass(&self, windows: &[TokenWindow], dropout_seed: Option<u64>) -> Result<Pass> {
        let len = self.check_windows(windows)?;
        let (c, d) = (self.cfg.n_channels, self.cfg.embed_dim);
        let n = windows.len() * c;
        let rows = n * len;
        let mut tok = Vec::with_capacity(rows);
        let mut ch = Vec::with_capacity(rows);
        let mut pos = Vec::with_capacity(rows);
        let mut subj = Vec::with_capacity(rows);
        for w in windows {
            for ci in 0..c {
                for t in 0..len {
                    tok.push(w.at(t, ci) as usize);
                    ch.push(ci);
                    pos.push(t);
                    subj.push(w.subject as usize);
                }
            }
        }
        let (mut x, tc) = self.tok_emb.forward(&tok)?;
        let (e, cc) = self.ch_emb.forward(&ch)?;
        x.add_assign(&e)?;
        let (e, pc) = self.pos_emb.forward(&pos)?;
        x.add_assign(&e)?;
        let (e, sc) = self.subj_emb.forward(&subj)?;
        x.add_assign(&e)?;
        let mut x = x.reshape(&[n, len, d])?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, cache) = b.forward(&x)?;
            blocks.push(cache);
            x = y;
        }
        let features = x;
        let mode = |k: u64| match dropout_seed {
            Some(s) => Mode::Train { seed: mix_seed(s, k) },
            None => Mode::Infer,
        };
        let (h, ln_f) = self.ln_f.forward(&features, Mode::Infer)?;
        let (h, head1) = self.head1.forward(&h, Mode::Infer)?;
        let (h, drop1) = self.drop.forward(&h, mode(1))?;
        let (h, act) = self.act.forward(&h, Mode::Infer)?;
        let (h, drop2) = self.drop.forward(&h, mode(2))?;
        let (logits, head2) = self.head2.forward(&h, Mode::Infer)?;
        Ok(Pass {
            shape: (n, len, d),
            ids: [tc, cc, pc, sc],
            blocks,
            features,
            ln_f,
            head1,
            drop1,
            act,
            drop2,
            head2,
            logits,
        })
    }

    /// Parameter gradients given `d loss / d logits`, in [`Self::params`] order.
    pub(crate) fn backward_pass(&self, pass: &Pass, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let (gh, ghead2) = self.head2.backward(grad_logits, &pass.head2)?;
        let (gh, _) = self.drop.backward(&gh, &pass.drop2)?;
        let (gh, _) = self.act.backward(&gh, &pass.act)?;
        let (gh, _) = self.drop.backward(&gh, &pass.drop1)?;
        let (gh, ghead1) = self.head1.backward(&gh, &pass.head1)?;
        let (mut g, gln_f) = self.ln_f.backward(&gh, &pass.ln_f)?;

        let mut block_grads: Vec<Vec<Tensor>> = Vec::with_capacity(self.blocks.len());
        for (b, cache) in self.blocks.iter().zip(&pass.blocks).rev() {
            let mut gs = Vec::new();
            g = b.backward(&g, cache, &mut gs)?;
            block_grads.push(gs);
        }
        let (n, len, d) = pass.shape;
        let g = g.reshape(&[n * len, d])?;
        let mut grads = vec![
            self.tok_emb.backward(&g, &pass.ids[0])?,
            self.ch_emb.backward(&g, &pass.ids[1])?,
            self.pos_emb.backward(&g, &pass.ids[2])?,
            self.subj_emb.backward(&g, &pass.ids[3])?,
        ];
        for gs in block_grads.into_iter().rev() {
            grads.extend(gs);
        }
        grads.extend(gln_f);
        grads.extend(ghead1);
        grads.extend(ghead2);
        Ok(grads)
    }

    /// Next-token logits for one window, shaped `(L, C, V)`.
    pub fn forward(&self, window: &TokenWindow) -> Result<Tensor> {
        let pass = self.forward_pass(std::slice::from_ref(window), None)?;
        Ok(to_time_major(&pass.logits, self.cfg.n_channels))
    }

    /// Activations of the last decoder block (before the final norm and
    /// head), shaped `(L, C, embed_dim)`.
    pub fn extract_features(&self, window: &TokenWindow) -> Result<Tensor> {
        let pass = self.forward_pass(std::slice::from_ref(window), None)?;
        Ok(to_time_major(&pass.features, self.cfg.n_channels))
    }

    /// Writes the JSON config sidecar at `path` and weights at `<stem>.weights.json/.bin`.
    pub fn save(&self, path: impl AsRef<Path>, report: Option<&GptReport>) -> Result<()> {
        let path = path.as_ref();
        let weights = path.with_extension("weights.json");
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            config: self.cfg.clone(),
            weights: weights.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
            report: report.cloned(),
        };
        let mut w = CheckpointWriter::new();
        for (name, layer) in self.named_layers() {
            w.add(&name, layer);
        }
        w.save(&weights, serde_json::to_value(&self.cfg)?)?;
        fs::write(path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<GptReport>)> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::Format(format!("unknown model format {:?}", sidecar.format)));
        }
        let mut model = Self::new(sidecar.config)?;
        let ck = Checkpoint::load(&path.parent().unwrap_or_else(|| Path::new("")).join(&sidecar.weights))?;
        for (name, layer) in model.named_layers_mut() {
            ck.restore(&name, layer)?;
        }
        Ok((model, sidecar.report))
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    config: GptConfig,
    weights: String,
    report: Option<GptReport>,
}

/// `(C, L, K)` rows for one window to `(L, C, K)`.
fn to_time_major(x: &Tensor, channels: usize) -> Tensor {
    let k = x.last_dim();
    let len = x.rows() / channels;
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for t in 0..len {
            out[(t * channels + c) * k..][..k].copy_from_slice(&x.data()[(c * len + t) * k..][..k]);
        }
    }
    Tensor::new(vec![len, channels, k], out).expect("same size")
}
