use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, GptModel, TokenWindow};
use crate::error::{shape_err, Error, Result};
use crate::nnkit::{adam_step, clip_grad_norm, cross_entropy, AdamConfig, AdamState, Tensor};
use crate::tokens::TokenSequence;

/// Share of every recording used for training; the tail is held out.
pub const TRAIN_FRACTION: f64 = 0.9;

/// Train and validation ranges of one recording, in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceSplit {
    pub train_end: usize,
    pub samples: usize,
}

/// Token recordings with their subject ids, split nine to one along time.
#[derive(Clone, Debug)]
pub struct GptDataset {
    seqs: Vec<(TokenSequence, u32)>,
    splits: Vec<SequenceSplit>,
    window: usize,
}

impl GptDataset {
    /// `window` is the input length; every draw is `window + 1` tokens long.
    pub fn new(seqs: Vec<(TokenSequence, u32)>, window: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::EmptyData);
        }
        let channels = seqs[0].0.channels();
        let mut splits = Vec::with_capacity(seqs.len());
        for (s, _) in &seqs {
            if s.channels() != channels {
                return Err(shape_err("recordings must share one channel count"));
            }
            let train_end = (s.samples() as f64 * TRAIN_FRACTION).floor() as usize;
            if train_end < window + 1 || s.samples() - train_end < window + 1 {
                return Err(Error::WindowTooLong {
                    window: window + 1,
                    samples: s.samples(),
                });
            }
            splits.push(SequenceSplit {
                train_end,
                samples: s.samples(),
            });
        }
        Ok(Self { seqs, splits, window })
    }

    pub fn channels(&self) -> usize {
        self.seqs[0].0.channels()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn splits(&self) -> &[SequenceSplit] {
        &self.splits
    }

    fn cut(&self, i: usize, start: usize) -> TokenWindow {
        let (s, subject) = &self.seqs[i];
        let len = self.window + 1;
        let labels = s.iter_channels().flat_map(|ch| ch[start..start + len].iter().copied()).collect();
        TokenWindow {
            labels,
            channels: s.channels(),
            len,
            subject: *subject,
        }
    }

    /// Uniformly chosen recording, uniformly chosen start inside its training part.
    fn draw_train(&self, rng: &mut ChaCha8Rng) -> TokenWindow {
        let i = rng.random_range(0..self.seqs.len());
        let start = rng.random_range(0..=self.splits[i].train_end - self.window - 1);
        self.cut(i, start)
    }

    /// Non-overlapping windows from the held-out tails, taken round-robin
    /// across recordings, at most `max` of them.
    pub fn validation_windows(&self, max: usize) -> Vec<TokenWindow> {
        let len = self.window + 1;
        let mut out = Vec::new();
        for k in 0.. {
            let mut any = false;
            for (i, sp) in self.splits.iter().enumerate() {
                let start = sp.train_end + k * len;
                if start + len <= sp.samples {
                    any = true;
                    if out.len() == max {
                        return out;
                    }
                    out.push(self.cut(i, start));
                }
            }
            if !any {
                break;
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GptReport {
    /// Step count at each evaluation.
    pub steps: Vec<usize>,
    /// Mean teacher-forced training loss since the previous evaluation.
    pub train_loss: Vec<f64>,
    pub train_top1: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_top1: Vec<f64>,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    pub seed: u64,
}

/// Splits `(N, len+1)` windows into inputs (first `len`) and next-token targets.
fn shift(windows: &[TokenWindow]) -> (Vec<TokenWindow>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(windows.len());
    let mut targets = Vec::new();
    for w in windows {
        let l = w.len - 1;
        inputs.push(w.slice(0, l));
        for c in 0..w.channels {
            targets.extend((1..w.len).map(|t| w.at(t, c) as usize));
        }
    }
    (inputs, targets)
}

fn top1(logits: &Tensor, targets: &[usize]) -> f64 {
    let v = logits.last_dim();
    let hits = logits
        .data()
        .chunks_exact(v)
        .zip(targets)
        .filter(|(row, &y)| {
            // first maximum wins ties
            let arg = row.iter().enumerate().fold(0, |best, (j, &x)| if x > row[best] { j } else { best });
            arg == y
        })
        .count();
    hits as f64 / targets.len() as f64
}

impl GptModel {
    /// Mean next-token cross-entropy and per-token top-1 accuracy of full
    /// windows (`len = L + 1`), in infer mode.
    pub fn evaluate(&self, windows: &[TokenWindow]) -> Result<(f64, f64)> {
        if windows.is_empty() {
            return Err(Error::EmptyData);
        }
        let (mut loss, mut acc, mut n) = (0.0, 0.0, 0.0);
        for chunk in windows.chunks(self.cfg.batch_size.max(1)) {
            let (inputs, targets) = shift(chunk);
            let pass = self.forward_pass(&inputs, None)?;
            let v = self.cfg.vocab_size;
            let logits = pass.logits.reshape(&[targets.len(), v])?;
            let (l, _) = cross_entropy(&logits, &targets)?;
            let k = targets.len() as f64;
            loss += l * k;
            acc += top1(&logits, &targets) * k;
            n += k;
        }
        Ok((loss / n, acc / n))
    }

    /// Loss, accuracy and gradients of one training batch.
    pub fn loss_and_grads(&self, windows: &[TokenWindow], dropout_seed: Option<u64>) -> Result<(f64, f64, Vec<Tensor>)> {
        let (inputs, targets) = shift(windows);
        let pass = self.forward_pass(&inputs, dropout_seed)?;
        let shape = pass.logits.shape().to_vec();
        let logits = pass.logits.clone().reshape(&[targets.len(), self.cfg.vocab_size])?;
        let (loss, grad) = cross_entropy(&logits, &targets)?;
        let acc = top1(&logits, &targets);
        let grads = self.backward_pass(&pass, &grad.reshape(&shape)?)?;
        Ok((loss, acc, grads))
    }

    /// Teacher-forced next-token training with Adam for `cfg.steps` steps.
    pub fn train(&mut self, data: &GptDataset) -> Result<GptReport> {
        let cfg = self.cfg.clone();
        if data.window() != cfg.receptive_field {
            return Err(Error::Config(format!(
                "dataset windows have {} inputs, model context is {}",
                data.window(),
                cfg.receptive_field
            )));
        }
        if data.channels() != cfg.n_channels {
            return Err(shape_err(format!("model has {} channels, data has {}", cfg.n_channels, data.channels())));
        }
        let val = data.validation_windows(cfg.max_eval_windows);
        if val.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5eed));
        let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
        let mut report = GptReport {
            initial_val_loss: self.evaluate(&val)?.0,
            seed: cfg.seed,
            ..GptReport::default()
        };
        let (mut run_loss, mut run_acc, mut run_n) = (0.0, 0.0, 0usize);
        for step in 1..=cfg.steps {
            let batch: Vec<TokenWindow> = (0..cfg.batch_size).map(|_| data.draw_train(&mut rng)).collect();
            let (loss, acc, mut grads) = self.loss_and_grads(&batch, Some(mix_seed(cfg.seed, step as u64)))?;
            if !loss.is_finite() {
                return Err(Error::DegenerateCurve(format!("non-finite loss at step {step}")));
            }
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adam_step(self.params_mut(), &grads, &mut adam)?;
            run_loss += loss;
            run_acc += acc;
            run_n += 1;
            if step % cfg.eval_every == 0 || step == cfg.steps {
                let (vl, va) = self.evaluate(&val)?;
                report.steps.push(step);
                report.train_loss.push(run_loss / run_n as f64);
                report.train_top1.push(run_acc / run_n as f64);
                report.val_loss.push(vl);
                report.val_top1.push(va);
                (run_loss, run_acc, run_n) = (0.0, 0.0, 0);
            }
        }
        Ok(report)
    }
}
