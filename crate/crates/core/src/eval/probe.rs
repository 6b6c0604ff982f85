use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nnkit::{adam_step, cross_entropy, AdamConfig, AdamState, Dense, Layer, LayerNorm, Mode, Parameterized, Tensor};

/// One labelled trial. `features` is `(L, C, D)`; raw epochs use `D = 1`.
#[derive(Clone, Debug)]
pub struct ProbeTrial {
    pub features: Tensor,
    pub label: usize,
    pub subject: u32,
    pub session: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProbeSplit {
    /// Every subject trains on its other sessions and is tested on this one.
    WithinSubject { test_session: u32 },
    /// This subject is held out entirely.
    NewSubject { subject: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeInput {
    /// Learned projection over the sequence axis, then flatten `C x D`.
    Features,
    /// Flatten `L x C x D` directly (baseline on raw epochs).
    Flattened,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub input: ProbeInput,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            input: ProbeInput::Features,
            epochs: 300,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
}

struct Probe {
    proj: Option<Dense>,
    norm: LayerNorm,
    out: Dense,
    len: usize,
    width: usize,
}

impl Probe {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        if let Some(p) = self.proj.as_mut() {
            v.extend(p.params_mut());
        }
        v.extend(self.norm.params_mut());
        v.extend(self.out.params_mut());
        v
    }

    /// `(N, L*W)` batch to `(N, W, L)` so the projection acts on the sequence axis.
    fn transpose(&self, x: &Tensor, n: usize) -> Tensor {
        let (l, w) = (self.len, self.width);
        let mut out = vec![0.0; x.len()];
        for i in 0..n {
            for t in 0..l {
                for j in 0..w {
                    out[(i * w + j) * l + t] = x.data()[(i * l + t) * w + j];
                }
            }
        }
        Tensor::new(vec![n, w, l], out).expect("same size")
    }

    fn loss(&self, x: &Tensor, n: usize, labels: &[usize], grads: bool) -> Result<(f64, Tensor, Option<Vec<Tensor>>)> {
        let (h, proj_cache) = match &self.proj {
            Some(p) => {
                let (h, c) = p.forward(&self.transpose(x, n), Mode::Infer)?;
                (h.reshape(&[n, self.width])?, Some(c))
            }
            None => (x.clone(), None),
        };
        let (h, nc) = self.norm.forward(&h, Mode::Infer)?;
        let (logits, oc) = self.out.forward(&h, Mode::Infer)?;
        let (loss, g) = cross_entropy(&logits, labels)?;
        if !grads {
            return Ok((loss, logits, None));
        }
        let (g, mut go) = self.out.backward(&g, &oc)?;
        let (g, gn) = self.norm.backward(&g, &nc)?;
        let mut all = Vec::new();
        if let (Some(p), Some(c)) = (&self.proj, &proj_cache) {
            let (_, gp) = p.backward(&g.reshape(&[n, self.width, 1])?, c)?;
            all.extend(gp);
        }
        all.extend(gn);
        all.append(&mut go);
        Ok((loss, logits, Some(all)))
    }
}

fn stack(trials: &[&ProbeTrial]) -> Tensor {
    let data: Vec<f64> = trials.iter().flat_map(|t| t.features.data().iter().copied()).collect();
    let per = trials[0].features.len();
    Tensor::new(vec![trials.len(), per], data).expect("consistent trials")
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.last_dim();
    let hits = logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b }) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Trains a linear read-out on `trials` outside the test split and reports
/// its accuracy on the test split.
pub fn zero_shot_probe(trials: &[ProbeTrial], split: ProbeSplit, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let first = trials.first().ok_or(Error::EmptyData)?;
    let shape = first.features.shape().to_vec();
    if shape.len() != 3 {
        return Err(shape_err(format!("probe features must be (L, C, D), got {shape:?}")));
    }
    if trials.iter().any(|t| t.features.shape() != shape.as_slice()) {
        return Err(shape_err("probe trials differ in shape"));
    }
    let is_test = |t: &ProbeTrial| match split {
        ProbeSplit::WithinSubject { test_session } => t.session == test_session,
        ProbeSplit::NewSubject { subject } => t.subject == subject,
    };
    let (test, train): (Vec<&ProbeTrial>, Vec<&ProbeTrial>) = trials.iter().partition(|t| is_test(t));
    if test.is_empty() || train.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut seen: Vec<usize> = train.iter().map(|t| t.label).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::SingleClass);
    }
    let classes = trials.iter().map(|t| t.label).max().expect("nonempty") + 1;

    let (l, w) = (shape[0], shape[1] * shape[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (proj, width) = match cfg.input {
        ProbeInput::Features => (Some(Dense::new(l, 1, &mut rng)), w),
        ProbeInput::Flattened => (None, l * w),
    };
    let mut probe = Probe {
        proj,
        norm: LayerNorm::new(width),
        out: Dense::new(width, classes, &mut rng),
        len: l,
        width: w,
    };
    let (xtr, ytr): (Tensor, Vec<usize>) = (stack(&train), train.iter().map(|t| t.label).collect());
    let (xte, yte): (Tensor, Vec<usize>) = (stack(&test), test.iter().map(|t| t.label).collect());
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    for _ in 0..cfg.epochs {
        let (_, _, grads) = probe.loss(&xtr, train.len(), &ytr, true)?;
        adam_step(probe.params_mut(), &grads.expect("requested"), &mut adam)?;
    }
    let (_, train_logits, _) = probe.loss(&xtr, train.len(), &ytr, false)?;
    let (_, test_logits, _) = probe.loss(&xte, test.len(), &yte, false)?;
    Ok(ProbeResult {
        accuracy: accuracy(&test_logits, &yte),
        train_accuracy: accuracy(&train_logits, &ytr),
        n_train: train.len(),
        n_test: test.len(),
        classes,
    })
}
