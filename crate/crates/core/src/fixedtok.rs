//! Non-learnable sample-level codecs: μ-law companding and standard-quantile binning.
//!
//! Both share the same pipeline: clip to bounds estimated on the training
//! pool, apply an affine scaling, optionally compand, then look the value up
//! among `V - 1` interior bin edges. Bins are half-open `[e_{k-1}, e_k)`, so a
//! value sitting exactly on an edge belongs to the higher bin. Detokenization
//! maps every label to the midpoint of its bin and undoes the transforms.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{mean_std, ScaleParams, SeriesMeta, TimeSeries};
use crate::tokens::{TokenSequence, Tokenizer};

/// Default clipping quantiles of the pooled training data.
pub const DEFAULT_CLIP_QUANTILES: (f64, f64) = (0.0005, 0.9995);

/// `sgn(x) ln(1 + μ|x|) / ln(1 + μ)` on `[-1, 1]`.
pub fn mu_law(x: f64, mu: f64) -> Result<f64> {
    check_domain(x)?;
    let x = x.clamp(-1.0, 1.0);
    Ok(x.signum() * (mu * x.abs()).ln_1p() / mu.ln_1p())
}

pub fn mu_law_inverse(y: f64, mu: f64) -> Result<f64> {
    check_domain(y)?;
    let y = y.clamp(-1.0, 1.0);
    Ok(y.signum() * (y.abs() * mu.ln_1p()).exp_m1() / mu)
}

fn check_domain(x: f64) -> Result<()> {
    if !(x.abs() <= 1.0 + 1e-12) {
        return Err(Error::Domain(x));
    }
    Ok(())
}

/// Linear interpolation between order statistics of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedKind {
    MuLaw { mu: f64 },
    StandardQuantile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedTokenizer {
    #[serde(flatten)]
    kind: FixedKind,
    vocab_size: usize,
    clip_lo: f64,
    clip_hi: f64,
    scale: ScaleParams,
    bin_edges: Vec<f64>,
}

fn pooled_sorted(data: &[TimeSeries]) -> Result<Vec<f64>> {
    let mut pool: Vec<f64> = data.iter().flat_map(|ts| ts.data().iter().copied()).collect();
    if pool.is_empty() {
        return Err(Error::EmptyData);
    }
    pool.sort_by(f64::total_cmp);
    Ok(pool)
}

fn clip_bounds(sorted: &[f64], (qlo, qhi): (f64, f64)) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo >= qhi {
        return Err(Error::Config(format!("clip quantiles ({qlo}, {qhi}) must satisfy 0 <= lo < hi <= 1")));
    }
    let (lo, hi) = (quantile_sorted(sorted, qlo), quantile_sorted(sorted, qhi));
    if !(lo < hi) {
        return Err(Error::DegenerateQuantiles);
    }
    Ok((lo, hi))
}

/// Fits a μ-law tokenizer: clip, max-absolute scaling, then `V` equal bins of the companded range.
///
/// `mu` defaults to `V - 1` when `None`.
pub fn fit_mu_tokenizer(
    data: &[TimeSeries],
    vocab_size: usize,
    mu: Option<f64>,
    clip_quantiles: (f64, f64),
) -> Result<FixedTokenizer> {
    if vocab_size < 2 {
        return Err(Error::InvalidVocab(vocab_size));
    }
    let mu = mu.unwrap_or((vocab_size - 1) as f64);
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    let pool = pooled_sorted(data)?;
    let (clip_lo, clip_hi) = clip_bounds(&pool, clip_quantiles)?;
    let s = pool
        .iter()
        .map(|v| v.clamp(clip_lo, clip_hi).abs())
        .fold(0.0, f64::max);
    let v = vocab_size as f64;
    let bin_edges = (1..vocab_size).map(|k| -1.0 + 2.0 * k as f64 / v).collect();
    Ok(FixedTokenizer {
        kind: FixedKind::MuLaw { mu },
        vocab_size,
        clip_lo,
        clip_hi,
        scale: ScaleParams::scalar(0.0, s)?,
        bin_edges,
    })
}

/// Fits a standard-quantile tokenizer: clip, pooled z-score, then the `k / V` empirical quantiles as edges.
pub fn fit_sq_tokenizer(data: &[TimeSeries], vocab_size: usize, clip_quantiles: (f64, f64)) -> Result<FixedTokenizer> {
    if vocab_size < 2 {
        return Err(Error::InvalidVocab(vocab_size));
    }
    let pool = pooled_sorted(data)?;
    if pool.first() == pool.last() {
        return Err(Error::DegenerateQuantiles);
    }
    let (clip_lo, clip_hi) = clip_bounds(&pool, clip_quantiles)?;
    // clipping is monotone so the pool stays sorted
    let clipped: Vec<f64> = pool.iter().map(|v| v.clamp(clip_lo, clip_hi)).collect();
    let (m, s) = mean_std(&clipped);
    let scale = ScaleParams::scalar(m, s).map_err(|_| Error::DegenerateQuantiles)?;
    let z: Vec<f64> = clipped.iter().map(|&v| (v - m) / s).collect();
    let bin_edges: Vec<f64> = (1..vocab_size)
        .map(|k| quantile_sorted(&z, k as f64 / vocab_size as f64))
        .collect();
    if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::DegenerateQuantiles);
    }
    Ok(FixedTokenizer {
        kind: FixedKind::StandardQuantile,
        vocab_size,
        clip_lo,
        clip_hi,
        scale,
        bin_edges,
    })
}

impl FixedTokenizer {
    pub fn kind(&self) -> &FixedKind {
        &self.kind
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn clip_bounds(&self) -> (f64, f64) {
        (self.clip_lo, self.clip_hi)
    }

    pub fn scale(&self) -> &ScaleParams {
        &self.scale
    }

    /// Value in the space where the bin edges live.
    pub fn transform(&self, x: f64) -> f64 {
        let z = self.scale.forward(0, x.clamp(self.clip_lo, self.clip_hi));
        match self.kind {
            FixedKind::MuLaw { mu } => {
                let z = z.clamp(-1.0, 1.0);
                z.signum() * (mu * z.abs()).ln_1p() / mu.ln_1p()
            }
            FixedKind::StandardQuantile => z,
        }
    }

    pub fn inverse_transform(&self, y: f64) -> f64 {
        let z = match self.kind {
            FixedKind::MuLaw { mu } => mu_law_inverse(y, mu).expect("bin midpoints lie in [-1, 1]"),
            FixedKind::StandardQuantile => y,
        };
        self.scale.inverse(0, z)
    }

    pub fn token_of(&self, x: f64) -> u32 {
        let y = self.transform(x);
        self.bin_edges.partition_point(|&e| e <= y) as u32
    }

    /// Outer limits of the first and last bins in transformed space.
    fn outer_bounds(&self) -> (f64, f64) {
        match self.kind {
            FixedKind::MuLaw { .. } => (-1.0, 1.0),
            FixedKind::StandardQuantile => (self.scale.forward(0, self.clip_lo), self.scale.forward(0, self.clip_hi)),
        }
    }

    /// Transformed-space midpoint of every bin.
    pub fn bin_midpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.outer_bounds();
        let mut bounds = Vec::with_capacity(self.vocab_size + 1);
        bounds.push(lo);
        bounds.extend_from_slice(&self.bin_edges);
        bounds.push(hi);
        bounds.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Detokenized value of every label in original data units.
    pub fn codebook(&self) -> Vec<f64> {
        self.bin_midpoints().into_iter().map(|y| self.inverse_transform(y)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let tok: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        tok.validate()?;
        Ok(tok)
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.bin_edges.len() != self.vocab_size - 1 {
            return Err(Error::Format(format!(
                "{} edges for vocabulary {}",
                self.bin_edges.len(),
                self.vocab_size
            )));
        }
        if self.bin_edges.windows(2).any(|w| !(w[0] < w[1])) || !(self.clip_lo < self.clip_hi) {
            return Err(Error::Format("bin edges or clip bounds are not increasing".into()));
        }
        if let FixedKind::MuLaw { .. } = self.kind {
            if self.bin_edges.iter().any(|e| e.abs() >= 1.0) {
                return Err(Error::Format("mu-law edges must lie in (-1, 1)".into()));
            }
        }
        Ok(())
    }
}

impl Tokenizer for FixedTokenizer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn name(&self) -> String {
        match self.kind {
            FixedKind::MuLaw { .. } => format!("mu-law-{}", self.vocab_size),
            FixedKind::StandardQuantile => format!("sq-{}", self.vocab_size),
        }
    }

    fn tokenize(&self, ts: &TimeSeries) -> Result<TokenSequence> {
        let labels = ts.data().iter().map(|&x| self.token_of(x)).collect();
        TokenSequence::new(labels, ts.channels(), ts.samples(), self.vocab_size, self.name())
    }

    fn detokenize(&self, tokens: &TokenSequence, meta: &SeriesMeta) -> Result<TimeSeries> {
        if tokens.vocab_size() != self.vocab_size {
            return Err(Error::VocabMismatch {
                expected: self.vocab_size,
                actual: tokens.vocab_size(),
            });
        }
        let book = self.codebook();
        let channels = tokens
            .iter_channels()
            .map(|row| row.iter().map(|&l| book[l as usize]).collect())
            .collect();
        meta.build(channels)
    }
}
