//! Integer token sequences and the `NTK1` file format.
//!
//! ```text
//! "NTK1" | u32 vocab | u32 channels | u64 samples | channels * samples u32 labels, channel-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::ByteReader;
use crate::series::{SeriesMeta, TimeSeries};

pub const NTK_MAGIC: &[u8; 4] = b"NTK1";

/// Channels × samples labels drawn from a vocabulary of `vocab_size` tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    labels: Vec<u32>,
    channels: usize,
    samples: usize,
    vocab_size: usize,
    provenance: String,
}

impl TokenSequence {
    pub fn new(labels: Vec<u32>, channels: usize, samples: usize, vocab_size: usize, provenance: impl Into<String>) -> Result<Self> {
        if labels.len() != channels * samples {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {channels}x{samples}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= vocab_size) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                vocab: vocab_size,
            });
        }
        Ok(Self {
            labels,
            channels,
            samples,
            vocab_size,
            provenance: provenance.into(),
        })
    }

    pub fn from_channels(rows: Vec<Vec<u32>>, vocab_size: usize, provenance: impl Into<String>) -> Result<Self> {
        let channels = rows.len();
        let samples = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != samples) {
            return Err(Error::ShapeMismatch("token rows have unequal lengths".into()));
        }
        Self::new(rows.concat(), channels, samples, vocab_size, provenance)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn channel(&self, c: usize) -> &[u32] {
        &self.labels[c * self.samples..(c + 1) * self.samples]
    }

    pub fn iter_channels(&self) -> impl Iterator<Item = &[u32]> {
        self.labels.chunks_exact(self.samples.max(1))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.labels.len());
        out.extend_from_slice(NTK_MAGIC);
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples as u64).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != NTK_MAGIC {
            return Err(Error::Format("bad magic, expected NTK1".into()));
        }
        let vocab = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let samples = usize::try_from(r.u64()?).map_err(|_| Error::Format("sample count overflows".into()))?;
        let n = channels
            .checked_mul(samples)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("shape overflows".into()))?;
        let payload = r.take(n)?;
        r.finish()?;
        let labels = payload
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(labels, channels, samples, vocab, "file").map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let seq = Self::from_bytes(&fs::read(p)?)?;
        Ok(seq.with_provenance(p.display().to_string()))
    }

    /// Occurrence count of every label, indexed by label.
    pub fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.vocab_size];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Shared surface of the fixed and learnable tokenizers.
pub trait Tokenizer {
    /// Size of the label space emitted by [`Tokenizer::tokenize`].
    fn vocab_size(&self) -> usize;

    /// Short identifier recorded as the provenance of emitted sequences.
    fn name(&self) -> String;

    fn tokenize(&self, ts: &TimeSeries) -> Result<TokenSequence>;

    fn detokenize(&self, tokens: &TokenSequence, meta: &SeriesMeta) -> Result<TimeSeries>;
}
