//! Input discovery, tokenizer loading and the metadata sidecars written next to token files.

use std::fs;
use std::path::{Path, PathBuf};

use neurotok::fixedtok::FixedTokenizer;
use neurotok::learntok::LearnableTokenizer;
use neurotok::{Error, Result, SeriesMeta, TimeSeries, TokenSequence, Tokenizer};

/// Files given directly, plus every `*.ext` inside given directories (sorted).
pub fn expand(paths: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == ext))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::Config(format!("input {} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no .{ext} inputs given")));
    }
    Ok(out)
}

pub fn load_series(paths: &[PathBuf]) -> Result<Vec<TimeSeries>> {
    expand(paths, "nts")?.iter().map(neurotok::io::load_timeseries).collect()
}

pub fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_string()
}

pub fn meta_path(tokens: &Path) -> PathBuf {
    tokens.with_extension("meta.json")
}

pub fn save_tokens(path: &Path, seq: &TokenSequence, meta: &SeriesMeta) -> Result<()> {
    seq.save(path)?;
    fs::write(meta_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Token files with their metadata; files without a sidecar get
/// `fallback_rate` and their position as the subject id.
pub fn load_tokens(paths: &[PathBuf], fallback_rate: f64) -> Result<Vec<(PathBuf, TokenSequence, SeriesMeta)>> {
    expand(paths, "ntk")?
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let seq = TokenSequence::load(&p)?;
            let mp = meta_path(&p);
            let meta = if mp.exists() {
                serde_json::from_str(&fs::read_to_string(mp)?)?
            } else {
                SeriesMeta::new(fallback_rate, i as u32)
            };
            Ok((p, seq, meta))
        })
        .collect()
}

pub enum AnyTokenizer {
    Fixed(FixedTokenizer),
    Learnable(Box<LearnableTokenizer>),
}

impl AnyTokenizer {
    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        match v.get("format").and_then(|f| f.as_str()) {
            Some(f) if f.starts_with("neurotok-learnable") => Ok(Self::Learnable(Box::new(LearnableTokenizer::load(path)?))),
            Some(f) => Err(Error::Format(format!("{} is a {f:?} file, not a tokenizer", path.display()))),
            None => Ok(Self::Fixed(FixedTokenizer::load(path)?)),
        }
    }

    pub fn get(&self) -> &dyn Tokenizer {
        match self {
            Self::Fixed(t) => t,
            Self::Learnable(t) => t.as_ref(),
        }
    }
}
