use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use neurotok::eval::{
    self, fingerprint, loss_convergence, pve, svg_line_plot, token_histogram, welch_psd, welch_ttest, zero_shot_probe,
    write_metrics_csv, FingerprintSet, MetricRow, ProbeInput, ProbeSplit, ProbeTrial, PveAxes,
};
use neurotok::fixedtok::{fit_mu_tokenizer, fit_sq_tokenizer};
use neurotok::gpt::{sample_prompt, GptConfig, GptDataset, GptModel, SamplerConfig, TokenWindow};
use neurotok::learntok::{segment_pool, LearnableConfig, LearnableTokenizer};
use neurotok::nnkit::Tensor;
use neurotok::synth::{synth_evoked, synth_generate, EvokedSpec, SyntheticSpec};
use neurotok::{Error, Result, SeriesMeta, TimeSeries, TokenSequence, Tokenizer};
use serde::{Deserialize, Serialize};

use crate::files::{expand, load_series, load_tokens, save_tokens, stem, AnyTokenizer};

fn json_out<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::Config(format!("missing {what}")))
}

// ---------------------------------------------------------------- synth

pub fn synth(cfg: &SyntheticSpec, out: &Path) -> Result<()> {
    for ts in synth_generate(cfg)? {
        neurotok::io::save_timeseries(out.join(format!("subject_{:03}.nts", ts.subject_id())), &ts)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- fixed tokenizers

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKindArg {
    #[default]
    Mu,
    Sq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub data: Vec<PathBuf>,
    pub kind: FixedKindArg,
    pub vocab_size: usize,
    /// μ-law only; `V - 1` when absent.
    pub mu: Option<f64>,
    pub clip_quantiles: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            kind: FixedKindArg::Mu,
            vocab_size: 108,
            mu: None,
            clip_quantiles: (0.0005, 0.9995),
        }
    }
}

pub fn fit_tokenizer(cfg: &FitConfig, out: &Path) -> Result<()> {
    let data = load_series(&cfg.data)?;
    let tok = match cfg.kind {
        FixedKindArg::Mu => fit_mu_tokenizer(&data, cfg.vocab_size, cfg.mu, cfg.clip_quantiles)?,
        FixedKindArg::Sq => fit_sq_tokenizer(&data, cfg.vocab_size, cfg.clip_quantiles)?,
    };
    tok.save(out.join("tokenizer.json"))?;
    let mut rows = Vec::new();
    for ts in &data {
        let seq = tok.tokenize(ts)?;
        let h = token_histogram(&seq);
        rows.push(MetricRow::new(Some(ts.subject_id()), None, "tokens_used", h.used() as f64));
    }
    write_metrics_csv(out.join("tokenizer_usage.csv"), &rows)
}

// ---------------------------------------------------------------- learnable tokenizer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainTokConfig {
    pub data: Vec<PathBuf>,
    pub model: LearnableConfig,
    /// Cap on the number of training segments (taken in file order).
    pub max_segments: Option<usize>,
    /// Drop unused tokens after training.
    pub refactor: bool,
}

impl Default for TrainTokConfig {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            model: LearnableConfig {
                vocab_size: 32,
                hidden: 32,
                seq_len: 200,
                epochs: 40,
                lr: 1e-2,
                grad_clip: Some(1.0),
                ..LearnableConfig::default()
            },
            max_segments: Some(2000),
            refactor: true,
        }
    }
}

pub fn train_tokenizer(cfg: &TrainTokConfig, out: &Path) -> Result<()> {
    let data = load_series(&cfg.data)?;
    let mut segments = segment_pool(&data, cfg.model.seq_len)?;
    if let Some(n) = cfg.max_segments {
        segments.truncate(n);
    }
    let refs: Vec<&[f64]> = segments.iter().map(Vec::as_slice).collect();
    let (mut tok, report) = LearnableTokenizer::train(&segments, &cfg.model)?;
    if cfg.refactor {
        tok.refactorize(&refs)?;
    }
    tok.save(out.join("tokenizer.json"))?;
    let mut rows = Vec::new();
    for (e, (loss, kappa)) in report.loss_curve.iter().zip(&report.kappas).enumerate() {
        rows.push(MetricRow::new(None, None, format!("loss_epoch_{e:03}"), *loss));
        rows.push(MetricRow::new(None, None, format!("kappa_epoch_{e:03}"), *kappa));
    }
    rows.push(MetricRow::new(None, None, "vocab_size", tok.vocab_size() as f64));
    write_metrics_csv(out.join("tokenizer_training.csv"), &rows)?;
    let epochs: Vec<f64> = (0..report.loss_curve.len()).map(|e| e as f64).collect();
    fs::write(
        out.join("tokenizer_loss.svg"),
        svg_line_plot("tokenizer training loss", "epoch", &[("loss".into(), epochs, report.loss_curve.clone())]),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- tokenize / detokenize

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizeConfig {
    pub tokenizer: Option<PathBuf>,
    pub data: Vec<PathBuf>,
}

pub fn tokenize(cfg: &TokenizeConfig, out: &Path) -> Result<()> {
    let tok = AnyTokenizer::load(&required(&cfg.tokenizer, "--tokenizer")?)?;
    for path in expand(&cfg.data, "nts")? {
        let ts = neurotok::io::load_timeseries(&path)?;
        let seq = tok.get().tokenize(&ts)?;
        save_tokens(&out.join(format!("{}.ntk", stem(&path))), &seq, &SeriesMeta::of(&ts))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetokenizeConfig {
    pub tokenizer: Option<PathBuf>,
    pub tokens: Vec<PathBuf>,
    /// Used for token files without a metadata sidecar.
    pub sample_rate: f64,
}

impl Default for DetokenizeConfig {
    fn default() -> Self {
        Self {
            tokenizer: None,
            tokens: Vec::new(),
            sample_rate: 250.0,
        }
    }
}

pub fn detokenize(cfg: &DetokenizeConfig, out: &Path) -> Result<()> {
    let tok = AnyTokenizer::load(&required(&cfg.tokenizer, "--tokenizer")?)?;
    for (path, seq, meta) in load_tokens(&cfg.tokens, cfg.sample_rate)? {
        let ts = tok.get().detokenize(&seq, &meta)?;
        neurotok::io::save_timeseries(out.join(format!("{}.nts", stem(&path))), &ts)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- reconstruction

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalReconConfig {
    /// Round-trips `data` through this tokenizer when `recon` is empty.
    pub tokenizer: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    /// Reconstructions paired with `data` by subject id.
    pub recon: Vec<PathBuf>,
}

fn by_subject(data: Vec<TimeSeries>) -> Result<BTreeMap<u32, TimeSeries>> {
    let mut m = BTreeMap::new();
    for ts in data {
        let s = ts.subject_id();
        if m.insert(s, ts).is_some() {
            return Err(Error::Config(format!("subject {s} appears twice")));
        }
    }
    Ok(m)
}

pub fn eval_recon(cfg: &EvalReconConfig, out: &Path) -> Result<()> {
    let data = by_subject(load_series(&cfg.data)?)?;
    let recon = if cfg.recon.is_empty() {
        let tok = AnyTokenizer::load(&required(&cfg.tokenizer, "--tokenizer or --recon")?)?;
        let tok = tok.get();
        data.values()
            .map(|ts| tok.detokenize(&tok.tokenize(ts)?, &SeriesMeta::of(ts)))
            .collect::<Result<Vec<_>>>()?
    } else {
        load_series(&cfg.recon)?
    };
    let recon = by_subject(recon)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (s, x) in &data {
        let y = recon
            .get(s)
            .ok_or_else(|| Error::Config(format!("no reconstruction for subject {s}")))?;
        let all = pve(x, y, PveAxes::TimeAndChannel)?;
        rows.push(MetricRow::new(Some(*s), None, "pve", all.values[0]));
        for (c, v) in pve(x, y, PveAxes::Time)?.values.into_iter().enumerate() {
            rows.push(MetricRow::new(Some(*s), Some(c), "pve", v));
        }
        summary.push(all.values[0]);
    }
    write_metrics_csv(out.join("recon.csv"), &rows)?;
    let mean = summary.iter().sum::<f64>() / summary.len() as f64;
    let min = summary.iter().copied().fold(f64::INFINITY, f64::min);
    json_out(&out.join("recon_summary.json"), &serde_json::json!({ "subjects": summary.len(), "mean_pve": mean, "min_pve": min }))
}

// ---------------------------------------------------------------- transformer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainGptConfig {
    pub tokens: Vec<PathBuf>,
    /// `vocab_size`, `n_channels` and `n_subjects` are taken from the data.
    pub model: GptConfig,
}

impl Default for TrainGptConfig {
    fn default() -> Self {
        Self {
            tokens: Vec::new(),
            model: GptConfig {
                steps: 500,
                eval_every: 50,
                ..GptConfig::default()
            },
        }
    }
}

pub fn train_gpt(cfg: &TrainGptConfig, out: &Path) -> Result<()> {
    let seqs = load_tokens(&cfg.tokens, 250.0)?;
    let vocab = seqs[0].1.vocab_size();
    if seqs.iter().any(|(_, s, _)| s.vocab_size() != vocab) {
        return Err(Error::VocabMismatch {
            expected: vocab,
            actual: seqs.iter().map(|(_, s, _)| s.vocab_size()).find(|&v| v != vocab).unwrap_or(vocab),
        });
    }
    let model_cfg = GptConfig {
        vocab_size: vocab,
        n_channels: seqs[0].1.channels(),
        n_subjects: seqs.iter().map(|(_, _, m)| m.subject_id as usize + 1).max().unwrap_or(1),
        ..cfg.model.clone()
    };
    let data = GptDataset::new(seqs.into_iter().map(|(_, s, m)| (s, m.subject_id)).collect(), model_cfg.receptive_field)?;
    let mut model = GptModel::new(model_cfg)?;
    let report = model.train(&data)?;
    model.save(out.join("gpt.json"), Some(&report))?;
    let mut rows = vec![MetricRow::new(None, None, "initial_val_loss", report.initial_val_loss)];
    for (i, step) in report.steps.iter().enumerate() {
        rows.push(MetricRow::new(None, None, format!("train_loss_step_{step:06}"), report.train_loss[i]));
        rows.push(MetricRow::new(None, None, format!("train_top1_step_{step:06}"), report.train_top1[i]));
        rows.push(MetricRow::new(None, None, format!("val_loss_step_{step:06}"), report.val_loss[i]));
        rows.push(MetricRow::new(None, None, format!("val_top1_step_{step:06}"), report.val_top1[i]));
    }
    if let Ok(a) = loss_convergence(&report.val_loss) {
        rows.push(MetricRow::new(None, None, "val_loss_asymptote", a.l_inf));
        rows.push(MetricRow::new(None, None, "val_loss_rate", a.fitted_rate));
    }
    write_metrics_csv(out.join("gpt_training.csv"), &rows)?;
    let steps: Vec<f64> = report.steps.iter().map(|&s| s as f64).collect();
    fs::write(
        out.join("gpt_loss.svg"),
        svg_line_plot(
            "next-token loss",
            "step",
            &[("train".into(), steps.clone(), report.train_loss.clone()), ("validation".into(), steps, report.val_loss.clone())],
        ),
    )?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub model: Option<PathBuf>,
    /// Training tokens; their counts drive prompt sampling.
    pub tokens: Vec<PathBuf>,
    /// Detokenizes the output when given.
    pub tokenizer: Option<PathBuf>,
    /// Defaults to every subject the model knows.
    pub subjects: Option<Vec<u32>>,
    pub steps: usize,
    pub prompt_len: usize,
    pub sampler: SamplerConfig,
    pub sample_rate: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            model: None,
            tokens: Vec::new(),
            tokenizer: None,
            subjects: None,
            steps: 1000,
            prompt_len: 16,
            sampler: SamplerConfig::default(),
            sample_rate: 250.0,
        }
    }
}

pub fn generate(cfg: &GenerateConfig, out: &Path) -> Result<()> {
    let (model, _) = GptModel::load(required(&cfg.model, "--model")?)?;
    let mc = model.config().clone();
    let seqs = load_tokens(&cfg.tokens, cfg.sample_rate)?;
    let mut counts = vec![0u64; mc.vocab_size];
    for (_, s, _) in &seqs {
        for (c, n) in counts.iter_mut().zip(s.counts()) {
            *c += n;
        }
    }
    let tok = cfg.tokenizer.as_deref().map(AnyTokenizer::load).transpose()?;
    let rate = seqs.first().map_or(cfg.sample_rate, |(_, _, m)| m.sample_rate);
    let subjects = cfg.subjects.clone().unwrap_or_else(|| (0..mc.n_subjects as u32).collect());
    if cfg.prompt_len == 0 {
        return Err(Error::Config("prompt_len must be at least 1".into()));
    }
    for s in subjects {
        let seed = cfg.sampler.seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let prompt = sample_prompt(&counts, cfg.prompt_len * mc.n_channels, seed)?;
        let prompt = TokenWindow::new(prompt, mc.n_channels, cfg.prompt_len, s)?;
        let sampler = SamplerConfig { seed, ..cfg.sampler };
        let gen = model.generate(&prompt, cfg.steps, &sampler)?;
        // the prompt is not part of the generated recording
        let body = gen.slice(cfg.prompt_len, cfg.steps);
        let seq = TokenSequence::new(body.labels, mc.n_channels, cfg.steps, mc.vocab_size, "gpt")?;
        let meta = SeriesMeta::new(rate, s);
        let name = format!("gen_subject_{s:03}");
        save_tokens(&out.join(format!("{name}.ntk")), &seq, &meta)?;
        if let Some(t) = &tok {
            let ts = t.get().detokenize(&seq, &meta)?;
            neurotok::io::save_timeseries(out.join(format!("{name}.nts")), &ts)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- generated-data evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalGenConfig {
    pub real: Vec<PathBuf>,
    pub gen: Vec<PathBuf>,
    pub window_s: f64,
    pub overlap: f64,
    pub lags: Vec<i64>,
    pub k: usize,
}

impl Default for EvalGenConfig {
    fn default() -> Self {
        Self {
            real: Vec::new(),
            gen: Vec::new(),
            window_s: 2.0,
            overlap: 0.5,
            lags: eval::default_lags(),
            k: 1,
        }
    }
}

fn paired(real: &[PathBuf], gen: &[PathBuf]) -> Result<Vec<(TimeSeries, TimeSeries)>> {
    let real = by_subject(load_series(real)?)?;
    let mut gen = by_subject(load_series(gen)?)?;
    real.into_iter()
        .map(|(s, r)| {
            let g = gen
                .remove(&s)
                .ok_or_else(|| Error::Config(format!("no generated data for subject {s}")))?;
            Ok((r, g))
        })
        .collect()
}

fn fingerprint_rows(pairs: &[(TimeSeries, TimeSeries)], lags: &[i64], k: usize, rows: &mut Vec<MetricRow>) -> Result<()> {
    if pairs.len() < 2 {
        return Ok(());
    }
    let real: Vec<TimeSeries> = pairs.iter().map(|p| p.0.clone()).collect();
    let gen: Vec<TimeSeries> = pairs.iter().map(|p| p.1.clone()).collect();
    let (fr, fg) = (FingerprintSet::from_series(&real, lags)?, FingerprintSet::from_series(&gen, lags)?);
    let score = fingerprint(&fr, &fg, k.min(pairs.len()))?;
    rows.push(MetricRow::new(None, None, format!("top{}_accuracy", score.k), score.top_k));
    if let Some(c) = score.consistency {
        rows.push(MetricRow::new(None, None, "consistency", c));
    }
    Ok(())
}

pub fn eval_gen(cfg: &EvalGenConfig, out: &Path) -> Result<()> {
    let pairs = paired(&cfg.real, &cfg.gen)?;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for (r, g) in &pairs {
        let s = r.subject_id();
        let (pr, pg) = (welch_psd(r, cfg.window_s, cfg.overlap)?, welch_psd(g, cfg.window_s, cfg.overlap)?);
        for (c, d) in eval::l2_psd_distance(&pr, &pg)?.into_iter().enumerate() {
            rows.push(MetricRow::new(Some(s), Some(c), "l2_psd", d));
        }
        let nyq = pr.freqs.last().copied().unwrap_or(0.0);
        rows.push(MetricRow::new(Some(s), None, "real_peak_hz", pr.peak_frequency(0.5, nyq).unwrap_or(f64::NAN)));
        rows.push(MetricRow::new(Some(s), None, "gen_peak_hz", pg.peak_frequency(0.5, nyq).unwrap_or(f64::NAN)));
        if plot.is_empty() {
            plot.push((format!("real s{s}"), pr.freqs.clone(), pr.mean_power()));
            plot.push((format!("generated s{s}"), pg.freqs.clone(), pg.mean_power()));
        }
    }
    fingerprint_rows(&pairs, &cfg.lags, cfg.k, &mut rows)?;
    write_metrics_csv(out.join("eval_gen.csv"), &rows)?;
    fs::write(out.join("psd.svg"), svg_line_plot("channel-averaged PSD", "Hz", &plot))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerprintConfig {
    pub real: Vec<PathBuf>,
    pub gen: Vec<PathBuf>,
    pub lags: Vec<i64>,
    /// Every k from 1 to this value is reported.
    pub max_k: usize,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            real: Vec::new(),
            gen: Vec::new(),
            lags: eval::default_lags(),
            max_k: 5,
        }
    }
}

pub fn fingerprint_cmd(cfg: &FingerprintConfig, out: &Path) -> Result<()> {
    let pairs = paired(&cfg.real, &cfg.gen)?;
    let real: Vec<TimeSeries> = pairs.iter().map(|p| p.0.clone()).collect();
    let gen: Vec<TimeSeries> = pairs.iter().map(|p| p.1.clone()).collect();
    let (fr, fg) = (FingerprintSet::from_series(&real, &cfg.lags)?, FingerprintSet::from_series(&gen, &cfg.lags)?);
    let mut rows = Vec::new();
    for k in 1..=cfg.max_k.min(pairs.len()) {
        let score = fingerprint(&fr, &fg, k)?;
        rows.push(MetricRow::new(None, None, format!("top{k}_accuracy"), score.top_k));
        if k == 1 {
            if let Some(c) = score.consistency {
                rows.push(MetricRow::new(None, None, "consistency", c));
            }
        }
    }
    for (s, d) in fr.subjects.iter().zip(eval::correlation_distances(&fr, &fg)?.iter().enumerate().map(|(i, row)| row[i])) {
        rows.push(MetricRow::new(Some(*s), None, "self_distance", d));
    }
    write_metrics_csv(out.join("fingerprint.csv"), &rows)
}

// ---------------------------------------------------------------- decoding probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeCmdConfig {
    pub model: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub evoked: EvokedSpec,
    pub probe: eval::ProbeConfig,
    /// Session held out in the within-subject split.
    pub test_session: u32,
    /// Subject held out in the new-subject split.
    pub test_subject: u32,
}

impl Default for ProbeCmdConfig {
    fn default() -> Self {
        Self {
            model: None,
            tokenizer: None,
            evoked: EvokedSpec {
                background: SyntheticSpec {
                    n_subjects: 4,
                    n_samples: 32,
                    ..SyntheticSpec::default()
                },
                n_classes: 4,
                n_sessions: 2,
                trials_per_class: 20,
                epoch_len: 32,
                evoked_amplitude: 2.0,
            },
            probe: eval::ProbeConfig::default(),
            test_session: 1,
            test_subject: 0,
        }
    }
}

pub fn probe(cfg: &ProbeCmdConfig, out: &Path) -> Result<()> {
    let (model, _) = GptModel::load(required(&cfg.model, "--model")?)?;
    let tok = AnyTokenizer::load(&required(&cfg.tokenizer, "--tokenizer")?)?;
    // trials always match the model's montage
    let mut spec = cfg.evoked.clone();
    spec.background.n_channels = model.config().n_channels;
    let trials = synth_evoked(&spec)?;
    let r = model.config().receptive_field;
    let mut raw = Vec::with_capacity(trials.len());
    let mut latent = Vec::with_capacity(trials.len());
    for t in &trials {
        let len = t.data.samples().min(r);
        let c = t.data.channels();
        let mut data = vec![0.0; len * c];
        for ch in 0..c {
            for (i, v) in t.data.channel(ch)[..len].iter().enumerate() {
                data[i * c + ch] = *v;
            }
        }
        raw.push(ProbeTrial {
            features: Tensor::new(vec![len, c, 1], data)?,
            label: t.label,
            subject: t.subject,
            session: t.session,
        });
        let seq = tok.get().tokenize(&t.data)?;
        let labels: Vec<u32> = seq.iter_channels().flat_map(|ch| ch[..len].iter().copied()).collect();
        let subject = t.subject.min(model.config().n_subjects as u32 - 1);
        let window = TokenWindow::new(labels, c, len, subject)?;
        latent.push(ProbeTrial {
            features: model.extract_features(&window)?,
            label: t.label,
            subject: t.subject,
            session: t.session,
        });
    }
    let splits = [
        ("within_subject", ProbeSplit::WithinSubject { test_session: cfg.test_session }),
        ("new_subject", ProbeSplit::NewSubject { subject: cfg.test_subject }),
    ];
    let mut rows = Vec::new();
    for (name, split) in splits {
        let base = zero_shot_probe(&raw, split, &eval::ProbeConfig { input: ProbeInput::Flattened, ..cfg.probe })?;
        let zs = zero_shot_probe(&latent, split, &eval::ProbeConfig { input: ProbeInput::Features, ..cfg.probe })?;
        rows.push(MetricRow::new(None, None, format!("{name}_baseline_accuracy"), base.accuracy));
        rows.push(MetricRow::new(None, None, format!("{name}_zero_shot_accuracy"), zs.accuracy));
    }
    write_metrics_csv(out.join("probe.csv"), &rows)
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Metric CSVs. With exactly two, per-subject values of shared metrics are compared.
    pub inputs: Vec<PathBuf>,
}

type Table = BTreeMap<String, Vec<f64>>;

fn read_metrics(path: &Path) -> Result<(Table, Table)> {
    let (mut all, mut per_subject) = (Table::new(), Table::new());
    for row in eval::read_metrics_csv(path)? {
        all.entry(row.metric.clone()).or_default().push(row.value);
        if row.subject.is_some() && row.channel.is_none() {
            per_subject.entry(row.metric).or_default().push(row.value);
        }
    }
    Ok((all, per_subject))
}

pub fn report(cfg: &ReportConfig, out: &Path) -> Result<()> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("no --inputs given".into()));
    }
    let tables = cfg.inputs.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for (i, (all, _)) in tables.iter().enumerate() {
        let mut entry = serde_json::Map::new();
        for (metric, values) in all {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(MetricRow::new(Some(i as u32), None, format!("{metric}_mean"), mean));
            rows.push(MetricRow::new(Some(i as u32), None, format!("{metric}_sd"), sd));
            entry.insert(metric.clone(), serde_json::json!({ "n": values.len(), "mean": mean, "sd": sd }));
        }
        summary.insert(cfg.inputs[i].display().to_string(), serde_json::Value::Object(entry));
    }
    if let [(_, a), (_, b)] = tables.as_slice() {
        let shared: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
        for metric in &shared {
            if let Ok(t) = welch_ttest(&a[*metric], &b[*metric]) {
                rows.push(MetricRow::new(None, None, format!("{metric}_welch_t"), t.t));
                rows.push(MetricRow::new(None, None, format!("{metric}_welch_dof"), t.dof));
                rows.push(MetricRow::new(None, None, format!("{metric}_welch_p_bonferroni"), eval::bonferroni(t.p, shared.len())));
            }
        }
    }
    write_metrics_csv(out.join("report.csv"), &rows)?;
    json_out(&out.join("report.json"), &serde_json::Value::Object(summary))
}
