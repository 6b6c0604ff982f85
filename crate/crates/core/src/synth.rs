//! Deterministic synthetic recordings built from resonator-filtered noise.
//!
//! Every (subject, channel) pair draws from its own ChaCha stream derived
//! from the master seed, so adding subjects or channels never changes the
//! signals already generated for lower indices.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{standardize, TimeSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    /// Centre frequency in Hz.
    pub frequency: f64,
    /// RMS amplitude before the final standardization.
    pub amplitude: f64,
    /// -3 dB bandwidth of the resonator in Hz.
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate: f64,
    pub oscillators: Vec<Oscillator>,
    pub noise_sigma: f64,
    pub subject_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            n_channels: 8,
            n_samples: 60 * 250,
            sample_rate: 250.0,
            oscillators: vec![
                Oscillator {
                    frequency: 10.0,
                    amplitude: 1.0,
                    bandwidth: 1.5,
                },
                Oscillator {
                    frequency: 2.0,
                    amplitude: 0.5,
                    bandwidth: 2.0,
                },
                Oscillator {
                    frequency: 20.0,
                    amplitude: 0.3,
                    bandwidth: 3.0,
                },
            ],
            noise_sigma: 0.3,
            subject_jitter: 0.1,
            seed: 0,
        }
    }
}

const PARAM_STREAM: u32 = u32::MAX;

pub(crate) fn substream(seed: u64, subject: u32, slot: u32) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 32) | slot as u64);
    rng
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_subjects == 0 || self.n_channels == 0 || self.n_samples == 0 {
            return bad("subject, channel and sample counts must be positive".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad(format!("sample rate {} must be positive", self.sample_rate));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.subject_jitter) {
            return bad(format!("subject_jitter {} must lie in [0, 1)", self.subject_jitter));
        }
        let nyquist = self.sample_rate / 2.0;
        for o in &self.oscillators {
            if !(o.frequency > 0.0 && o.frequency * (1.0 + self.subject_jitter) < nyquist) {
                return bad(format!(
                    "oscillator at {} Hz (jitter {}) must stay below Nyquist {nyquist} Hz",
                    o.frequency, self.subject_jitter
                ));
            }
            if !(o.bandwidth > 0.0 && o.amplitude >= 0.0) {
                return bad(format!(
                    "oscillator at {} Hz needs positive bandwidth and non-negative amplitude",
                    o.frequency
                ));
            }
        }
        if self.oscillators.iter().all(|o| o.amplitude == 0.0) && self.noise_sigma == 0.0 {
            return bad("spec would produce constant channels".into());
        }
        Ok(())
    }

    /// Oscillator parameters after jitter: `[channel][oscillator]`.
    pub fn subject_oscillators(&self, subject: u32) -> Vec<Vec<Oscillator>> {
        let j = self.subject_jitter;
        let mut rng = substream(self.seed, subject, PARAM_STREAM);
        let draw = |rng: &mut ChaCha20Rng| 1.0 + j * (2.0 * rng.random::<f64>() - 1.0);
        let shared: Vec<Oscillator> = self
            .oscillators
            .iter()
            .map(|o| Oscillator {
                frequency: o.frequency * draw(&mut rng),
                amplitude: o.amplitude * draw(&mut rng),
                bandwidth: o.bandwidth,
            })
            .collect();
        (0..self.n_channels)
            .map(|_| {
                shared
                    .iter()
                    .map(|o| Oscillator {
                        amplitude: o.amplitude * draw(&mut rng),
                        ..o.clone()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Unit-variance narrow-band noise from a two-pole resonator driven by white noise.
pub fn resonator_noise(rng: &mut impl Rng, n: usize, frequency: f64, bandwidth: f64, sample_rate: f64) -> Vec<f64> {
    let r = (-PI * bandwidth / sample_rate).exp();
    let w = 2.0 * PI * frequency / sample_rate;
    let a1 = 2.0 * r * w.cos();
    let a2 = -r * r;
    // stationary variance of the AR(2) recursion is gain^2 * (1 - a2) / ((1 + a2)((1 - a2)^2 - a1^2))
    let gain = ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1) / (1.0 - a2)).sqrt();
    let burn_in = ((1e-6f64).ln() / r.ln()).ceil() as usize;
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        let e: f64 = rng.sample(StandardNormal);
        let y = a1 * y1 + a2 * y2 + gain * e;
        y2 = y1;
        y1 = y;
        if i >= burn_in {
            out.push(y);
        }
    }
    out
}

fn raw_channel(spec: &SyntheticSpec, subject: u32, channel: u32, oscillators: &[Oscillator]) -> Vec<f64> {
    let mut rng = substream(spec.seed, subject, channel);
    let mut x = vec![0.0; spec.n_samples];
    for o in oscillators {
        let y = resonator_noise(&mut rng, spec.n_samples, o.frequency, o.bandwidth, spec.sample_rate);
        for (xi, yi) in x.iter_mut().zip(y) {
            *xi += o.amplitude * yi;
        }
    }
    if spec.noise_sigma > 0.0 {
        for xi in &mut x {
            let e: f64 = rng.sample(StandardNormal);
            *xi += spec.noise_sigma * e;
        }
    }
    x
}

/// Generates one standardized recording per subject.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<TimeSeries>> {
    spec.validate()?;
    (0..spec.n_subjects as u32)
        .map(|s| {
            let params = spec.subject_oscillators(s);
            let channels = (0..spec.n_channels)
                .map(|c| raw_channel(spec, s, c as u32, &params[c]))
                .collect();
            let ts = TimeSeries::from_channels(channels, spec.sample_rate, s)?;
            Ok(standardize(&ts)?.0)
        })
        .collect()
}

/// One labelled, epoched trial.
#[derive(Clone, Debug)]
pub struct EvokedTrial {
    pub data: TimeSeries,
    pub label: usize,
    pub subject: u32,
    pub session: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvokedSpec {
    pub background: SyntheticSpec,
    pub n_classes: usize,
    pub n_sessions: u32,
    pub trials_per_class: usize,
    /// Trial length in samples.
    pub epoch_len: usize,
    /// Peak amplitude of the evoked response relative to the unit-variance background.
    pub evoked_amplitude: f64,
}

/// Generates epoched trials where each class adds its own transient
/// (a Gaussian-windowed burst with class-specific latency, frequency and
/// channel topography) on top of ongoing background activity.
pub fn synth_evoked(spec: &EvokedSpec) -> Result<Vec<EvokedTrial>> {
    spec.background.validate()?;
    if spec.n_classes < 2 || spec.epoch_len < 2 || spec.n_sessions == 0 || spec.trials_per_class == 0 {
        return Err(Error::InvalidSpec("evoked spec needs >= 2 classes, sessions, trials and epoch samples".into()));
    }
    let bg = &spec.background;
    let fs = bg.sample_rate;
    let mut class_rng = substream(bg.seed, u32::MAX, PARAM_STREAM);
    let templates: Vec<Vec<Vec<f64>>> = (0..spec.n_classes)
        .map(|k| {
            let latency = (0.25 + 0.5 * (k as f64 + 0.5) / spec.n_classes as f64) * spec.epoch_len as f64 / fs;
            let freq = 3.0 + 4.0 * k as f64;
            let width = 0.1 * spec.epoch_len as f64 / fs;
            (0..bg.n_channels)
                .map(|_| {
                    let gain = 2.0 * class_rng.random::<f64>() - 1.0;
                    (0..spec.epoch_len)
                        .map(|i| {
                            let t = i as f64 / fs - latency;
                            gain * (-(t * t) / (2.0 * width * width)).exp() * (2.0 * PI * freq * t).cos()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let total_per_session = spec.n_classes * spec.trials_per_class;
    let mut out = Vec::new();
    for subject in 0..bg.n_subjects as u32 {
        let params = bg.subject_oscillators(subject);
        for session in 0..spec.n_sessions {
            let mut trial_rng = substream(bg.seed ^ 0x5eed_0f_7a1a, subject, session);
            for n in 0..total_per_session {
                let label = n % spec.n_classes;
                let mut channels = Vec::with_capacity(bg.n_channels);
                for c in 0..bg.n_channels {
                    let mut x = vec![0.0; spec.epoch_len];
                    for o in &params[c] {
                        let y = resonator_noise(&mut trial_rng, spec.epoch_len, o.frequency, o.bandwidth, fs);
                        for (xi, yi) in x.iter_mut().zip(y) {
                            *xi += o.amplitude * yi;
                        }
                    }
                    for (i, xi) in x.iter_mut().enumerate() {
                        let e: f64 = trial_rng.sample(StandardNormal);
                        *xi += bg.noise_sigma * e + spec.evoked_amplitude * templates[label][c][i];
                    }
                    channels.push(x);
                }
                out.push(EvokedTrial {
                    data: TimeSeries::from_channels(channels, fs, subject)?,
                    label,
                    subject,
                    session,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tone() -> SyntheticSpec {
        SyntheticSpec {
            n_subjects: 3,
            n_channels: 2,
            n_samples: 2500,
            sample_rate: 250.0,
            oscillators: vec![Oscillator {
                frequency: 10.0,
                amplitude: 1.0,
                bandwidth: 1.0,
            }],
            noise_sigma: 0.0,
            subject_jitter: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&one_tone()).unwrap();
        let b = synth_generate(&one_tone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adding_subjects_keeps_earlier_ones() {
        let mut spec = one_tone();
        let few = synth_generate(&spec).unwrap();
        spec.n_subjects = 5;
        let more = synth_generate(&spec).unwrap();
        assert_eq!(&more[..3], &few[..]);
    }

    #[test]
    fn zero_jitter_shares_parameters() {
        let spec = one_tone();
        let p0 = spec.subject_oscillators(0);
        let p2 = spec.subject_oscillators(2);
        assert_eq!(p0, p2);
        let data = synth_generate(&spec).unwrap();
        assert_ne!(data[0].channel(0), data[1].channel(0));
    }

    #[test]
    fn output_is_standardized() {
        for ts in synth_generate(&one_tone()).unwrap() {
            for ch in ts.iter_channels() {
                let (m, s) = crate::series::mean_std(ch);
                assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = one_tone();
        spec.oscillators[0].frequency = 130.0;
        assert!(synth_generate(&spec).is_err());
        let mut spec = one_tone();
        spec.subject_jitter = 1.0;
        assert!(synth_generate(&spec).is_err());
        let mut spec = one_tone();
        spec.noise_sigma = -0.1;
        assert!(synth_generate(&spec).is_err());
    }

    #[test]
    fn resonator_has_unit_variance() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let y = resonator_noise(&mut rng, 200_000, 10.0, 2.0, 250.0);
        let (_, s) = crate::series::mean_std(&y);
        assert!((s - 1.0).abs() < 0.05, "std {s}");
    }

    #[test]
    fn evoked_trials_are_labelled() {
        let spec = EvokedSpec {
            background: SyntheticSpec {
                n_subjects: 2,
                n_channels: 3,
                ..one_tone()
            },
            n_classes: 4,
            n_sessions: 2,
            trials_per_class: 3,
            epoch_len: 50,
            evoked_amplitude: 2.0,
        };
        let trials = synth_evoked(&spec).unwrap();
        assert_eq!(trials.len(), 2 * 2 * 4 * 3);
        assert_eq!(trials.iter().filter(|t| t.label == 3).count(), 2 * 2 * 3);
        assert!(trials.iter().all(|t| t.data.channels() == 3 && t.data.samples() == 50));
    }
}
