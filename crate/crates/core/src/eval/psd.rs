use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::series::TimeSeries;

/// One-sided power spectral density per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    /// Hz, ascending from 0.
    pub freqs: Vec<f64>,
    /// `power[channel][bin]`, in signal units squared per Hz.
    pub power: Vec<Vec<f64>>,
    pub window_s: f64,
    pub overlap: f64,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Power averaged over channels.
    pub fn mean_power(&self) -> Vec<f64> {
        let c = self.power.len() as f64;
        (0..self.freqs.len()).map(|k| self.power.iter().map(|p| p[k]).sum::<f64>() / c).collect()
    }

    /// Frequency of the largest channel-averaged power within `[lo, hi]` Hz.
    pub fn peak_frequency(&self, lo: f64, hi: f64) -> Option<f64> {
        let mean = self.mean_power();
        self.freqs
            .iter()
            .zip(&mean)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .fold(None, |best: Option<(f64, f64)>, (&f, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((f, p)),
            })
            .map(|(f, _)| f)
    }

    /// Rectangle-rule integral of one channel's power over frequency.
    pub fn integral(&self, channel: usize) -> f64 {
        self.power[channel].iter().sum::<f64>() * self.resolution()
    }
}

/// Periodic Hann taper.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Welch's method: Hann-tapered, mean-removed segments of `window_s` seconds
/// overlapping by `overlap`, periodograms averaged, density scaling so the
/// spectrum integrates to the signal variance.
pub fn welch_psd(ts: &TimeSeries, window_s: f64, overlap: f64) -> Result<PsdEstimate> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap {overlap} outside [0, 1)")));
    }
    let fs = ts.sample_rate();
    let n = (window_s * fs).round() as usize;
    if !(window_s > 0.0) || n < 2 {
        return Err(Error::Config(format!("window of {window_s} s is shorter than two samples")));
    }
    if n > ts.samples() {
        return Err(Error::WindowTooLong {
            window: n,
            samples: ts.samples(),
        });
    }
    let step = (n - (overlap * n as f64).round() as usize).max(1);
    let segments = (ts.samples() - n) / step + 1;
    let w = hann(n);
    let norm = fs * w.iter().map(|v| v * v).sum::<f64>();
    let bins = n / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut power = Vec::with_capacity(ts.channels());
    for x in ts.iter_channels() {
        let mut acc = vec![0.0; bins];
        for s in 0..segments {
            let seg = &x[s * step..s * step + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            for ((b, v), wi) in buf.iter_mut().zip(seg).zip(&w) {
                *b = Complex::new((v - mean) * wi, 0.0);
            }
            fft.process(&mut buf);
            for (a, z) in acc.iter_mut().zip(&buf) {
                *a += z.norm_sqr();
            }
        }
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            *a *= one_sided / (norm * segments as f64);
        }
        power.push(acc);
    }
    Ok(PsdEstimate {
        freqs: (0..bins).map(|k| k as f64 * fs / n as f64).collect(),
        power,
        window_s,
        overlap,
        segments,
    })
}

/// Euclidean distance between the spectra of each channel.
pub fn l2_psd_distance(a: &PsdEstimate, b: &PsdEstimate) -> Result<Vec<f64>> {
    if a.freqs != b.freqs {
        return Err(Error::GridMismatch);
    }
    if a.power.len() != b.power.len() {
        return Err(shape_err(format!("{} channels vs {}", a.power.len(), b.power.len())));
    }
    Ok(a.power
        .iter()
        .zip(&b.power)
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn ts(chs: Vec<Vec<f64>>, fs: f64) -> TimeSeries {
        TimeSeries::from_channels(chs, fs, 0).unwrap()
    }

    #[test]
    fn sine_peak() {
        let fs = 250.0;
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let p = welch_psd(&ts(vec![x], fs), 2.0, 0.5).unwrap();
        assert_eq!(p.resolution(), 0.5);
        let peak = p.peak_frequency(0.0, 125.0).unwrap();
        assert!((peak - 10.0).abs() <= p.resolution());
        // a unit sine has variance 1/2
        assert!((p.integral(0) - 0.5).abs() < 0.01);
    }

    #[test]
    fn white_noise_integrates_to_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let sigma = 1.7;
        let x: Vec<f64> = (0..101 * 250).map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let p = welch_psd(&ts(vec![x], 250.0), 2.0, 0.5).unwrap();
        assert!(p.segments >= 100);
        assert!((p.integral(0) - sigma * sigma).abs() / (sigma * sigma) < 0.1);
    }

    #[test]
    fn zero_and_constant_signals() {
        let p = welch_psd(&ts(vec![vec![0.0; 100], vec![3.0; 100]], 10.0), 2.0, 0.5).unwrap();
        assert!(p.power.iter().flatten().all(|&v| v == 0.0));
        assert!(p.freqs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn matches_reference_implementation() {
        // values from an independent Welch implementation (Hann, constant detrend, density)
        let x: Vec<f64> = (0..40).map(|i| (0.3 * i as f64).sin() + ((i * 7) % 5) as f64 * 0.1).collect();
        let p = welch_psd(&ts(vec![x], 4.0), 4.0, 0.5).unwrap();
        let expected = [
            0.226_548_509_139_982_4,
            0.911_381_292_555_398_1,
            0.143_315_573_890_937_63,
            0.015_266_977_907_445_902,
            0.006_245_567_320_298_777,
            0.001_878_142_294_465_737_1,
            0.031_566_507_769_910_04,
            0.023_833_220_603_787_814,
            0.000_613_937_853_929_440_7,
        ];
        assert_eq!(p.segments, 4);
        for (a, b) in p.power[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn l2_distances() {
        let a = PsdEstimate {
            freqs: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            power: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]],
            window_s: 1.0,
            overlap: 0.5,
            segments: 1,
        };
        assert_eq!(l2_psd_distance(&a, &a).unwrap(), vec![0.0]);
        let mut b = a.clone();
        b.power[0] = vec![2.0, 0.0, 3.0, 7.0, 5.5];
        // 1 + 4 + 0 + 9 + 0.25
        assert!((l2_psd_distance(&a, &b).unwrap()[0] - 14.25f64.sqrt()).abs() < 1e-12);
        let mut c = a.clone();
        c.power[0].iter_mut().for_each(|v| *v += 0.3);
        assert!((l2_psd_distance(&a, &c).unwrap()[0] - 0.3 * 5f64.sqrt()).abs() < 1e-12);
        c.freqs[4] = 4.5;
        assert!(matches!(l2_psd_distance(&a, &c), Err(Error::GridMismatch)));
    }

    #[test]
    fn window_errors() {
        let x = ts(vec![vec![1.0; 100]], 10.0);
        assert!(matches!(welch_psd(&x, 20.0, 0.5), Err(Error::WindowTooLong { window: 200, samples: 100 })));
        assert!(welch_psd(&x, 2.0, 1.0).is_err());
    }
}
