//! Multichannel recordings, per-channel affine scaling, clipping and windowing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A channels × samples recording stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    data: Vec<f64>,
    channels: usize,
    samples: usize,
    sample_rate: f64,
    subject_id: u32,
    channel_names: Vec<String>,
}

impl TimeSeries {
    /// Builds a recording from one vector per channel, with default channel names.
    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: f64, subject_id: u32) -> Result<Self> {
        let names = (0..channels.len()).map(|c| format!("ch{c}")).collect();
        Self::from_channels_named(channels, sample_rate, subject_id, names)
    }

    pub fn from_channels_named(
        channels: Vec<Vec<f64>>,
        sample_rate: f64,
        subject_id: u32,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let n_ch = channels.len();
        let samples = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != samples) {
            return Err(Error::InvalidSeries("channels have unequal lengths".into()));
        }
        let data = channels.into_iter().flatten().collect();
        Self::new(data, n_ch, samples, sample_rate, subject_id, channel_names)
    }

    /// Builds a recording from a channel-major buffer.
    pub fn new(
        data: Vec<f64>,
        channels: usize,
        samples: usize,
        sample_rate: f64,
        subject_id: u32,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if channels == 0 || samples == 0 {
            return Err(Error::InvalidSeries(format!(
                "need at least one channel and one sample, got {channels}x{samples}"
            )));
        }
        if data.len() != channels * samples {
            return Err(Error::InvalidSeries(format!(
                "buffer of {} values does not match {channels}x{samples}",
                data.len()
            )));
        }
        if channel_names.len() != channels {
            return Err(Error::InvalidSeries(format!(
                "{} channel names for {channels} channels",
                channel_names.len()
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidSeries(format!("sample rate {sample_rate} must be positive")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at channel {} sample {}",
                pos / samples,
                pos % samples
            )));
        }
        Ok(Self {
            data,
            channels,
            samples,
            sample_rate,
            subject_id,
            channel_names,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn subject_id(&self) -> u32 {
        self.subject_id
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// The raw channel-major buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn iter_channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.samples)
    }

    pub fn with_subject_id(mut self, subject_id: u32) -> Self {
        self.subject_id = subject_id;
        self
    }

    /// Returns a copy whose values are transformed sample by sample.
    ///
    /// The closure receives the channel index and the value; it must return finite values.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / self.samples, v))
            .collect();
        Self::new(
            data,
            self.channels,
            self.samples,
            self.sample_rate,
            self.subject_id,
            self.channel_names.clone(),
        )
    }

    /// Builds a new recording with the same metadata but a different payload.
    pub fn with_data(&self, data: Vec<f64>, samples: usize) -> Result<Self> {
        Self::new(
            data,
            self.channels,
            samples,
            self.sample_rate,
            self.subject_id,
            self.channel_names.clone(),
        )
    }

    /// Splits the recording into fixed-length segments.
    ///
    /// The number of segments is `floor((samples - length) / stride) + 1`.
    pub fn windows(&self, length: usize, stride: usize) -> Result<Vec<Window<'_>>> {
        if length == 0 || stride == 0 || length > self.samples {
            return Err(Error::InvalidWindow {
                length,
                stride,
                samples: self.samples,
            });
        }
        let count = (self.samples - length) / stride + 1;
        Ok((0..count)
            .map(|i| Window {
                series: self,
                start: i * stride,
                length,
            })
            .collect())
    }
}

/// A borrowed view of `length` consecutive samples of every channel.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    series: &'a TimeSeries,
    start: usize,
    length: usize,
}

impl<'a> Window<'a> {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn channels(&self) -> usize {
        self.series.channels
    }

    pub fn channel(&self, c: usize) -> &'a [f64] {
        &self.series.channel(c)[self.start..self.start + self.length]
    }

    pub fn to_series(&self) -> TimeSeries {
        let data = (0..self.channels()).flat_map(|c| self.channel(c).iter().copied()).collect();
        self.series
            .with_data(data, self.length)
            .expect("a window of a valid series is valid")
    }
}

/// Recording metadata needed to rebuild a [`TimeSeries`] from tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub sample_rate: f64,
    pub subject_id: u32,
    /// Falls back to `ch0, ch1, ...` when empty.
    #[serde(default)]
    pub channel_names: Vec<String>,
}

impl SeriesMeta {
    pub fn new(sample_rate: f64, subject_id: u32) -> Self {
        Self {
            sample_rate,
            subject_id,
            channel_names: Vec::new(),
        }
    }

    pub fn of(ts: &TimeSeries) -> Self {
        Self {
            sample_rate: ts.sample_rate(),
            subject_id: ts.subject_id(),
            channel_names: ts.channel_names().to_vec(),
        }
    }

    pub fn build(&self, channels: Vec<Vec<f64>>) -> Result<TimeSeries> {
        if self.channel_names.len() == channels.len() {
            TimeSeries::from_channels_named(channels, self.sample_rate, self.subject_id, self.channel_names.clone())
        } else {
            TimeSeries::from_channels(channels, self.sample_rate, self.subject_id)
        }
    }
}

/// Per-channel affine parameters of `x' = (x - m) / s`.
///
/// A single entry is broadcast to every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl ScaleParams {
    pub fn new(m: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if m.len() != s.len() || m.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "scale params need matching non-empty m and s, got {} and {}",
                m.len(),
                s.len()
            )));
        }
        if let Some(c) = s.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::ConstantChannel { channel: c });
        }
        Ok(Self { m, s })
    }

    pub fn scalar(m: f64, s: f64) -> Result<Self> {
        Self::new(vec![m], vec![s])
    }

    fn index(&self, channel: usize) -> usize {
        if self.m.len() == 1 {
            0
        } else {
            channel
        }
    }

    pub fn offset(&self, channel: usize) -> f64 {
        self.m[self.index(channel)]
    }

    pub fn scale(&self, channel: usize) -> f64 {
        self.s[self.index(channel)]
    }

    pub fn forward(&self, channel: usize, x: f64) -> f64 {
        let i = self.index(channel);
        (x - self.m[i]) / self.s[i]
    }

    pub fn inverse(&self, channel: usize, x: f64) -> f64 {
        let i = self.index(channel);
        x * self.s[i] + self.m[i]
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.m.len() != 1 && self.m.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "scale params for {} channels applied to {channels}",
                self.m.len()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        self.check_channels(ts.channels())?;
        ts.map_values(|c, v| self.forward(c, v))
    }

    pub fn invert(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        self.check_channels(ts.channels())?;
        ts.map_values(|c, v| self.inverse(c, v))
    }
}

/// Population mean and standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores every channel using its population mean and standard deviation.
pub fn standardize(ts: &TimeSeries) -> Result<(TimeSeries, ScaleParams)> {
    let mut m = Vec::with_capacity(ts.channels());
    let mut s = Vec::with_capacity(ts.channels());
    for (c, ch) in ts.iter_channels().enumerate() {
        let (mean, std) = mean_std(ch);
        // tolerate rounding noise in the mean of a constant channel
        if std == 0.0 || std <= 4.0 * f64::EPSILON * mean.abs() {
            return Err(Error::ConstantChannel { channel: c });
        }
        m.push(mean);
        s.push(std);
    }
    let params = ScaleParams::new(m, s)?;
    let out = params.apply(ts)?;
    Ok((out, params))
}

/// Saturates every value into `[lo, hi]`.
pub fn clip(ts: &TimeSeries, lo: f64, hi: f64) -> Result<TimeSeries> {
    if !(lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    ts.map_values(|_, v| v.clamp(lo, hi))
}
