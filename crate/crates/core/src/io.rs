//! `NTS1` binary recordings and CSV interchange.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NTS1" | u32 channels | u64 samples | f64 sample_rate | u32 subject_id
//!        | u32 name_len | name_len bytes of UTF-8 names joined by '\n'
//!        | channels * samples f32 values, channel-major
//! ```
//!
//! The payload is single precision, so a round trip is exact for values that
//! are already representable as `f32` and rounds everything else once.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::TimeSeries;

pub const NTS_MAGIC: &[u8; 4] = b"NTS1";

pub fn encode_timeseries(ts: &TimeSeries) -> Vec<u8> {
    let names = ts.channel_names().join("\n");
    let mut out = Vec::with_capacity(32 + names.len() + 4 * ts.data().len());
    out.extend_from_slice(NTS_MAGIC);
    out.extend_from_slice(&(ts.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(ts.samples() as u64).to_le_bytes());
    out.extend_from_slice(&ts.sample_rate().to_le_bytes());
    out.extend_from_slice(&ts.subject_id().to_le_bytes());
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    out.extend_from_slice(names.as_bytes());
    for &v in ts.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Cursor over a byte buffer that reports truncation as a format error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_timeseries(bytes: &[u8]) -> Result<TimeSeries> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != NTS_MAGIC {
        return Err(Error::Format("bad magic, expected NTS1".into()));
    }
    let channels = r.u32()? as usize;
    let samples = usize::try_from(r.u64()?).map_err(|_| Error::Format("sample count overflows".into()))?;
    let sample_rate = r.f64()?;
    let subject_id = r.u32()?;
    let name_len = r.u32()? as usize;
    let names = std::str::from_utf8(r.take(name_len)?)
        .map_err(|e| Error::Format(format!("channel names are not UTF-8: {e}")))?;
    let channel_names: Vec<String> = if channels == 0 {
        Vec::new()
    } else {
        names.split('\n').map(str::to_owned).collect()
    };
    let count = channels
        .checked_mul(samples)
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let payload = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("shape overflows".into()))?)?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    TimeSeries::new(data, channels, samples, sample_rate, subject_id, channel_names)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_timeseries(path: impl AsRef<Path>, ts: &TimeSeries) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_timeseries(ts))?;
    w.flush()?;
    Ok(())
}

pub fn load_timeseries(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_timeseries(&bytes)
}

/// Writes one column per channel with the channel names as the header row.
pub fn write_csv(path: impl AsRef<Path>, ts: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ts.channel_names())?;
    for t in 0..ts.samples() {
        w.write_record((0..ts.channels()).map(|c| ts.channel(c)[t].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>, sample_rate: f64, subject_id: u32) -> Result<TimeSeries> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Format(format!("row has {} fields, expected {}", rec.len(), names.len())));
        }
        for (col, field) in cols.iter_mut().zip(rec.iter()) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("not a number: {field:?}")))?;
            col.push(v);
        }
    }
    TimeSeries::from_channels_named(cols, sample_rate, subject_id, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TimeSeries {
        TimeSeries::from_channels_named(
            vec![vec![0.5, -1.25, 3.0], vec![1e-3, 2.0, -7.5]],
            250.0,
            7,
            vec!["left".into(), "right".into()],
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_timeseries(&sample());
        assert_eq!(&bytes[..4], b"NTS1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 250.0);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 10);
        assert_eq!(&bytes[32..42], b"left\nright");
        assert_eq!(bytes.len(), 42 + 6 * 4);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = encode_timeseries(&sample());
        assert!(matches!(decode_timeseries(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_timeseries(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.nts");
        let ts = sample();
        save_timeseries(&path, &ts).unwrap();
        let back = load_timeseries(&path).unwrap();
        assert_eq!(back.channel_names(), ts.channel_names());
        assert_eq!(encode_timeseries(&back), encode_timeseries(&ts));

        let csv_path = dir.path().join("a.csv");
        write_csv(&csv_path, &ts).unwrap();
        assert_eq!(read_csv(&csv_path, 250.0, 7).unwrap(), ts);
    }

    proptest! {
        #[test]
        fn payload_bytes_survive(vals in prop::collection::vec(-1e6f32..1e6, 1..64), fs in 1.0f64..5e3, subj in 0u32..1000) {
            let ts = TimeSeries::from_channels(vec![vals.iter().map(|&v| v as f64).collect()], fs, subj).unwrap();
            let bytes = encode_timeseries(&ts);
            let back = decode_timeseries(&bytes).unwrap();
            prop_assert_eq!(&back, &ts);
            prop_assert_eq!(encode_timeseries(&back), bytes);
        }
    }
}
