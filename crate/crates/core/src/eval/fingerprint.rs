use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::series::TimeSeries;

/// Lags -7..=7.
pub fn default_lags() -> Vec<i64> {
    (-7..=7).collect()
}

/// Time-delay-embedding covariance features.
///
/// Row `c * lags.len() + j` of the embedded matrix is channel `c` shifted by
/// `lags[j]` (`x_c[t + lag]`), over the times where every shift is defined.
/// The features are the strict upper triangle of its covariance, row-major.
pub fn tde_features(ts: &TimeSeries, lags: &[i64]) -> Result<Vec<f64>> {
    if lags.is_empty() {
        return Err(Error::Config("at least one lag is required".into()));
    }
    let n = ts.samples() as i64;
    let lo = lags.iter().copied().min().expect("nonempty").min(0);
    let hi = lags.iter().copied().max().expect("nonempty").max(0);
    if let Some(&bad) = lags.iter().find(|l| l.abs() >= n) {
        return Err(Error::LagTooLarge {
            lag: bad,
            samples: ts.samples(),
        });
    }
    let (start, end) = (-lo, n - hi);
    if end - start < 2 {
        return Err(Error::LagTooLarge {
            lag: hi - lo,
            samples: ts.samples(),
        });
    }
    let m = (end - start) as usize;
    let rows: Vec<Vec<f64>> = ts
        .iter_channels()
        .flat_map(|x| {
            lags.iter().map(move |&l| {
                let s = (start + l) as usize;
                let seg = &x[s..s + m];
                let mean = seg.iter().sum::<f64>() / m as f64;
                seg.iter().map(|v| v - mean).collect()
            })
        })
        .collect();
    let d = rows.len();
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            let c: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            out.push(c / (m - 1) as f64);
        }
    }
    Ok(out)
}

/// Per-subject feature vectors of equal length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSet {
    pub subjects: Vec<u32>,
    pub features: Vec<Vec<f64>>,
    pub lags: Vec<i64>,
}

impl FingerprintSet {
    pub fn new(subjects: Vec<u32>, features: Vec<Vec<f64>>, lags: Vec<i64>) -> Result<Self> {
        if subjects.len() != features.len() {
            return Err(shape_err(format!("{} subjects, {} feature vectors", subjects.len(), features.len())));
        }
        if let Some(f) = features.first() {
            if features.iter().any(|g| g.len() != f.len()) {
                return Err(shape_err("feature vectors differ in length"));
            }
        }
        Ok(Self { subjects, features, lags })
    }

    /// One recording per subject.
    pub fn from_series(data: &[TimeSeries], lags: &[i64]) -> Result<Self> {
        let features = data.iter().map(|ts| tde_features(ts, lags)).collect::<Result<Vec<_>>>()?;
        Self::new(data.iter().map(TimeSeries::subject_id).collect(), features, lags.to_vec())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Pearson correlation of two equally long vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(shape_err(format!("correlation of {} and {} values", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// `d[i][j] = 1 - corr(real_i, gen_j)`.
pub fn correlation_distances(real: &FingerprintSet, gen: &FingerprintSet) -> Result<Vec<Vec<f64>>> {
    real.features
        .iter()
        .map(|f| gen.features.iter().map(|g| Ok(1.0 - pearson(f, g)?)).collect())
        .collect()
}

fn upper(m: &[Vec<f64>]) -> Vec<f64> {
    (0..m.len()).flat_map(|i| (i + 1..m.len()).map(move |j| m[i][j])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintScore {
    pub k: usize,
    pub top_k: f64,
    /// Undefined for fewer than three subjects or constant similarity structure.
    pub consistency: Option<f64>,
}

/// Top-`k` identification accuracy and inter-subject consistency.
///
/// Subject `j` counts as identified when fewer than `k` entries in column `j`
/// of the distance matrix are strictly smaller than the diagonal entry.
pub fn fingerprint(real: &FingerprintSet, gen: &FingerprintSet, k: usize) -> Result<FingerprintScore> {
    let n = real.len();
    if n == 0 || gen.len() != n {
        return Err(shape_err(format!("{} real vs {} generated subjects", n, gen.len())));
    }
    if real.features[0].len() != gen.features[0].len() {
        return Err(shape_err("real and generated features differ in length"));
    }
    if k == 0 || k > n {
        return Err(shape_err(format!("k = {k} outside 1..={n}")));
    }
    let d = correlation_distances(real, gen)?;
    let hits = (0..n)
        .filter(|&j| (0..n).filter(|&i| d[i][j] < d[j][j]).count() < k)
        .count();
    let corr = |s: &FingerprintSet| -> Result<Vec<Vec<f64>>> {
        s.features.iter().map(|a| s.features.iter().map(|b| pearson(a, b)).collect()).collect()
    };
    let consistency = if n >= 3 {
        match pearson(&upper(&corr(real)?), &upper(&corr(gen)?)) {
            Ok(r) => Some(r),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(FingerprintScore {
        k,
        top_k: hits as f64 / n as f64,
        consistency,
    })
}
