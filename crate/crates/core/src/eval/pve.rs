use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::series::TimeSeries;
use crate::tokens::TokenSequence;

/// Axes the residual and signal variances are pooled over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PveAxes {
    /// One value pooled over time and channels.
    TimeAndChannel,
    /// One value per channel, pooled over time.
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PveReport {
    pub subject: u32,
    pub axes: PveAxes,
    /// One entry for [`PveAxes::TimeAndChannel`], one per channel otherwise.
    pub values: Vec<f64>,
}

impl PveReport {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = v.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let m = s / n as f64;
    v.map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64
}

/// `100 (1 - Var(x - y) / Var(x))`.
pub fn pve_values(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err(format!("{} samples vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::EmptyData);
    }
    let vx = variance(x.iter().copied());
    if vx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let vr = variance(x.iter().zip(y).map(|(a, b)| a - b));
    Ok(100.0 * (1.0 - vr / vx))
}

pub fn pve(x: &TimeSeries, y: &TimeSeries, axes: PveAxes) -> Result<PveReport> {
    if x.channels() != y.channels() || x.samples() != y.samples() {
        return Err(shape_err(format!(
            "{}x{} original vs {}x{} reconstruction",
            x.channels(),
            x.samples(),
            y.channels(),
            y.samples()
        )));
    }
    let values = match axes {
        PveAxes::TimeAndChannel => vec![pve_values(x.data(), y.data())?],
        PveAxes::Time => (0..x.channels())
            .map(|c| pve_values(x.channel(c), y.channel(c)))
            .collect::<Result<_>>()?,
    };
    Ok(PveReport {
        subject: x.subject_id(),
        axes,
        values,
    })
}

/// Token counts sorted by decreasing frequency (ties by token id). Unused
/// tokens are included with a zero count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub tokens: Vec<u32>,
    pub counts: Vec<u64>,
}

impl TokenHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn used(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn token_histogram(tokens: &TokenSequence) -> TokenHistogram {
    let raw = tokens.counts();
    let mut order: Vec<u32> = (0..raw.len() as u32).collect();
    order.sort_by(|&a, &b| raw[b as usize].cmp(&raw[a as usize]));
    TokenHistogram {
        counts: order.iter().map(|&t| raw[t as usize]).collect(),
        tokens: order,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ts(chs: Vec<Vec<f64>>) -> TimeSeries {
        TimeSeries::from_channels(chs, 100.0, 3).unwrap()
    }

    #[test]
    fn identity_and_mean() {
        let x = ts(vec![vec![1.0, 2.0, 4.0, 8.0], vec![0.0, -1.0, 1.0, 3.0]]);
        assert_eq!(pve(&x, &x, PveAxes::TimeAndChannel).unwrap().values, vec![100.0]);
        let mean = x.data().iter().sum::<f64>() / 8.0;
        let flat = ts(vec![vec![mean; 4], vec![mean; 4]]);
        assert!(pve(&x, &flat, PveAxes::TimeAndChannel).unwrap().values[0].abs() < 1e-12);
        let r = pve(&x, &x, PveAxes::Time).unwrap();
        assert_eq!((r.subject, r.values.len()), (3, 2));
    }

    #[test]
    fn hand_computed() {
        // residual [0.5,-0.5,0,0]: variance 0.125; x variance 1.25
        let v = pve_values(&[1.0, 2.0, 3.0, 4.0], &[0.5, 2.5, 3.0, 4.0]).unwrap();
        assert!((v - 90.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_reconstruction() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        assert!((pve_values(&x, &y).unwrap() - 96.0).abs() < 0.1);
    }

    #[test]
    fn errors() {
        assert!(matches!(pve_values(&[1.0, 1.0], &[0.0, 1.0]), Err(Error::ZeroVariance)));
        assert!(matches!(pve_values(&[1.0, 2.0], &[1.0]), Err(Error::ShapeMismatch(_))));
        let a = ts(vec![vec![1.0, 2.0]]);
        let b = ts(vec![vec![1.0, 2.0, 3.0]]);
        assert!(pve(&a, &b, PveAxes::Time).is_err());
    }

    #[test]
    fn histogram_order() {
        let s = TokenSequence::from_channels(vec![vec![2, 2, 0, 3], vec![2, 0, 1, 1]], 5, "t").unwrap();
        let h = token_histogram(&s);
        assert_eq!(h.tokens, vec![2, 0, 1, 3, 4]);
        assert_eq!(h.counts, vec![3, 2, 2, 1, 0]);
        assert_eq!((h.total(), h.used()), (8, 4));
        let c = TokenSequence::from_channels(vec![vec![1; 6]], 3, "t").unwrap();
        assert_eq!(token_histogram(&c).counts, vec![6, 0, 0]);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            x in prop::collection::vec(-10f64..10.0, 3..40),
            noise in prop::collection::vec(-1f64..1.0, 40),
            a in 0.1f64..10.0,
            b in -5f64..5.0,
        ) {
            prop_assume!(variance(x.iter().copied()) > 1e-6);
            let y: Vec<f64> = x.iter().zip(&noise).map(|(v, n)| v + n).collect();
            let p = pve_values(&x, &y).unwrap();
            let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            prop_assert!((pve_values(&xa, &ya).unwrap() - p).abs() < 1e-6 * p.abs().max(1.0));
            prop_assert!(p <= 100.0);
        }
    }
}
