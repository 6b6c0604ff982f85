use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the centred moving average applied before fitting.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurveAnalysis {
    pub losses: Vec<f64>,
    /// Centred moving average; the window shrinks at the ends.
    pub smoothed: Vec<f64>,
    /// Asymptote of the fitted `L_inf + A exp(-c t)`.
    pub l_inf: f64,
    pub amplitude: f64,
    pub fitted_rate: f64,
    /// `log((L_t - L_inf) / (L_0 - L_inf))`, where `L_t > L_inf`.
    pub log_relative: Vec<Option<f64>>,
    /// `-d/dt` of the log-relative loss by central differences.
    pub rates: Vec<Option<f64>>,
}

fn moving_average(y: &[f64], w: usize) -> Vec<f64> {
    let h = w / 2;
    (0..y.len())
        .map(|t| {
            let (a, b) = (t.saturating_sub(h), (t + h + 1).min(y.len()));
            y[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Least squares for `(L_inf, A)` at a fixed rate; returns `(sse, l_inf, a)`.
fn fit_linear(t: &[f64], y: &[f64], c: f64) -> Option<(f64, f64, f64)> {
    let n = t.len() as f64;
    let e: Vec<f64> = t.iter().map(|&t| (-c * t).exp()).collect();
    let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|v| v * v).sum::<f64>());
    let (sy, sey) = (y.iter().sum::<f64>(), e.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
    let det = n * see - se * se;
    if det.abs() < 1e-14 * n * see.max(1e-300) {
        return None;
    }
    let a = (n * sey - se * sy) / det;
    let l = (sy - a * se) / n;
    let sse = e.iter().zip(y).map(|(ei, yi)| (l + a * ei - yi).powi(2)).sum();
    Some((sse, l, a))
}

/// Rate grid search, then golden-section refinement around the best cell.
fn fit_exponential(t: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let span = t.last()? - t.first()?;
    let (lo, hi) = ((1e-3 / span).ln(), (50.0 / span).ln());
    let grid: Vec<f64> = (0..=400).map(|i| (lo + (hi - lo) * i as f64 / 400.0).exp()).collect();
    let sse = |c: f64| fit_linear(t, y, c).map_or(f64::INFINITY, |f| f.0);
    let best = (0..grid.len()).min_by(|&a, &b| sse(grid[a]).total_cmp(&sse(grid[b])))?;
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (x1, x2) = (b - g * (b - a), a + g * (b - a));
        if sse(x1) <= sse(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let c = 0.5 * (a + b);
    let c = if sse(c) <= sse(grid[best]) { c } else { grid[best] };
    let (_, l, amp) = fit_linear(t, y, c)?;
    Some((c, l, amp))
}

/// Estimates the asymptote of a per-epoch loss curve and its log-relative
/// loss and instantaneous convergence rate.
pub fn loss_convergence(curve: &[f64]) -> Result<LossCurveAnalysis> {
    if curve.len() < 3 {
        return Err(Error::DegenerateCurve(format!("{} epochs, need at least 3", curve.len())));
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCurve("non-finite loss".into()));
    }
    let (min, max) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if max - min <= 1e-12 * max.abs().max(1.0) {
        return Err(Error::DegenerateCurve("constant curve".into()));
    }
    let smoothed = moving_average(curve, SMOOTHING_WINDOW);
    // fit only where the full window is available
    let h = SMOOTHING_WINDOW / 2;
    let (t, y): (Vec<f64>, Vec<f64>) = if curve.len() >= 2 * h + 3 {
        (h..curve.len() - h).map(|i| (i as f64, smoothed[i])).unzip()
    } else {
        curve.iter().enumerate().map(|(i, &v)| (i as f64, v)).unzip()
    };
    let (c, l_inf, amplitude) =
        fit_exponential(&t, &y).ok_or_else(|| Error::DegenerateCurve("exponential fit failed".into()))?;
    if !(amplitude > 0.0) || curve[0] <= l_inf {
        return Err(Error::DegenerateCurve("curve does not decay towards an asymptote".into()));
    }
    let l0 = curve[0] - l_inf;
    let log_relative: Vec<Option<f64>> = curve
        .iter()
        .map(|&v| (v > l_inf).then(|| ((v - l_inf) / l0).ln()))
        .collect();
    let n = curve.len();
    let rates = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            match (log_relative[a], log_relative[b]) {
                (Some(x), Some(y)) => Some(-(y - x) / (b - a) as f64),
                _ => None,
            }
        })
        .collect();
    Ok(LossCurveAnalysis {
        losses: curve.to_vec(),
        smoothed,
        l_inf,
        amplitude,
        fitted_rate: c,
        log_relative,
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exponential(l_inf: f64, a: f64, c: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| l_inf + a * (-c * t as f64).exp()).collect()
    }

    #[test]
    fn recovers_exponential_rate() {
        for (l_inf, a, c, n) in [(2.0, 3.0, 0.15, 40), (0.4, 1.0, 0.05, 60), (4.6, 0.8, 0.5, 12)] {
            let r = loss_convergence(&exponential(l_inf, a, c, n)).unwrap();
            assert!((r.l_inf - l_inf).abs() < 1e-6 * a, "{} vs {l_inf}", r.l_inf);
            assert!((r.fitted_rate - c).abs() < 1e-6, "{}", r.fitted_rate);
            assert_eq!(r.log_relative[0], Some(0.0));
            for rate in r.rates[..n - 2].iter() {
                assert!((rate.unwrap() - c).abs() < 0.05 * c);
            }
        }
    }

    #[test]
    fn noisy_curve_still_fits() {
        let mut y = exponential(1.0, 2.0, 0.2, 30);
        for (i, v) in y.iter_mut().enumerate() {
            *v += 0.003 * ((i * 7 % 5) as f64 - 2.0);
        }
        let r = loss_convergence(&y).unwrap();
        assert!((r.fitted_rate - 0.2).abs() < 0.02);
        assert!((r.l_inf - 1.0).abs() < 0.02);
    }

    #[test]
    fn short_curves_fit_without_smoothing() {
        let r = loss_convergence(&exponential(1.0, 1.0, 0.7, 4)).unwrap();
        assert!((r.fitted_rate - 0.7).abs() < 1e-6);
    }

    #[test]
    fn degenerate_curves() {
        assert!(matches!(loss_convergence(&[1.0; 10]), Err(Error::DegenerateCurve(_))));
        assert!(matches!(loss_convergence(&[2.0, 1.0]), Err(Error::DegenerateCurve(_))));
        assert!(matches!(loss_convergence(&[2.0, f64::NAN, 1.0]), Err(Error::DegenerateCurve(_))));
        let rising: Vec<f64> = (0..20).map(|t| 1.0 - (-0.2 * t as f64).exp()).collect();
        assert!(loss_convergence(&rising).is_err());
    }

    #[test]
    fn smoothing_window() {
        let s = moving_average(&[0.0, 5.0, 10.0, 5.0, 0.0, 5.0], 5);
        assert_eq!(s, vec![5.0, 5.0, 4.0, 5.0, 5.0, 10.0 / 3.0]);
    }
}
