use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Two-sample t-test without the equal-variance assumption.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    for (name, x) in [("first", a), ("second", b)] {
        if x.len() < 2 {
            return Err(Error::DegenerateGroup(format!("{name} group has {} samples", x.len())));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateGroup("a group has zero variance".into()));
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let t = (ma - mb) / (sa + sb).sqrt();
    let dof = (sa + sb).powi(2) / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0);
    Ok(WelchTest { t, dof, p })
}

/// Bonferroni-adjusted p-value over `comparisons` tests.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn hand_case() {
        let r = welch_ttest(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.t + 1.5f64.sqrt()).abs() < 1e-12);
        assert!((r.dof - 4.0).abs() < 1e-12);
        assert!((r.p - 0.287_864_134_726_690_8).abs() < 1e-9);
    }

    #[test]
    fn unequal_groups_match_reference() {
        let r = welch_ttest(&[0.3, 1.9, 2.2, -0.4, 5.1], &[1.0, 1.1, 0.9, 1.3]).unwrap();
        assert!((r.t - 0.778_966_734_229_679).abs() < 1e-9);
        assert!((r.dof - 4.064_194_613_676_922).abs() < 1e-9);
        assert!((r.p - 0.478_865_552_149_302).abs() < 1e-9);
    }

    #[test]
    fn identical_groups() {
        let a = [0.2, 0.9, 1.4, 3.0];
        let r = welch_ttest(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn shifted_normals_are_significant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n0, n1) = (Normal::new(0.0, 1.0).unwrap(), Normal::new(1.0, 1.0).unwrap());
        let a: Vec<f64> = (0..100).map(|_| n0.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..100).map(|_| n1.sample(&mut rng)).collect();
        assert!(welch_ttest(&a, &b).unwrap().p < 1e-6);
    }

    #[test]
    fn degenerate_groups() {
        assert!(matches!(welch_ttest(&[1.0], &[1.0, 2.0]), Err(Error::DegenerateGroup(_))));
        assert!(matches!(welch_ttest(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateGroup(_))));
        assert_eq!(bonferroni(0.02, 3), 0.06);
        assert_eq!(bonferroni(0.5, 3), 1.0);
    }
}
