//! Small-sample statistics for the trend checks.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HarnessError, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// One-sided one-sample t-test of `mean < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub mean: f64,
    pub t: f64,
    pub p: f64,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

pub fn t_test_negative(xs: &[f64]) -> Result<TTest> {
    if xs.len() < 2 {
        return Err(HarnessError::Statistic(
            "t-test needs at least two samples".into(),
        ));
    }
    let m = mean(xs);
    let sd = std_dev(xs);
    if sd == 0.0 {
        let p = if m < 0.0 { 0.0 } else { 1.0 };
        return Ok(TTest {
            mean: m,
            t: if m < 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            },
            p,
        });
    }
    let t = m / (sd / (xs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, xs.len() as f64 - 1.0)
        .map_err(|e| HarnessError::Statistic(e.to_string()))?;
    Ok(TTest {
        mean: m,
        t,
        p: dist.cdf(t),
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::Statistic(
            "spearman needs two equal series of length >= 2".into(),
        ));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(HarnessError::Statistic(
            "spearman undefined for a constant series".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_reference_value() {
        let xs = [-2.0, -1.0, 0.0, -1.0];
        let r = t_test_negative(&xs).unwrap();
        let sd = std_dev(&xs);
        assert!((sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let t = -1.0 / (sd / 2.0);
        assert!((r.t - t).abs() < 1e-12);
        // t = -2.449, 3 dof: p = 0.0459.
        assert!((r.p - 0.0459).abs() < 5e-4, "{}", r.p);
        assert!(r.significant(0.05));
        assert!(!t_test_negative(&[1.0, 2.0, 3.0]).unwrap().significant(0.05));
        assert!(t_test_negative(&[1.0]).is_err());
        assert!(t_test_negative(&[-1.0, -1.0]).unwrap().significant(0.05));
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap(), 1.0);
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // d = [0, 0, 1, -1, 0]: 1 - 6 * 2 / (5 * 24) = 0.9.
        assert!((spearman(&x, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap() - 0.9).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 5]).is_err());
    }
}
