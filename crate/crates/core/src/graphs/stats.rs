//! Correlation, divergence and histogram helpers shared by the builders.

use crate::error::{Error, Result};

/// Pearson correlation coefficient, clamped to `[-1, 1]`.
///
/// A zero-variance argument has no measurable correlation and yields 0.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "pearson",
            format!("length mismatch: {} vs {}", a.len(), b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::invalid("pearson", "needs at least two values"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

const KL_SMOOTHING: f64 = 1e-10;

/// `KL(p || q)` in nats. `q` is smoothed by an additive `1e-10` per entry
/// and renormalised so empty bins stay finite; terms with `p_i = 0` vanish.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(
            "kl_divergence",
            format!("length mismatch: {} vs {}", p.len(), q.len()),
        ));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 || v.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid(
                "kl_divergence",
                format!("{name} is not a probability vector (sum {s})"),
            ));
        }
    }
    let z = 1.0 + KL_SMOOTHING * q.len() as f64;
    Ok(p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / ((qi + KL_SMOOTHING) / z)).ln())
        .sum())
}

/// `(KL(p||q) + KL(q||p)) / 2`.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(0.5 * (kl_divergence(p, q)? + kl_divergence(q, p)?))
}

/// Equal-width histogram with counts as heights.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    pub heights: Vec<f64>,
    /// Set when the value range was empty (`lo == hi`); the histogram then
    /// holds a single bin.
    pub degenerate: bool,
}

impl Histogram {
    /// Heights normalised to a probability vector.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.heights.iter().sum();
        self.heights.iter().map(|h| h / total).collect()
    }
}

/// Histogram of `series` over `bins` equal-width bins spanning `[lo, hi]`.
/// The last bin is closed on the right; values outside the range are
/// clamped into the edge bins.
pub fn histogram(series: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if series.is_empty() {
        return Err(Error::invalid("histogram", "empty series"));
    }
    if bins < 1 || !(lo <= hi) {
        return Err(Error::invalid(
            "histogram",
            format!("invalid bins {bins} or range [{lo}, {hi}]"),
        ));
    }
    if lo == hi {
        return Ok(Histogram {
            edges: vec![lo, hi],
            centers: vec![lo],
            heights: vec![series.len() as f64],
            degenerate: true,
        });
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
    let centers = (0..bins).map(|b| lo + width * (b as f64 + 0.5)).collect();
    let mut heights = vec![0.0; bins];
    for &v in series {
        let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        heights[b] += 1.0;
    }
    Ok(Histogram {
        edges,
        centers,
        heights,
        degenerate: false,
    })
}

/// Sample variance (population form) of `values`; `None` when fewer than
/// two values are given.
pub(crate) fn variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    Some(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(pearson(&x, &x).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap(), -1.0);
        // sum dxdy = 3, sum dx^2 = 2, sum dy^2 = 14/3
        let expected = 3.0 / (2.0f64.sqrt() * (14.0f64 / 3.0).sqrt());
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.98198).abs() < 1e-5);
    }

    #[test]
    fn pearson_constant_vector_is_zero() {
        assert_eq!(pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-9);
        let kl = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((kl - 0.5 * (25.0f64 / 9.0).ln()).abs() < 1e-8);
        assert!((kl - 0.51083).abs() < 1e-5);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_with_empty_bins_is_finite() {
        let v = kl_divergence(&[0.5, 0.5, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0, 0.0, 1.0, 1.0], 2, 0.0, 1.0).unwrap();
        assert_eq!(h.heights, vec![2.0, 2.0]);
        assert_eq!(h.centers, vec![0.25, 0.75]);

        let h = histogram(&[0.0, 0.1, 0.9], 3, 0.0, 0.9).unwrap();
        assert_eq!(h.heights, vec![2.0, 0.0, 1.0]);

        let h = histogram(&[3.0, 3.0], 5, 3.0, 3.0).unwrap();
        assert!(h.degenerate);
        assert_eq!(h.heights, vec![2.0]);
    }
}
