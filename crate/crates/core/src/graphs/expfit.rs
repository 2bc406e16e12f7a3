//! Least-squares fit of `f(x) = alpha * exp(-beta * x)` to histogram bars.

use crate::error::{Error, Result};

const GN_MAX_ITER: usize = 50;
const GN_STEP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpFit {
    pub alpha: f64,
    pub beta: f64,
    /// Root-mean-square residual of the fitted curve against all heights.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitOptions {
    /// Refine the log-linear estimate with Gauss-Newton on the original
    /// (not log-transformed) residuals.
    pub refine: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { refine: true }
    }
}

/// Fits `alpha * exp(-beta * x)` with the default options.
pub fn fit_exponential(centers: &[f64], heights: &[f64]) -> Result<ExpFit> {
    fit_exponential_with(centers, heights, FitOptions::default())
}

pub fn fit_exponential_with(centers: &[f64], heights: &[f64], opts: FitOptions) -> Result<ExpFit> {
    if centers.len() != heights.len() {
        return Err(Error::invalid(
            "fit_exponential",
            format!("{} centers vs {} heights", centers.len(), heights.len()),
        ));
    }
    let (alpha, beta) = log_linear(centers, heights)?;
    let (alpha, beta) = if opts.refine {
        gauss_newton(centers, heights, alpha, beta)
    } else {
        (alpha, beta)
    };
    Ok(ExpFit {
        alpha,
        beta,
        residual: rms_residual(centers, heights, alpha, beta),
    })
}

/// Ordinary least squares on `ln h = ln alpha - beta x` over positive bins.
fn log_linear(x: &[f64], h: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(h)
        .filter(|(_, &hi)| hi > 0.0)
        .map(|(&xi, &hi)| (xi, hi.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid(
            "fit_exponential",
            format!("need at least 2 bins with positive height, got {}", pts.len()),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit_exponential", "all positive bins share one center"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok((intercept.exp(), -slope))
}

fn cost(x: &[f64], h: &[f64], alpha: f64, beta: f64) -> f64 {
    x.iter()
        .zip(h)
        .map(|(&xi, &hi)| {
            let r = alpha * (-beta * xi).exp() - hi;
            r * r
        })
        .sum()
}

fn rms_residual(x: &[f64], h: &[f64], alpha: f64, beta: f64) -> f64 {
    (cost(x, h, alpha, beta) / x.len() as f64).sqrt()
}

/// Damped Gauss-Newton with step halving; never returns a worse fit than
/// its starting point.
fn gauss_newton(x: &[f64], h: &[f64], mut alpha: f64, mut beta: f64) -> (f64, f64) {
    let mut current = cost(x, h, alpha, beta);
    for _ in 0..GN_MAX_ITER {
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &hi) in x.iter().zip(h) {
            let e = (-beta * xi).exp();
            let r = alpha * e - hi;
            let da = e;
            let db = -alpha * xi * e;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let det = jaa * jbb - jab * jab;
        if !det.is_finite() || det.abs() <= f64::EPSILON * jaa * jbb {
            break;
        }
        let mut step_a = -(jbb * ga - jab * gb) / det;
        let mut step_b = -(jaa * gb - jab * ga) / det;
        if step_a.abs().max(step_b.abs()) < GN_STEP_TOL {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let (na, nb) = (alpha + step_a, beta + step_b);
            if na > 0.0 {
                let c = cost(x, h, na, nb);
                if c.is_finite() && c <= current {
                    alpha = na;
                    beta = nb;
                    current = c;
                    accepted = true;
                    break;
                }
            }
            step_a *= 0.5;
            step_b *= 0.5;
        }
        if !accepted || step_a.abs().max(step_b.abs()) < GN_STEP_TOL {
            break;
        }
    }
    (alpha, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_fit_is_exact() {
        let x = [0.0f64, 1.0, 2.0, 3.0];
        let h: Vec<f64> = x.iter().map(|&v| 2.0 * (-0.5 * v).exp()).collect();
        for refine in [false, true] {
            let f = fit_exponential_with(&x, &h, FitOptions { refine }).unwrap();
            assert!((f.alpha - 2.0).abs() < 1e-9, "{f:?}");
            assert!((f.beta - 0.5).abs() < 1e-9, "{f:?}");
            assert!(f.residual < 1e-9);
        }
    }

    #[test]
    fn constant_heights_have_zero_decay() {
        let f = fit_exponential(&[0.5, 1.5, 2.5], &[7.0, 7.0, 7.0]).unwrap();
        assert!((f.alpha - 7.0).abs() < 1e-12);
        assert!(f.beta.abs() < 1e-12);
    }

    #[test]
    fn zero_bins_are_skipped_in_log_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let h = [4.0, 0.0, 4.0 * (-2.0f64).exp(), 0.0];
        let f = fit_exponential_with(&x, &h, FitOptions { refine: false }).unwrap();
        assert!((f.alpha - 4.0).abs() < 1e-12);
        assert!((f.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_positive_bins() {
        assert!(fit_exponential(&[0.0, 1.0, 2.0], &[3.0, 0.0, 0.0]).is_err());
        assert!(fit_exponential(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn refinement_does_not_worsen_additive_noise_fit() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 + 0.25).collect();
        let noise = [0.3, -0.2, 0.1, -0.4, 0.2, 0.0, -0.1, 0.3, -0.3, 0.1];
        let h: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| (50.0 * (-0.4 * v).exp() + noise[i % 10]).max(0.0))
            .collect();
        let raw = fit_exponential_with(&x, &h, FitOptions { refine: false }).unwrap();
        let refined = fit_exponential(&x, &h).unwrap();
        assert!(refined.residual <= raw.residual);
        assert!((refined.alpha - 50.0).abs() / 50.0 < 0.02);
        assert!((refined.beta - 0.4).abs() / 0.4 < 0.02);
    }
}
