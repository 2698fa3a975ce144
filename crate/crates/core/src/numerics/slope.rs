//! Least-squares power-law fitting in log-log coordinates.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Result of [`fit_log_slope`]: `y ~ exp(intercept) * x^slope`.
#[derive(Clone, Copy, Debug)]
pub struct SlopeFit<F> {
    pub slope: F,
    pub intercept: F,
    /// Coefficient of determination of the fit in log-log coordinates.
    pub r2: F,
}

/// Ordinary least squares on `(ln x, ln y)`.
///
/// Requires at least three points with strictly positive coordinates.
pub fn fit_log_slope<F: Scalar>(points: &[(F, F)]) -> Result<SlopeFit<F>> {
    if points.len() < 3 {
        return Err(CoreError::InsufficientData {
            needed: 3,
            got: points.len(),
        });
    }
    let mut logs = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if !(x > F::zero()) || !(y > F::zero()) || !x.is_finite() || !y.is_finite() {
            return Err(CoreError::Domain {
                value: x.lossy().min(y.lossy()),
                domain: "strictly positive finite coordinates",
            });
        }
        logs.push((x.ln(), y.ln()));
    }
    let n = F::of(logs.len() as f64);
    let sx: F = logs.iter().map(|p| p.0).sum();
    let sy: F = logs.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    let mut syy = F::zero();
    for &(x, y) in &logs {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > F::zero()) {
        return Err(CoreError::Grid(
            "all abscissae coincide after log transform".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = (syy - slope * sxy).max(F::zero());
    let r2 = if syy > F::zero() {
        F::one() - ss_res / syy
    } else {
        F::one()
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_power_law_is_recovered_exactly() {
        let pts: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let x = i as f64 * 0.1;
                (x, x * x)
            })
            .collect();
        let fit = fit_log_slope(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() <= 1e-12);
        assert!(fit.intercept.abs() <= 1e-12);
        assert!((fit.r2 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn scaled_negative_power() {
        let pts: Vec<(f64, f64)> = (1..=50)
            .map(|i| {
                let x = 0.01 * i as f64;
                (x, 5.0 * x.powf(-0.25))
            })
            .collect();
        let fit = fit_log_slope(&pts).unwrap();
        assert!((fit.slope + 0.25).abs() <= 1e-12);
        assert!((fit.intercept - 5.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn noisy_power_law_close_with_good_r2() {
        // Deterministic low-amplitude multiplicative perturbation.
        let pts: Vec<(f64, f64)> = (1..=100)
            .map(|i| {
                let x = i as f64;
                let wiggle = 1.0 + 0.01 * (i as f64 * 0.7).sin();
                (x, 3.0 * x.powf(1.5) * wiggle)
            })
            .collect();
        let fit = fit_log_slope(&pts).unwrap();
        assert!((fit.slope - 1.5).abs() <= 0.01);
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn rejects_nonpositive_and_short_inputs() {
        assert!(fit_log_slope(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_log_slope(&[(1.0, 1.0), (2.0, -2.0), (3.0, 3.0)]).is_err());
        assert!(fit_log_slope(&[(0.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).is_err());
    }
}
