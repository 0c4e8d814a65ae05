//! Small regression helpers shared by checks and tests: least-squares lines
//! and log-log order fits.

use crate::error::{Error, Result};

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub rms: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateFit {
            reason: format!("need >= 2 paired samples, got {} and {}", xs.len(), ys.len()),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(Error::DegenerateFit {
            reason: "abscissae are degenerate".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss += r * r;
    }
    Ok(LineFit {
        slope,
        intercept,
        rms: (ss / n).sqrt(),
    })
}

/// Convergence order from (scale, error) pairs: slope of log error vs log scale.
/// Zero errors are clamped to the finite floor to keep exact results usable.
pub fn fit_order(scales: &[f64], errs: &[f64]) -> Result<f64> {
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    Ok(fit_line(&xs, &ys)?.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = fit_line(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, 2.0, max_relative = 1e-12);
        assert_relative_eq!(f.intercept, 1.0, max_relative = 1e-12);
        assert!(f.rms < 1e-12);
    }

    #[test]
    fn order_of_quadratic_errors() {
        let scales = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = scales.iter().map(|s| 3.0 * s * s).collect();
        let p = fit_order(&scales, &errs).unwrap();
        assert_relative_eq!(p, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(fit_line(&[1.0], &[2.0]).is_err());
        assert!(fit_line(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }
}
