//! Least-squares fitting and polynomial extrapolation helpers.

use crate::error::{Result, SandlabError};

/// Ordinary least squares y = slope·x + intercept.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// y_i - ŷ_i per input point.
    pub residuals: Vec<f64>,
}

pub fn linear_regression(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(SandlabError::DegenerateFit {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(SandlabError::DegenerateFit {
            needed: 2,
            got: points.len(),
        });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.1 - (slope * p.0 + intercept))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        residuals,
    })
}

/// Exponential-decay fit with a first-order distance correction:
/// y = log_prefactor - rate·r + correction/r, solved by 3×3 normal
/// equations. Models decays of the form A e^{-r/ℓ}(1 + b/r).
#[derive(Debug, Clone, Copy)]
pub struct CorrectedDecayFit {
    pub rate: f64,
    pub log_prefactor: f64,
    pub correction: f64,
}

pub fn fit_decay_with_inverse_correction(points: &[(f64, f64)]) -> Result<CorrectedDecayFit> {
    if points.len() < 4 {
        return Err(SandlabError::DegenerateFit {
            needed: 4,
            got: points.len(),
        });
    }
    let mut ata = crate::linalg::DenseMatrix::zeros(3);
    let mut atb = [0.0f64; 3];
    for &(r, y) in points {
        let cols = [1.0, r, 1.0 / r];
        for i in 0..3 {
            for j in 0..3 {
                *ata.at_mut(i, j) += cols[i] * cols[j];
            }
            atb[i] += cols[i] * y;
        }
    }
    let beta = ata.lu()?.solve(&atb);
    Ok(CorrectedDecayFit {
        rate: -beta[1],
        log_prefactor: beta[0],
        correction: beta[2],
    })
}

/// Neville polynomial extrapolation of (x_i, y_i) to x = target.
/// Used for a → 0 limits with x = √a, where the leading correction is
/// linear.
pub fn neville_extrapolate(points: &[(f64, f64)], target: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(SandlabError::DegenerateFit { needed: 1, got: 0 });
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let mut tab: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = tab.len();
    for level in 1..n {
        for i in 0..n - level {
            let denom = x[i] - x[i + level];
            tab[i] = ((target - x[i + level]) * tab[i] - (target - x[i]) * tab[i + 1]) / denom;
        }
    }
    Ok(tab[0])
}
