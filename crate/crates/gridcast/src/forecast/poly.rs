//! Piece-wise polynomial trend fitting over a sliding window of recent
//! observations, refitted at every step.

use std::collections::VecDeque;

use super::{FitError, Forecast, Forecaster, ModelState};
use crate::stats;

/// A polynomial fitted by ordinary least squares to (index, duration)
/// points.
#[derive(Debug, Clone)]
pub struct PolyTrendModel {
    pub order: usize,
    pub window: usize,
    /// Ascending powers: coefficients[k] multiplies x^k.
    pub coefficients: Vec<f64>,
    /// Degrees-of-freedom adjusted root mean square of fit residuals.
    pub residual_rms: f64,
}

impl PolyTrendModel {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Least-squares polynomial fit via the normal equations. Indices must be
/// strictly increasing; duplicate indices make the system singular. Callers
/// are expected to use small window-local indices (conditioning degrades
/// quickly with large index magnitudes at high orders).
pub fn fit_poly_trend(points: &[(f64, f64)], order: usize) -> Result<PolyTrendModel, FitError> {
    let n = points.len();
    let k = order + 1;
    if n < k {
        return Err(FitError::NeedMoreData { needed: k, got: n });
    }

    // Normal equations: (X^T X) beta = X^T y with X[i][j] = x_i^j.
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for &(x, y) in points {
        let mut powers = Vec::with_capacity(2 * k - 1);
        let mut p = 1.0;
        for _ in 0..2 * k - 1 {
            powers.push(p);
            p *= x;
        }
        for r in 0..k {
            for c in 0..k {
                xtx[r][c] += powers[r + c];
            }
            xty[r] += powers[r] * y;
        }
    }
    let coefficients = stats::solve_linear(xtx, xty).ok_or(FitError::Singular)?;

    let model = PolyTrendModel {
        order,
        window: n,
        coefficients,
        residual_rms: 0.0,
    };
    let ssr: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - model.evaluate(x);
            r * r
        })
        .sum();
    let dof = (n - k).max(1) as f64;
    Ok(PolyTrendModel {
        residual_rms: (ssr / dof).sqrt(),
        ..model
    })
}

/// Ensemble wrapper: refits the polynomial over the trailing window at each
/// observation and extrapolates for forecasts. The fit uses window-local
/// indices 0..m-1, so a forecast h steps ahead evaluates at m-1+h.
pub struct PolyTrendForecaster {
    order: usize,
    window: usize,
    buf: VecDeque<f64>,
    model: Option<PolyTrendModel>,
}

impl PolyTrendForecaster {
    pub fn new(order: usize, window: usize) -> Self {
        assert!(window >= order + 1, "window must be at least order + 1");
        Self {
            order,
            window,
            buf: VecDeque::with_capacity(window),
            model: None,
        }
    }
}

impl Forecaster for PolyTrendForecaster {
    fn name(&self) -> String {
        format!("poly({},{})", self.order, self.window)
    }

    fn observe(&mut self, value: f64) {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(value);
        if self.buf.len() >= self.order + 1 {
            let points: Vec<(f64, f64)> = self
                .buf
                .iter()
                .enumerate()
                .map(|(i, &y)| (i as f64, y))
                .collect();
            self.model = fit_poly_trend(&points, self.order).ok();
        }
    }

    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast> {
        let m = self.model.as_ref()?;
        let x = (self.buf.len() - 1) as f64 + horizon as f64;
        let se = m.residual_rms * (horizon as f64).sqrt();
        Some(Forecast::gaussian(m.evaluate(x), se, confidence, horizon))
    }

    fn state(&self) -> ModelState {
        ModelState::Poly {
            order: self.order,
            window: self.window,
            coefficients: self.model.as_ref().map(|m| m.coefficients.clone()).unwrap_or_default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn exact_line() {
        let m = fit_poly_trend(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)], 1).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-9);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-9);
        assert!((m.evaluate(3.0) - 7.0).abs() < 1e-9);
        assert!(m.residual_rms < 1e-9);
    }

    #[test]
    fn constant_fit() {
        let m = fit_poly_trend(&[(0.0, 2.0), (1.0, 2.0), (2.0, 2.0)], 0).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_indices_are_singular() {
        let err = fit_poly_trend(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)], 1);
        assert_eq!(err.unwrap_err(), FitError::Singular);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            fit_poly_trend(&[(0.0, 1.0), (1.0, 2.0)], 3),
            Err(FitError::NeedMoreData { needed: 4, got: 2 })
        ));
    }

    /// Independent check: solve the same normal equations with a
    /// brute-force Gauss-Jordan written here, on noisy cubic data.
    #[test]
    fn matches_independent_normal_equation_solve() {
        let mut rng = SplitMix64::new(2024);
        let points: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let x = i as f64;
                let y = 5.0 + 2.0 * x - 0.3 * x * x + 0.05 * x * x * x + rng.normal();
                (x, y)
            })
            .collect();
        let m = fit_poly_trend(&points, 3).unwrap();

        // Reference: build X^T X / X^T y explicitly and invert by
        // Gauss-Jordan with full row operations.
        let k = 4;
        let mut aug = vec![vec![0.0f64; k + 1]; k];
        for &(x, y) in &points {
            for r in 0..k {
                for c in 0..k {
                    aug[r][c] += x.powi((r + c) as i32);
                }
                aug[r][k] += x.powi(r as i32) * y;
            }
        }
        for col in 0..k {
            let pivot_row = (col..k).max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap()).unwrap();
            aug.swap(col, pivot_row);
            let pv = aug[col][col];
            for c in 0..=k {
                aug[col][c] /= pv;
            }
            for r in 0..k {
                if r != col {
                    let f = aug[r][col];
                    for c in 0..=k {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        for j in 0..k {
            let reference = aug[j][k];
            let rel = (m.coefficients[j] - reference).abs() / reference.abs().max(1e-12);
            assert!(rel < 1e-9, "coefficient {j}: {} vs {reference}", m.coefficients[j]);
        }
    }

    /// Normal-equation check: residuals are orthogonal to design columns.
    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = SplitMix64::new(7);
        let points: Vec<(f64, f64)> = (0..12)
            .map(|i| (i as f64, 100.0 + 3.0 * i as f64 + 10.0 * rng.normal()))
            .collect();
        let m = fit_poly_trend(&points, 2).unwrap();
        let residuals: Vec<f64> = points.iter().map(|&(x, y)| y - m.evaluate(x)).collect();
        for j in 0..=2 {
            let col: Vec<f64> = points.iter().map(|&(x, _)| x.powi(j)).collect();
            let dot: f64 = col.iter().zip(&residuals).map(|(a, b)| a * b).sum();
            let scale: f64 = col.iter().map(|c| c * c).sum::<f64>().sqrt()
                * residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
            assert!(dot.abs() < 1e-6 * scale.max(1.0), "column {j} dot {dot}");
        }
    }

    #[test]
    fn forecaster_tracks_linear_trend() {
        let mut f = PolyTrendForecaster::new(1, 10);
        for i in 0..10 {
            f.observe(10.0 + 2.0 * i as f64);
        }
        let fc = f.forecast(1, 0.9).unwrap();
        assert!((fc.point - 30.0).abs() < 1e-9);
        let fc3 = f.forecast(3, 0.9).unwrap();
        assert!((fc3.point - 34.0).abs() < 1e-9);
        assert!(fc3.width() >= fc.width());
    }
}
