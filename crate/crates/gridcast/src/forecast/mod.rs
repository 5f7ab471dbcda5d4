//! Per-class one-step-ahead execution-time prediction with confidence
//! intervals: polynomial trend, exponential smoothing, mean/median
//! baselines, and AR/MA/ARMA/ARIMA models.

use serde::Serialize;
use thiserror::Error;

pub mod arma;
pub mod baseline;
pub mod poly;
pub mod smoothing;

pub use arma::{fit_ar_yule_walker, fit_arma, forecast_arma, select_order, ArmaForecaster, ArmaModel, ArmaOrder, OrderPolicy};
pub use baseline::{baseline_estimate, BaselineForecaster, BaselineKind};
pub use poly::{fit_poly_trend, PolyTrendForecaster, PolyTrendModel};
pub use smoothing::{smoothing_update, SmoothingForecaster, SmoothingKind, SmoothingModel};

/// A point prediction with a central interval at the stated confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub point: f64,
    pub std_error: f64,
    pub lo: f64,
    pub hi: f64,
    /// Confidence level of (lo, hi), in (0, 1).
    pub confidence: f64,
    /// Steps ahead this forecast targets.
    pub horizon: usize,
}

impl Forecast {
    /// Builds a Gaussian central interval `point ± z(c) * std_error`.
    pub fn gaussian(point: f64, std_error: f64, confidence: f64, horizon: usize) -> Self {
        let z = crate::stats::z_for_confidence(confidence);
        Forecast {
            point,
            std_error,
            lo: point - z * std_error,
            hi: point + z * std_error,
            confidence,
            horizon,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need more data: have {got}, need {needed}")]
    NeedMoreData { needed: usize, got: usize },
    #[error("fit failed: singular system (constant or degenerate series)")]
    Singular,
    #[error("fit rejected: autoregressive part is non-stationary")]
    NonStationary,
    #[error("order selection failed: no grid member could be fitted")]
    SelectionFailed,
    #[error("invalid model order: {0}")]
    InvalidOrder(String),
}

/// Serialisable model state, used for checkpointing and reports.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelState {
    Mean { window: usize },
    Median { window: usize },
    Ses { alpha: f64, level: f64 },
    Holt { alpha: f64, beta: f64, level: f64, trend: f64 },
    Poly { order: usize, window: usize, coefficients: Vec<f64> },
    Arma {
        p: usize,
        d: usize,
        q: usize,
        phi: Vec<f64>,
        theta: Vec<f64>,
        intercept: f64,
        sigma2: f64,
    },
}

/// One model in a per-class ensemble. Implementations own their history;
/// `observe` feeds a realised duration, `forecast` predicts `horizon` steps
/// ahead, returning `None` until the model has enough data.
pub trait Forecaster: Send {
    /// Short name used in logs and CSV columns, e.g. `poly(3,10)`.
    fn name(&self) -> String;
    fn observe(&mut self, value: f64);
    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast>;
    fn state(&self) -> ModelState;
}

/// Runs the inner model on log-durations while keeping the raw-seconds
/// contract: observations are log-transformed in, forecasts exponentiated
/// out (interval endpoints map monotonically; the standard error maps by
/// the delta method).
pub struct LogTransformed<F: Forecaster> {
    inner: F,
}

impl<F: Forecaster> LogTransformed<F> {
    pub fn new(inner: F) -> Self {
        Self { inner }
    }
}

impl<F: Forecaster> Forecaster for LogTransformed<F> {
    fn name(&self) -> String {
        format!("log[{}]", self.inner.name())
    }

    fn observe(&mut self, value: f64) {
        self.inner.observe(value.max(f64::MIN_POSITIVE).ln());
    }

    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast> {
        let f = self.inner.forecast(horizon, confidence)?;
        let point = f.point.exp();
        Some(Forecast {
            point,
            std_error: point * f.std_error,
            lo: f.lo.exp(),
            hi: f.hi.exp(),
            confidence: f.confidence,
            horizon: f.horizon,
        })
    }

    fn state(&self) -> ModelState {
        self.inner.state()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_interval_brackets_point() {
        let f = Forecast::gaussian(10.0, 2.0, 0.9, 1);
        assert!(f.lo <= f.point && f.point <= f.hi);
        assert!((f.width() - 2.0 * 1.6448536 * 2.0).abs() < 1e-4);
    }

    #[test]
    fn state_serialises_with_kind_tag() {
        let s = ModelState::Holt { alpha: 0.3, beta: 0.1, level: 5.0, trend: 0.2 };
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["kind"], "holt");
        assert_eq!(json["alpha"], 0.3);
    }
}
