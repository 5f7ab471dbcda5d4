//! Windowed mean/median baselines. Always available after one observation,
//! which makes the median variant the ensemble's fallback model.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Forecast, Forecaster, ModelState};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Mean,
    Median,
}

/// Point estimate over a window: mean or median, with the window's sample
/// standard deviation as the forecast standard error (0 for a single
/// element). The same estimate applies at every horizon.
pub fn baseline_estimate(window: &[f64], kind: BaselineKind, confidence: f64) -> Forecast {
    assert!(!window.is_empty(), "baseline window must be non-empty");
    let point = match kind {
        BaselineKind::Mean => stats::mean(window),
        BaselineKind::Median => stats::median(window),
    };
    Forecast::gaussian(point, stats::sample_std(window), confidence, 1)
}

pub struct BaselineForecaster {
    kind: BaselineKind,
    window: usize,
    buf: VecDeque<f64>,
}

impl BaselineForecaster {
    pub fn new(kind: BaselineKind, window: usize) -> Self {
        assert!(window >= 1);
        Self {
            kind,
            window,
            buf: VecDeque::with_capacity(window),
        }
    }
}

impl Forecaster for BaselineForecaster {
    fn name(&self) -> String {
        match self.kind {
            BaselineKind::Mean => format!("mean({})", self.window),
            BaselineKind::Median => format!("median({})", self.window),
        }
    }

    fn observe(&mut self, value: f64) {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(value);
    }

    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast> {
        if self.buf.is_empty() {
            return None;
        }
        let values: Vec<f64> = self.buf.iter().copied().collect();
        let mut f = baseline_estimate(&values, self.kind, confidence);
        f.horizon = horizon;
        Some(f)
    }

    fn state(&self) -> ModelState {
        match self.kind {
            BaselineKind::Mean => ModelState::Mean { window: self.window },
            BaselineKind::Median => ModelState::Median { window: self.window },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_window() {
        let f = baseline_estimate(&[2.0, 4.0, 6.0], BaselineKind::Mean, 0.9);
        assert_eq!(f.point, 4.0);
        assert!((f.std_error - 2.0).abs() < 1e-12);
    }

    #[test]
    fn median_resists_outlier() {
        let f = baseline_estimate(&[1.0, 100.0, 2.0], BaselineKind::Median, 0.9);
        assert_eq!(f.point, 2.0);
    }

    #[test]
    fn singleton_window() {
        let f = baseline_estimate(&[7.0], BaselineKind::Mean, 0.9);
        assert_eq!(f.point, 7.0);
        assert_eq!(f.std_error, 0.0);
        assert_eq!(f.lo, 7.0);
        assert_eq!(f.hi, 7.0);
    }

    #[test]
    fn forecaster_slides_window() {
        let mut f = BaselineForecaster::new(BaselineKind::Mean, 3);
        assert!(f.forecast(1, 0.9).is_none());
        for v in [1.0, 2.0, 3.0, 4.0] {
            f.observe(v);
        }
        assert_eq!(f.forecast(1, 0.9).unwrap().point, 3.0);
    }
}
