//! Simple exponential smoothing and Holt's linear-trend variant.
//!
//! ```text
//! ses:  level' = a*obs + (1-a)*level
//! holt: level' = a*obs + (1-a)*(level + trend)
//!       trend' = b*(level' - level) + (1-b)*trend
//! ```

use serde::{Deserialize, Serialize};

use super::{Forecast, Forecaster, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    Ses,
    Holt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingModel {
    pub kind: SmoothingKind,
    pub alpha: f64,
    /// Only used for holt.
    pub beta: f64,
    pub level: f64,
    pub trend: f64,
    pub residual_rms: f64,
}

impl SmoothingModel {
    pub fn new(kind: SmoothingKind, alpha: f64, beta: f64, initial_level: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha out of (0,1)");
        assert!(beta > 0.0 && beta < 1.0, "beta out of (0,1)");
        Self {
            kind,
            alpha,
            beta,
            level: initial_level,
            trend: 0.0,
            residual_rms: 0.0,
        }
    }

    /// Point forecast h steps ahead.
    pub fn point(&self, horizon: usize) -> f64 {
        match self.kind {
            SmoothingKind::Ses => self.level,
            SmoothingKind::Holt => self.level + horizon as f64 * self.trend,
        }
    }
}

/// One smoothing step; pure, returns the updated state.
pub fn smoothing_update(m: &SmoothingModel, obs: f64) -> SmoothingModel {
    let mut next = *m;
    match m.kind {
        SmoothingKind::Ses => {
            next.level = m.alpha * obs + (1.0 - m.alpha) * m.level;
        }
        SmoothingKind::Holt => {
            next.level = m.alpha * obs + (1.0 - m.alpha) * (m.level + m.trend);
            next.trend = m.beta * (next.level - m.level) + (1.0 - m.beta) * m.trend;
        }
    }
    next
}

/// Ensemble wrapper; seeds the level with the first observation and keeps a
/// running RMS of one-step residuals for interval widths.
pub struct SmoothingForecaster {
    kind: SmoothingKind,
    alpha: f64,
    beta: f64,
    model: Option<SmoothingModel>,
    sq_err_sum: f64,
    n_scored: u64,
}

impl SmoothingForecaster {
    pub fn new(kind: SmoothingKind, alpha: f64, beta: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0);
        assert!(beta > 0.0 && beta < 1.0);
        Self {
            kind,
            alpha,
            beta,
            model: None,
            sq_err_sum: 0.0,
            n_scored: 0,
        }
    }

    fn sigma(&self) -> f64 {
        if self.n_scored == 0 {
            0.0
        } else {
            (self.sq_err_sum / self.n_scored as f64).sqrt()
        }
    }
}

impl Forecaster for SmoothingForecaster {
    fn name(&self) -> String {
        match self.kind {
            SmoothingKind::Ses => format!("ses({})", self.alpha),
            SmoothingKind::Holt => format!("holt({},{})", self.alpha, self.beta),
        }
    }

    fn observe(&mut self, value: f64) {
        match self.model {
            None => {
                self.model = Some(SmoothingModel::new(self.kind, self.alpha, self.beta, value));
            }
            Some(ref m) => {
                let err = value - m.point(1);
                self.sq_err_sum += err * err;
                self.n_scored += 1;
                self.model = Some(smoothing_update(m, value));
            }
        }
    }

    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast> {
        let m = self.model.as_ref()?;
        let sigma2 = self.sigma().powi(2);
        // Standard ses/holt forecast-variance expansions; both grow with h.
        let var = match self.kind {
            SmoothingKind::Ses => {
                sigma2 * (1.0 + (horizon as f64 - 1.0) * self.alpha * self.alpha)
            }
            SmoothingKind::Holt => {
                let mut acc = 1.0;
                for j in 1..horizon {
                    let c = self.alpha + self.alpha * self.beta * j as f64;
                    acc += c * c;
                }
                sigma2 * acc
            }
        };
        Some(Forecast::gaussian(m.point(horizon), var.sqrt(), confidence, horizon))
    }

    fn state(&self) -> ModelState {
        let (level, trend) = self
            .model
            .as_ref()
            .map(|m| (m.level, m.trend))
            .unwrap_or((0.0, 0.0));
        match self.kind {
            SmoothingKind::Ses => ModelState::Ses { alpha: self.alpha, level },
            SmoothingKind::Holt => ModelState::Holt {
                alpha: self.alpha,
                beta: self.beta,
                level,
                trend,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ses(alpha: f64, level: f64) -> SmoothingModel {
        SmoothingModel::new(SmoothingKind::Ses, alpha, 0.5, level)
    }

    #[test]
    fn ses_recurrence() {
        let next = smoothing_update(&ses(0.5, 2.0), 4.0);
        assert!((next.level - 3.0).abs() < 1e-12);
    }

    #[test]
    fn holt_recurrence() {
        let m = SmoothingModel::new(SmoothingKind::Holt, 0.5, 0.5, 10.0);
        let next = smoothing_update(&m, 14.0);
        assert!((next.level - 12.0).abs() < 1e-12);
        assert!((next.trend - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_near_one_follows_observation() {
        let next = smoothing_update(&ses(0.99, 0.0), 100.0);
        assert!((next.level - 99.0).abs() < 1e-12);
    }

    #[test]
    fn holt_tracks_linear_series() {
        let mut f = SmoothingForecaster::new(SmoothingKind::Holt, 0.5, 0.5);
        for i in 0..20 {
            f.observe(10.0 + 2.0 * i as f64);
        }
        let fc = f.forecast(1, 0.9).unwrap();
        assert!((fc.point - 50.0).abs() < 0.5, "point {}", fc.point);
    }

    proptest! {
        /// The ses level is a convex combination of the history, so it can
        /// never leave the observed envelope.
        #[test]
        fn ses_level_stays_in_envelope(
            alpha in 0.01f64..0.99,
            obs in prop::collection::vec(1.0f64..10_000.0, 1..60),
        ) {
            let mut f = SmoothingForecaster::new(SmoothingKind::Ses, alpha, 0.5);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &y in &obs {
                f.observe(y);
                lo = lo.min(y);
                hi = hi.max(y);
                let level = f.forecast(1, 0.9).unwrap().point;
                prop_assert!(level >= lo - 1e-9 && level <= hi + 1e-9,
                    "level {level} outside [{lo}, {hi}]");
            }
        }

        /// Interval width never shrinks with horizon.
        #[test]
        fn interval_monotone_in_horizon(
            kind in prop::sample::select(vec![SmoothingKind::Ses, SmoothingKind::Holt]),
            obs in prop::collection::vec(1.0f64..1000.0, 5..40),
        ) {
            let mut f = SmoothingForecaster::new(kind, 0.3, 0.1);
            for &y in &obs {
                f.observe(y);
            }
            let mut prev = 0.0;
            for h in 1..=10 {
                let w = f.forecast(h, 0.9).unwrap().width();
                prop_assert!(w >= prev - 1e-12);
                prev = w;
            }
        }
    }
}
