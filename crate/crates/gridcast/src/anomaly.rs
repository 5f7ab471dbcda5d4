//! Out-of-distribution detection: flags points whose prediction error or
//! deviation from a Lowess-smoothed reference curve exceeds fixed
//! thresholds, and classifies flag runs as transients or mode-change
//! candidates with an m-of-n sustain rule.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::stats;

/// Fixed detection thresholds. Defaults: 50% prediction error, 25%
/// deviation from the smoothed curve, sustained = 4 of the last 6.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thresholds {
    pub err_threshold: f64,
    pub lowess_dev_threshold: f64,
    pub sustain_m: usize,
    pub sustain_n: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            err_threshold: 0.50,
            lowess_dev_threshold: 0.25,
            sustain_m: 4,
            sustain_n: 6,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.err_threshold <= 0.0 || self.lowess_dev_threshold <= 0.0 {
            return Err("thresholds must be positive".into());
        }
        if !(1 <= self.sustain_m && self.sustain_m <= self.sustain_n) {
            return Err("sustain rule must satisfy 1 <= m <= n".into());
        }
        Ok(())
    }
}

/// Lowess smoothing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowessConfig {
    /// Fraction of the series in each local neighbourhood, in (0, 1].
    pub fraction: f64,
    /// Bisquare residual down-weighting passes.
    pub robustness_iters: usize,
    /// Local polynomial degree, 0 or 1.
    pub degree: usize,
}

impl Default for LowessConfig {
    fn default() -> Self {
        Self {
            fraction: 0.3,
            robustness_iters: 2,
            degree: 1,
        }
    }
}

impl LowessConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err("lowess fraction must be in (0, 1]".into());
        }
        if self.degree > 1 {
            return Err("lowess degree must be 0 or 1".into());
        }
        Ok(())
    }
}

/// Which threshold(s) a point tripped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlagKinds {
    pub pred_error: bool,
    pub lowess_dev: bool,
}

impl FlagKinds {
    pub fn any(&self) -> bool {
        self.pred_error || self.lowess_dev
    }
}

impl fmt::Display for FlagKinds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.pred_error, self.lowess_dev) {
            (true, true) => write!(f, "pred_error+lowess_dev"),
            (true, false) => write!(f, "pred_error"),
            (false, true) => write!(f, "lowess_dev"),
            (false, false) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyEvent {
    None,
    Transient,
    ModeChangeCandidate,
}

impl fmt::Display for AnomalyEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnomalyEvent::None => Ok(()),
            AnomalyEvent::Transient => write!(f, "transient"),
            AnomalyEvent::ModeChangeCandidate => write!(f, "mode_change_candidate"),
        }
    }
}

/// Detector verdict for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnomalyFlag {
    pub index: usize,
    pub kinds: FlagKinds,
    pub event: AnomalyEvent,
}

/// Cleveland's robust locally weighted regression over an evenly indexed
/// series.
///
/// For each point, the nearest `ceil(fraction * n)` neighbours form a
/// contiguous window (grown toward whichever side is closer; ties extend
/// left). Points are weighted by tricube of distance over the window's
/// maximum distance, the local polynomial of the configured degree is
/// fitted, and `robustness_iters` passes of bisquare down-weighting with
/// scale `6 * median(|residual|)` are applied. Degenerate neighbourhoods
/// fall back to the weighted mean.
pub fn lowess_smooth(series: &[f64], cfg: &LowessConfig) -> Vec<f64> {
    let n = series.len();
    if n < 2 {
        return series.to_vec();
    }
    let k = ((cfg.fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut robustness = vec![1.0; n];
    let mut fitted = vec![0.0; n];

    for pass in 0..=cfg.robustness_iters {
        for i in 0..n {
            fitted[i] = fit_local(series, i, k, cfg.degree, &robustness);
        }
        if pass == cfg.robustness_iters {
            break;
        }
        let residuals: Vec<f64> = series.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
        let s = stats::median(&abs);
        if s <= 0.0 {
            break; // perfect fit; further passes cannot change anything
        }
        for (w, r) in robustness.iter_mut().zip(&residuals) {
            let u = r / (6.0 * s);
            *w = if u.abs() < 1.0 {
                let t = 1.0 - u * u;
                t * t
            } else {
                0.0
            };
        }
    }
    fitted
}

fn fit_local(series: &[f64], i: usize, k: usize, degree: usize, robustness: &[f64]) -> f64 {
    let n = series.len();
    // Grow a contiguous window of k nearest indices around i; on distance
    // ties the window extends left.
    let (mut lo, mut hi) = (i, i);
    while hi - lo + 1 < k {
        if lo > 0 && (hi + 1 >= n || i - (lo - 1) <= (hi + 1) - i) {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    let d_max = (i - lo).max(hi - i) as f64;

    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for j in lo..=hi {
        let d = (j as f64 - i as f64).abs();
        let tricube = if d_max > 0.0 {
            let u = d / d_max;
            if u < 1.0 {
                let t = 1.0 - u * u * u;
                t * t * t
            } else {
                0.0
            }
        } else {
            1.0
        };
        let w = tricube * robustness[j];
        let x = j as f64;
        sw += w;
        swx += w * x;
        swy += w * series[j];
        swxx += w * x * x;
        swxy += w * x * series[j];
    }
    if sw <= 0.0 {
        return series[i]; // every neighbour down-weighted to zero
    }
    if degree == 1 {
        let denom = sw * swxx - swx * swx;
        if denom.abs() > 1e-12 * sw * sw {
            let slope = (sw * swxy - swx * swy) / denom;
            let intercept = (swy - slope * swx) / sw;
            return intercept + slope * i as f64;
        }
    }
    swy / sw
}

/// Signed relative prediction error `(forecast - actual) / actual`,
/// normalised by the realised value. `None` when the actual is not
/// positive.
pub fn percentage_error(forecast_point: f64, actual: f64) -> Option<f64> {
    if actual > 0.0 {
        Some((forecast_point - actual) / actual)
    } else {
        None
    }
}

/// Threshold test for a single observation. The event is decided
/// separately by [`classify_event`] over the recent flag history.
pub fn detect_point(
    actual: f64,
    forecast_point: Option<f64>,
    smoothed: f64,
    th: &Thresholds,
) -> FlagKinds {
    let pred_error = forecast_point
        .and_then(|f| percentage_error(f, actual))
        .map(|e| e.abs() > th.err_threshold)
        .unwrap_or(false);
    let lowess_dev = if smoothed.abs() > 1e-12 {
        (actual - smoothed).abs() / smoothed.abs() > th.lowess_dev_threshold
    } else {
        actual.abs() > 1e-12
    };
    FlagKinds { pred_error, lowess_dev }
}

/// Distinguishes a sustained shift from a one-off deviation: a mode-change
/// candidate needs at least `sustain_m` of the last `sustain_n`
/// observations to carry the prediction-error kind.
pub fn classify_event(recent: &[FlagKinds], th: &Thresholds) -> AnomalyEvent {
    let start = recent.len().saturating_sub(th.sustain_n);
    let hits = recent[start..].iter().filter(|k| k.pred_error).count();
    if hits >= th.sustain_m {
        AnomalyEvent::ModeChangeCandidate
    } else {
        AnomalyEvent::Transient
    }
}

/// Streaming per-class detector. The Lowess reference curve is refitted
/// over a trailing window at each step (true Lowess is an offline
/// procedure); the smoothed value compared against is the window's last
/// fitted point.
pub struct AnomalyDetector {
    thresholds: Thresholds,
    lowess: LowessConfig,
    trailing_window: usize,
    trailing: VecDeque<f64>,
    kind_history: VecDeque<FlagKinds>,
    index: usize,
    last_smoothed: f64,
}

impl AnomalyDetector {
    pub fn new(thresholds: Thresholds, lowess: LowessConfig, trailing_window: usize) -> Self {
        Self {
            thresholds,
            lowess,
            trailing_window: trailing_window.max(2),
            trailing: VecDeque::new(),
            kind_history: VecDeque::new(),
            index: 0,
            last_smoothed: 0.0,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(Thresholds::default(), LowessConfig::default(), 50)
    }

    /// Smoothed value computed for the most recent observation.
    pub fn last_smoothed(&self) -> f64 {
        self.last_smoothed
    }

    /// Feeds one realised observation together with the forecast that was
    /// made for it (absent during model warm-up).
    pub fn observe(&mut self, actual: f64, forecast_point: Option<f64>) -> AnomalyFlag {
        if self.trailing.len() == self.trailing_window {
            self.trailing.pop_front();
        }
        self.trailing.push_back(actual);

        let smoothed = if self.trailing.len() >= 2 {
            let window: Vec<f64> = self.trailing.iter().copied().collect();
            *lowess_smooth(&window, &self.lowess).last().unwrap()
        } else {
            actual
        };
        self.last_smoothed = smoothed;

        let kinds = detect_point(actual, forecast_point, smoothed, &self.thresholds);
        if self.kind_history.len() == self.thresholds.sustain_n {
            self.kind_history.pop_front();
        }
        self.kind_history.push_back(kinds);

        let event = if kinds.any() {
            let recent: Vec<FlagKinds> = self.kind_history.iter().copied().collect();
            classify_event(&recent, &self.thresholds)
        } else {
            AnomalyEvent::None
        };

        let flag = AnomalyFlag { index: self.index, kinds, event };
        self.index += 1;
        flag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn constant_series_is_a_fixed_point() {
        let out = lowess_smooth(&[5.0, 5.0, 5.0, 5.0], &LowessConfig::default());
        for v in out {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_line_reproduced() {
        let series: Vec<f64> = (0..20).map(|i| 3.0 + 2.0 * i as f64).collect();
        let cfg = LowessConfig { fraction: 1.0, robustness_iters: 0, degree: 1 };
        let out = lowess_smooth(&series, &cfg);
        for (a, b) in out.iter().zip(&series) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    /// Independently coded reference following the same documented
    /// procedure: explicit weight vectors and a centered direct solve.
    pub(crate) fn reference_lowess(series: &[f64], cfg: &LowessConfig) -> Vec<f64> {
        let n = series.len();
        if n < 2 {
            return series.to_vec();
        }
        let k = ((cfg.fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut delta = vec![1.0f64; n];
        let mut smooth = vec![0.0f64; n];
        for pass in 0..=cfg.robustness_iters {
            for i in 0..n {
                let mut lo = i;
                let mut hi = i;
                while hi - lo + 1 < k {
                    let can_left = lo > 0;
                    let can_right = hi + 1 < n;
                    if can_left && (!can_right || i - (lo - 1) <= (hi + 1) - i) {
                        lo -= 1;
                    } else {
                        hi += 1;
                    }
                }
                let dmax = ((i - lo).max(hi - i)) as f64;
                let idx: Vec<usize> = (lo..=hi).collect();
                let w: Vec<f64> = idx
                    .iter()
                    .map(|&j| {
                        let base = if dmax > 0.0 {
                            let u = ((j as f64) - (i as f64)).abs() / dmax;
                            if u < 1.0 { (1.0 - u.powi(3)).powi(3) } else { 0.0 }
                        } else {
                            1.0
                        };
                        base * delta[j]
                    })
                    .collect();
                let sw: f64 = w.iter().sum();
                if sw <= 0.0 {
                    smooth[i] = series[i];
                    continue;
                }
                let wmean_y = idx.iter().zip(&w).map(|(&j, wj)| wj * series[j]).sum::<f64>() / sw;
                // degeneracy gate identical to the implementation's
                let swxx: f64 = idx.iter().zip(&w).map(|(&j, wj)| wj * (j as f64).powi(2)).sum();
                let swx: f64 = idx.iter().zip(&w).map(|(&j, wj)| wj * j as f64).sum();
                let degenerate = (sw * swxx - swx * swx).abs() <= 1e-12 * sw * sw;
                if cfg.degree == 0 || degenerate {
                    smooth[i] = wmean_y;
                    continue;
                }
                let wmean_x = swx / sw;
                let sxy: f64 = idx
                    .iter()
                    .zip(&w)
                    .map(|(&j, wj)| wj * (j as f64 - wmean_x) * (series[j] - wmean_y))
                    .sum();
                let sxx: f64 = idx
                    .iter()
                    .zip(&w)
                    .map(|(&j, wj)| wj * (j as f64 - wmean_x).powi(2))
                    .sum();
                let slope = sxy / sxx;
                smooth[i] = wmean_y + slope * (i as f64 - wmean_x);
            }
            if pass == cfg.robustness_iters {
                break;
            }
            let mut abs: Vec<f64> =
                series.iter().zip(&smooth).map(|(y, f)| (y - f).abs()).collect();
            abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let s = if abs.len() % 2 == 1 {
                abs[abs.len() / 2]
            } else {
                0.5 * (abs[abs.len() / 2 - 1] + abs[abs.len() / 2])
            };
            if s <= 0.0 {
                break;
            }
            for (d, (y, f)) in delta.iter_mut().zip(series.iter().zip(&smooth)) {
                let u = (y - f) / (6.0 * s);
                *d = if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
            }
        }
        smooth
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..5 {
            let series: Vec<f64> = (0..80)
                .map(|i| 100.0 + (i as f64 * 0.2).sin() * 20.0 + rng.normal() * 5.0)
                .collect();
            let cfg = LowessConfig::default();
            let ours = lowess_smooth(&series, &cfg);
            let reference = reference_lowess(&series, &cfg);
            for (a, b) in ours.iter().zip(&reference) {
                let rel = (a - b).abs() / b.abs().max(1e-12);
                assert!(rel < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn percentage_error_examples() {
        assert!((percentage_error(100.0, 300.0).unwrap() + 0.6667).abs() < 1e-4);
        assert_eq!(percentage_error(300.0, 300.0).unwrap(), 0.0);
        assert!((percentage_error(150.0, 100.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(percentage_error(100.0, 0.0), None);
    }

    #[test]
    fn detect_point_thresholds() {
        let th = Thresholds::default();
        let kinds = detect_point(300.0, Some(100.0), 300.0, &th);
        assert!(kinds.pred_error && !kinds.lowess_dev);
        let kinds = detect_point(110.0, Some(110.0), 100.0, &th);
        assert!(!kinds.any());
        let kinds = detect_point(130.0, Some(130.0), 100.0, &th);
        assert!(!kinds.pred_error && kinds.lowess_dev);
    }

    #[test]
    fn sustain_rule_classification() {
        let th = Thresholds::default();
        let hit = FlagKinds { pred_error: true, lowess_dev: false };
        let miss = FlagKinds::default();
        let four_of_six = [hit, miss, hit, hit, miss, hit];
        assert_eq!(classify_event(&four_of_six, &th), AnomalyEvent::ModeChangeCandidate);
        let one_of_six = [miss, miss, hit, miss, miss, miss];
        assert_eq!(classify_event(&one_of_six, &th), AnomalyEvent::Transient);
    }

    #[test]
    fn detector_flags_level_shift_quickly() {
        // Forecasts follow a trailing median, so after a 3x shift the
        // prediction errors stay above threshold until the window turns.
        let mut rng = SplitMix64::new(88);
        let series: Vec<f64> = (0..700)
            .map(|i| {
                let base = if i < 500 { 100.0 } else { 300.0 };
                base * (rng.normal() * 0.05).exp()
            })
            .collect();
        let mut detector = AnomalyDetector::with_defaults();
        let mut median_buf: VecDeque<f64> = VecDeque::new();
        let mut first_candidate = None;
        for (i, &y) in series.iter().enumerate() {
            let forecast = if median_buf.is_empty() {
                None
            } else {
                Some(stats::median(&median_buf.iter().copied().collect::<Vec<f64>>()))
            };
            let flag = detector.observe(y, forecast);
            if flag.event == AnomalyEvent::ModeChangeCandidate && first_candidate.is_none() {
                first_candidate = Some(i);
            }
            if median_buf.len() == 10 {
                median_buf.pop_front();
            }
            median_buf.push_back(y);
        }
        let t = first_candidate.expect("candidate must fire");
        assert!((500..=506).contains(&t), "candidate at {t}");
    }

    #[test]
    fn stationary_series_rarely_escalates() {
        let mut rng = SplitMix64::new(4096);
        let mut detector = AnomalyDetector::with_defaults();
        let mut median_buf: VecDeque<f64> = VecDeque::new();
        let mut candidates = 0usize;
        let n = 2000;
        for _ in 0..n {
            let y = 200.0 * (rng.normal() * 0.15).exp();
            let forecast = if median_buf.is_empty() {
                None
            } else {
                Some(stats::median(&median_buf.iter().copied().collect::<Vec<f64>>()))
            };
            if detector.observe(y, forecast).event == AnomalyEvent::ModeChangeCandidate {
                candidates += 1;
            }
            if median_buf.len() == 10 {
                median_buf.pop_front();
            }
            median_buf.push_back(y);
        }
        assert!((candidates as f64) < 0.02 * n as f64, "{candidates} candidates");
    }

    proptest! {
        /// Shift equivariance: smoothing commutes with adding a constant.
        #[test]
        fn lowess_shift_equivariant(
            series in prop::collection::vec(10.0f64..1000.0, 4..60),
            shift in -500.0f64..500.0,
        ) {
            let cfg = LowessConfig::default();
            let base = lowess_smooth(&series, &cfg);
            let shifted: Vec<f64> = series.iter().map(|y| y + shift).collect();
            let out = lowess_smooth(&shifted, &cfg);
            for (a, b) in out.iter().zip(&base) {
                prop_assert!((a - (b + shift)).abs() < 1e-9 * b.abs().max(1.0));
            }
        }

        /// Scale equivariance for positive factors.
        #[test]
        fn lowess_scale_equivariant(
            series in prop::collection::vec(10.0f64..1000.0, 4..60),
            factor in 0.1f64..50.0,
        ) {
            let cfg = LowessConfig::default();
            let base = lowess_smooth(&series, &cfg);
            let scaled: Vec<f64> = series.iter().map(|y| y * factor).collect();
            let out = lowess_smooth(&scaled, &cfg);
            for (a, b) in out.iter().zip(&base) {
                prop_assert!((a - b * factor).abs() < 1e-9 * (b * factor).abs().max(1.0));
            }
        }

        /// Raising the error magnitude can only add the pred_error kind.
        #[test]
        fn detect_point_monotone(actual in 1.0f64..1e4, ratio in 0.0f64..3.0) {
            let th = Thresholds::default();
            let forecast = actual * (1.0 + ratio);
            let bigger = actual * (1.0 + ratio * 1.5 + 0.01);
            let a = detect_point(actual, Some(forecast), actual, &th);
            let b = detect_point(actual, Some(bigger), actual, &th);
            prop_assert!(!a.pred_error || b.pred_error);
        }
    }
}
