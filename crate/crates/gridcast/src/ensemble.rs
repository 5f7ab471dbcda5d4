//! Expert selection over concurrently maintained forecasters.
//!
//! Every registered model predicts each step; realised observations score
//! them by an EWMA of absolute percentage error, and the lowest-scoring
//! warmed-up model is exposed as active. On a mode-change candidate a
//! challenger model set is spawned and trained only on observations from
//! the flag onward; once warmed up and scoring better than the incumbent,
//! the challenger set replaces the model list. Mode changes also shrink
//! the prediction horizon to one step; it recovers additively.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::anomaly::{percentage_error, AnomalyEvent, AnomalyFlag};
use crate::forecast::{
    ArmaForecaster, ArmaOrder, BaselineForecaster, BaselineKind, Forecast, Forecaster, ModelState,
    OrderPolicy, PolyTrendForecaster, SmoothingForecaster, SmoothingKind,
};
use crate::stats;

/// EWMA feedback score for one model; lower is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScore {
    pub ewma_abs_pct_error: f64,
    pub n_updates: u64,
    pub lambda: f64,
}

impl ModelScore {
    pub fn new(lambda: f64) -> Self {
        assert!(lambda > 0.0 && lambda < 1.0);
        Self {
            ewma_abs_pct_error: 0.0,
            n_updates: 0,
            lambda,
        }
    }
}

/// Folds one absolute percentage error into the score. The first update
/// seeds the EWMA with the raw error.
pub fn score_update(s: &ModelScore, abs_pct_err: f64) -> ModelScore {
    debug_assert!(abs_pct_err >= 0.0);
    let ewma = if s.n_updates == 0 {
        abs_pct_err
    } else {
        s.lambda * s.ewma_abs_pct_error + (1.0 - s.lambda) * abs_pct_err
    };
    ModelScore {
        ewma_abs_pct_error: ewma,
        n_updates: s.n_updates + 1,
        lambda: s.lambda,
    }
}

/// Declarative model list, buildable repeatedly (fresh challenger sets).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Mean { window: usize },
    Median { window: usize },
    Poly { order: usize, window: usize },
    Ses { alpha: f64 },
    Holt { alpha: f64, beta: f64 },
    /// `order: None` selects (p,d,q) by AIC grid search at each refit.
    Arma { order: Option<(usize, usize, usize)>, refit_every: usize },
}

impl ModelSpec {
    /// Builds the model, wrapped to operate on log-durations when asked
    /// (wide-range classes; forecasts still come back in raw seconds).
    pub fn build_wrapped(&self, log_transform: bool) -> Box<dyn Forecaster> {
        if log_transform {
            Box::new(crate::forecast::LogTransformed::new(BoxedForecaster(self.build())))
        } else {
            self.build()
        }
    }

    pub fn build(&self) -> Box<dyn Forecaster> {
        match *self {
            ModelSpec::Mean { window } => Box::new(BaselineForecaster::new(BaselineKind::Mean, window)),
            ModelSpec::Median { window } => {
                Box::new(BaselineForecaster::new(BaselineKind::Median, window))
            }
            ModelSpec::Poly { order, window } => Box::new(PolyTrendForecaster::new(order, window)),
            ModelSpec::Ses { alpha } => {
                Box::new(SmoothingForecaster::new(SmoothingKind::Ses, alpha, 0.5))
            }
            ModelSpec::Holt { alpha, beta } => {
                Box::new(SmoothingForecaster::new(SmoothingKind::Holt, alpha, beta))
            }
            ModelSpec::Arma { order, refit_every } => {
                let policy = match order {
                    Some((p, d, q)) => OrderPolicy::Fixed(
                        ArmaOrder::new(p, d, q).expect("invalid fixed ARMA order in config"),
                    ),
                    None => OrderPolicy::Auto { max_p: 5, max_d: 1, max_q: 5 },
                };
                Box::new(ArmaForecaster::new(policy, refit_every))
            }
        }
    }
}

/// Lets the log-transform wrapper hold an already-boxed model.
struct BoxedForecaster(Box<dyn Forecaster>);

impl Forecaster for BoxedForecaster {
    fn name(&self) -> String {
        self.0.name()
    }
    fn observe(&mut self, value: f64) {
        self.0.observe(value)
    }
    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast> {
        self.0.forecast(horizon, confidence)
    }
    fn state(&self) -> ModelState {
        self.0.state()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub models: Vec<ModelSpec>,
    /// EWMA decay for model scores.
    pub lambda: f64,
    /// Updates a model needs before it may be selected as active.
    pub min_warmup: u64,
    pub max_horizon: usize,
    /// Residual skewness beyond which Gaussian intervals are replaced by
    /// empirical residual quantiles.
    pub skew_threshold: f64,
    /// Fit models to log-durations (wide-range classes).
    pub log_transform: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            models: vec![
                ModelSpec::Median { window: 10 },
                ModelSpec::Poly { order: 3, window: 10 },
                ModelSpec::Holt { alpha: 0.3, beta: 0.1 },
                ModelSpec::Arma { order: None, refit_every: 50 },
            ],
            lambda: 0.8,
            min_warmup: 8,
            max_horizon: 10,
            skew_threshold: 2.0,
            log_transform: false,
        }
    }
}

/// Achieved confidence after horizon shrinkage, reported to the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceReport {
    pub level: f64,
    pub horizon: usize,
    pub degraded: bool,
}

/// What one `advance` call did; feeds the per-step decision log.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// 0-based index of the observation just consumed.
    pub step: u64,
    pub actual: f64,
    /// The active model's forecast that this observation realised.
    pub prev_forecast: Option<Forecast>,
    /// Signed percentage error of that forecast.
    pub pct_error: Option<f64>,
    pub active_model: String,
    pub ewma_active: f64,
    pub horizon: usize,
    pub event: AnomalyEvent,
    /// True when the challenger set replaced the incumbents this step.
    pub switched: bool,
    pub next_forecast: Option<Forecast>,
}

const RESIDUAL_WINDOW: usize = 100;

struct Slot {
    model: Box<dyn Forecaster>,
    score: ModelScore,
    last_forecast: Option<Forecast>,
    /// Recent one-step residuals (actual - point), seconds scale.
    residuals: VecDeque<f64>,
}

impl Slot {
    fn advance(&mut self, obs: f64, confidence: f64) {
        if let Some(f) = self.last_forecast {
            if let Some(e) = percentage_error(f.point, obs) {
                self.score = score_update(&self.score, e.abs());
                if self.residuals.len() == RESIDUAL_WINDOW {
                    self.residuals.pop_front();
                }
                self.residuals.push_back(obs - f.point);
            }
        }
        self.model.observe(obs);
        self.last_forecast = self.model.forecast(1, confidence);
    }
}

struct Challenger {
    slots: Vec<Slot>,
    warmup_count: u64,
}

/// Per-class ensemble state: the model list, scores, the optional
/// challenger set, and the current prediction horizon.
pub struct Ensemble {
    cfg: EnsembleConfig,
    slots: Vec<Slot>,
    active_index: usize,
    challenger: Option<Challenger>,
    horizon: usize,
    observations: u64,
}

fn build_slots(cfg: &EnsembleConfig) -> Vec<Slot> {
    cfg.models
        .iter()
        .map(|spec| Slot {
            model: spec.build_wrapped(cfg.log_transform),
            score: ModelScore::new(cfg.lambda),
            last_forecast: None,
            residuals: VecDeque::new(),
        })
        .collect()
}

impl Ensemble {
    pub fn new(cfg: EnsembleConfig) -> Self {
        assert!(!cfg.models.is_empty(), "ensemble needs at least one model");
        assert!(cfg.max_horizon >= 1);
        let slots = build_slots(&cfg);
        Self {
            cfg,
            slots,
            active_index: 0,
            challenger: None,
            horizon: 1,
            observations: 0,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(EnsembleConfig::default())
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn active_model_name(&self) -> String {
        self.slots[self.active_index].model.name()
    }

    pub fn active_ewma(&self) -> f64 {
        self.slots[self.active_index].score.ewma_abs_pct_error
    }

    /// The standing next-step forecast of the active model (the one the
    /// next observation will be scored against), with the skew-based
    /// empirical-interval substitution applied.
    pub fn current_forecast(&self) -> Option<Forecast> {
        self.shaped_forecast(&self.slots[self.active_index])
    }

    /// Serialisable states of all registered models, active first.
    pub fn model_states(&self) -> Vec<(String, ModelState)> {
        let mut out: Vec<(String, ModelState)> = Vec::new();
        out.push((
            self.slots[self.active_index].model.name(),
            self.slots[self.active_index].model.state(),
        ));
        for (i, s) in self.slots.iter().enumerate() {
            if i != self.active_index {
                out.push((s.model.name(), s.model.state()));
            }
        }
        out
    }

    /// Index of the minimal-EWMA model among those past warm-up, ties
    /// resolved by registration order. Falls back to the first model able
    /// to forecast (the median baseline in the default set, which is
    /// usable after one observation).
    pub fn select_active(&self) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.slots.iter().enumerate() {
            if s.score.n_updates >= self.cfg.min_warmup && s.last_forecast.is_some() {
                let e = s.score.ewma_abs_pct_error;
                if best.map_or(true, |(_, b)| e < b) {
                    best = Some((i, e));
                }
            }
        }
        if let Some((i, _)) = best {
            return i;
        }
        // Prefer a median baseline as the fallback, then anything usable.
        if let Some(i) = self.slots.iter().position(|s| {
            matches!(s.model.state(), ModelState::Median { .. }) && s.last_forecast.is_some()
        }) {
            return i;
        }
        self.slots
            .iter()
            .position(|s| s.last_forecast.is_some())
            .unwrap_or(0)
    }

    fn shaped_forecast(&self, slot: &Slot) -> Option<Forecast> {
        let mut f = slot.last_forecast?;
        // Gaussian intervals are untrustworthy under heavy skew; substitute
        // empirical residual quantiles once enough residuals accumulated.
        if slot.residuals.len() >= 30 {
            let residuals: Vec<f64> = slot.residuals.iter().copied().collect();
            if stats::skewness(&residuals) > self.cfg.skew_threshold {
                let lo_q = stats::nearest_rank_quantile(&residuals, (1.0 - f.confidence) / 2.0);
                let hi_q = stats::nearest_rank_quantile(&residuals, (1.0 + f.confidence) / 2.0);
                f.lo = (f.point + lo_q).min(f.point);
                f.hi = (f.point + hi_q).max(f.point);
            }
        }
        Some(f)
    }

    /// Achieved confidence for the current horizon: full when at the
    /// maximum, scaled down linearly by horizon ratio otherwise.
    pub fn effective_confidence(&self, requested: f64) -> ConfidenceReport {
        assert!(requested > 0.0 && requested < 1.0);
        let degraded = self.horizon < self.cfg.max_horizon;
        let level = if degraded {
            requested * self.horizon as f64 / self.cfg.max_horizon as f64
        } else {
            requested
        };
        ConfidenceReport {
            level,
            horizon: self.horizon,
            degraded,
        }
    }

    /// Feeds one realised observation and its anomaly flag. Scores and
    /// updates every model (challenger included), manages challenger
    /// spawning and the staged transition, adjusts the horizon, and
    /// returns the next-step forecast of the (re)selected active model.
    pub fn advance(&mut self, obs: f64, flag: &AnomalyFlag, confidence: f64) -> StepOutcome {
        let step = self.observations;
        self.observations += 1;

        let prev_forecast = self.slots[self.active_index].last_forecast;
        let pct_error = prev_forecast.and_then(|f| percentage_error(f.point, obs));

        for slot in &mut self.slots {
            slot.advance(obs, confidence);
        }
        if let Some(ch) = &mut self.challenger {
            for slot in &mut ch.slots {
                slot.advance(obs, confidence);
            }
            ch.warmup_count += 1;
        }

        let mode_change = flag.event == AnomalyEvent::ModeChangeCandidate;
        if mode_change && self.challenger.is_none() {
            let mut slots = build_slots(&self.cfg);
            for slot in &mut slots {
                slot.advance(obs, confidence);
            }
            self.challenger = Some(Challenger { slots, warmup_count: 1 });
        }

        let mut switched = false;
        if let Some(ch) = &self.challenger {
            if ch.warmup_count >= self.cfg.min_warmup {
                let incumbent = self.slots[self.active_index].score.ewma_abs_pct_error;
                let best = ch
                    .slots
                    .iter()
                    .filter(|s| s.score.n_updates >= self.cfg.min_warmup && s.last_forecast.is_some())
                    .map(|s| s.score.ewma_abs_pct_error)
                    .fold(None::<f64>, |acc, e| Some(acc.map_or(e, |a| a.min(e))));
                if let Some(best) = best {
                    if best < incumbent {
                        debug_assert!(best < incumbent, "transition must not regress");
                        let ch = self.challenger.take().unwrap();
                        self.slots = ch.slots;
                        switched = true;
                    }
                }
            }
        }

        self.horizon = if mode_change {
            1
        } else {
            (self.horizon + 1).min(self.cfg.max_horizon)
        };

        self.active_index = self.select_active();
        let active = &self.slots[self.active_index];

        StepOutcome {
            step,
            actual: obs,
            prev_forecast,
            pct_error,
            active_model: active.model.name(),
            ewma_active: active.score.ewma_abs_pct_error,
            horizon: self.horizon,
            event: flag.event,
            switched,
            next_forecast: self.shaped_forecast(active),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::{AnomalyDetector, FlagKinds};
    use crate::rng::SplitMix64;

    fn no_flag(index: usize) -> AnomalyFlag {
        AnomalyFlag {
            index,
            kinds: FlagKinds::default(),
            event: AnomalyEvent::None,
        }
    }

    #[test]
    fn score_update_examples() {
        let s = ModelScore {
            ewma_abs_pct_error: 0.10,
            n_updates: 5,
            lambda: 0.8,
        };
        let s2 = score_update(&s, 0.30);
        assert!((s2.ewma_abs_pct_error - 0.14).abs() < 1e-12);
        assert_eq!(s2.n_updates, 6);

        let fresh = score_update(&ModelScore::new(0.8), 0.25);
        assert_eq!(fresh.ewma_abs_pct_error, 0.25);

        let mut s = ModelScore::new(0.8);
        for _ in 0..100 {
            s = score_update(&s, 0.2);
        }
        assert!((s.ewma_abs_pct_error - 0.2).abs() < 1e-6);
    }

    #[test]
    fn selection_prefers_lowest_ewma_after_warmup() {
        let mut e = Ensemble::with_defaults();
        // Constant stream: every model converges; the selection must be a
        // warmed-up model carrying the minimal EWMA.
        for _ in 0..30 {
            e.advance(100.0, &no_flag(0), 0.9);
        }
        let i = e.select_active();
        let s = &e.slots[i];
        assert!(s.score.n_updates >= e.cfg.min_warmup);
        let min_ewma = e
            .slots
            .iter()
            .filter(|s| s.score.n_updates >= e.cfg.min_warmup)
            .map(|s| s.score.ewma_abs_pct_error)
            .fold(f64::INFINITY, f64::min);
        assert!((s.score.ewma_abs_pct_error - min_ewma).abs() < 1e-15);
    }

    #[test]
    fn cold_start_falls_back_to_median() {
        let mut e = Ensemble::with_defaults();
        e.advance(100.0, &no_flag(0), 0.9);
        assert_eq!(e.active_model_name(), "median(10)");
        assert!(e.current_forecast().is_some());
    }

    #[test]
    fn ineligible_model_is_skipped_even_if_better() {
        let mut e = Ensemble::with_defaults();
        for _ in 0..20 {
            e.advance(100.0, &no_flag(0), 0.9);
        }
        // Force an artificially perfect score on a model that has not
        // warmed up; selection must ignore it.
        e.slots[3].score = ModelScore {
            ewma_abs_pct_error: 0.0,
            n_updates: e.cfg.min_warmup - 1,
            lambda: 0.8,
        };
        let chosen = e.select_active();
        assert_ne!(chosen, 3);
    }

    #[test]
    fn horizon_recovers_additively_and_shrinks_on_mode_change() {
        let mut e = Ensemble::with_defaults();
        for i in 0..(e.cfg.max_horizon - 1) {
            e.advance(100.0, &no_flag(i), 0.9);
        }
        assert_eq!(e.horizon(), e.cfg.max_horizon);

        let candidate = AnomalyFlag {
            index: 99,
            kinds: FlagKinds { pred_error: true, lowess_dev: false },
            event: AnomalyEvent::ModeChangeCandidate,
        };
        let out = e.advance(300.0, &candidate, 0.9);
        assert_eq!(out.horizon, 1);
        assert!(e.challenger.is_some());

        e.advance(100.0, &no_flag(100), 0.9);
        assert_eq!(e.horizon(), 2);
    }

    #[test]
    fn effective_confidence_penalty() {
        let mut e = Ensemble::with_defaults();
        for i in 0..20 {
            e.advance(100.0, &no_flag(i), 0.9);
        }
        let r = e.effective_confidence(0.9);
        assert_eq!(r.level, 0.9);
        assert!(!r.degraded);

        e.horizon = 1;
        let r = e.effective_confidence(0.9);
        assert!((r.level - 0.09).abs() < 1e-12);
        assert!(r.degraded);

        e.horizon = 5;
        let r = e.effective_confidence(0.8);
        assert!((r.level - 0.40).abs() < 1e-12);
    }

    /// Full replay: a 3x level shift must spawn a challenger that takes
    /// over within 20 observations, with the post-switch EWMA below the
    /// pre-switch peak. Fast-adapting smoothers absorb a shift within a
    /// couple of steps and (correctly) never show a *sustained* error run,
    /// so the replay uses the slower trend/ARMA set.
    #[test]
    fn staged_transition_on_level_shift() {
        let mut rng = SplitMix64::new(2717);
        let series: Vec<f64> = (0..700)
            .map(|i| {
                let base = if i < 500 { 100.0 } else { 300.0 };
                base * (rng.normal() * 0.05).exp()
            })
            .collect();

        let cfg = EnsembleConfig {
            models: vec![
                ModelSpec::Median { window: 10 },
                ModelSpec::Poly { order: 3, window: 10 },
                ModelSpec::Arma { order: None, refit_every: 50 },
            ],
            ..Default::default()
        };
        let mut ensemble = Ensemble::new(cfg);
        let mut detector = AnomalyDetector::with_defaults();
        let mut change_detected_at = None;
        let mut switched_at = None;
        let mut peak_ewma_before_switch: f64 = 0.0;

        for (i, &y) in series.iter().enumerate() {
            let forecast = ensemble.current_forecast().map(|f| f.point);
            let flag = detector.observe(y, forecast);
            if switched_at.is_none() {
                peak_ewma_before_switch = peak_ewma_before_switch.max(ensemble.active_ewma());
            }
            let out = ensemble.advance(y, &flag, 0.9);
            if flag.event == AnomalyEvent::ModeChangeCandidate && change_detected_at.is_none() {
                change_detected_at = Some(i);
            }
            if out.switched && switched_at.is_none() {
                switched_at = Some(i);
            }
        }

        let detected = change_detected_at.expect("mode change must be detected");
        let switched = switched_at.expect("challenger must take over");
        assert!((500..=506).contains(&detected), "detected at {detected}");
        assert!(switched >= detected);
        assert!(switched - detected <= 20, "switch took {} steps", switched - detected);
        assert!(
            ensemble.active_ewma() < peak_ewma_before_switch,
            "post-switch ewma {} vs peak {}",
            ensemble.active_ewma(),
            peak_ewma_before_switch
        );
    }

    /// A single-model ensemble behaves exactly like driving that model by
    /// hand.
    #[test]
    fn single_model_is_transparent() {
        let cfg = EnsembleConfig {
            models: vec![ModelSpec::Median { window: 10 }],
            ..Default::default()
        };
        let mut ensemble = Ensemble::new(cfg);
        let mut reference = BaselineForecaster::new(BaselineKind::Median, 10);

        let mut rng = SplitMix64::new(5);
        for i in 0..200 {
            let y = 50.0 + rng.normal().abs() * 10.0;
            let out = ensemble.advance(y, &no_flag(i), 0.9);
            reference.observe(y);
            let expected = reference.forecast(1, 0.9).unwrap();
            let got = out.next_forecast.unwrap();
            assert_eq!(got.point, expected.point);
            assert_eq!(got.std_error, expected.std_error);
        }
    }

    /// Near-zero signed mean percentage error on a stationary stream.
    #[test]
    fn stationary_stream_has_near_zero_signed_error() {
        let mut rng = SplitMix64::new(909);
        let mut ensemble = Ensemble::with_defaults();
        let mut errors = Vec::new();
        for i in 0..1500 {
            let y = 400.0 * (rng.normal() * 0.15).exp();
            let out = ensemble.advance(y, &no_flag(i), 0.9);
            if let Some(e) = out.pct_error {
                errors.push(e);
            }
        }
        assert!(errors.len() > 1000);
        let mean = stats::mean(&errors);
        assert!(mean.abs() < 0.05, "signed mean pct error {mean}");
    }
}
