//! AR/MA/ARMA/ARIMA estimation and forecasting.
//!
//! Estimation is deliberately closed-form for automated, online use:
//! autoregressive fits solve the Yule-Walker equations (Levinson-Durbin),
//! and mixed models use Hannan-Rissanen two-stage least squares — a long
//! autoregression supplies residual proxies, then the series is regressed
//! on its own lags and lagged proxies. MA sign convention throughout:
//! `x_t = e_t + theta_1 e_{t-1} + ...` (Box-Jenkins "+theta" form).

use std::collections::VecDeque;

use super::{FitError, Forecast, Forecaster, ModelState};
use crate::rng::SplitMix64;
use crate::stats;

/// Model order (p, d, q): AR lags, differencing degree, MA lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArmaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self, FitError> {
        if p > 5 || d > 1 || q > 5 {
            return Err(FitError::InvalidOrder(format!(
                "({p},{d},{q}) exceeds supported grid p<=5, d<=1, q<=5"
            )));
        }
        if p + q == 0 && d == 0 {
            return Err(FitError::InvalidOrder("(0,0,0) has no structure to fit".into()));
        }
        Ok(Self { p, d, q })
    }
}

/// Applies d-th differencing.
pub fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

/// Levinson-Durbin solve of the Yule-Walker equations from sample
/// autocovariances; no sample-size gate (see [`fit_ar_yule_walker`]).
fn yule_walker_impl(series: &[f64], p: usize) -> Result<(Vec<f64>, f64), FitError> {
    let c: Vec<f64> = (0..=p).map(|k| stats::autocovariance(series, k)).collect();
    if c[0] <= 0.0 || !c[0].is_finite() {
        return Err(FitError::Singular);
    }
    let mut phi = vec![0.0; p];
    let mut prev = vec![0.0; p];
    let mut var = c[0];
    for k in 0..p {
        let mut acc = c[k + 1];
        for j in 0..k {
            acc -= phi[j] * c[k - j];
        }
        if var.abs() < 1e-300 {
            return Err(FitError::Singular);
        }
        let reflection = acc / var;
        prev[..k].copy_from_slice(&phi[..k]);
        phi[k] = reflection;
        for j in 0..k {
            phi[j] = prev[j] - reflection * prev[k - 1 - j];
        }
        var *= 1.0 - reflection * reflection;
    }
    // sigma2 = c0 * (1 - sum phi_k r_k)
    let sigma2 = c[0] - phi.iter().zip(&c[1..]).map(|(f, ck)| f * ck).sum::<f64>();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(FitError::Singular);
    }
    Ok((phi, sigma2.max(0.0)))
}

/// Fits an AR(p) by the Yule-Walker equations on the demeaned series.
/// Requires at least 10p observations.
pub fn fit_ar_yule_walker(series: &[f64], p: usize) -> Result<(Vec<f64>, f64), FitError> {
    if p == 0 {
        return Ok((Vec::new(), stats::autocovariance(series, 0)));
    }
    if series.len() < 10 * p {
        return Err(FitError::NeedMoreData { needed: 10 * p, got: series.len() });
    }
    yule_walker_impl(series, p)
}

/// All AR characteristic roots outside the unit circle, tested via the
/// Schur-Cohn step-down: every reflection coefficient must have modulus
/// below one.
pub fn ar_stationary(phi: &[f64]) -> bool {
    let mut a = phi.to_vec();
    for k in (1..=phi.len()).rev() {
        let kk = a[k - 1];
        if !kk.is_finite() || kk.abs() >= 1.0 - 1e-9 {
            return false;
        }
        if k > 1 {
            let denom = 1.0 - kk * kk;
            let mut b = vec![0.0; k - 1];
            for (j, slot) in b.iter_mut().enumerate() {
                *slot = (a[j] + kk * a[k - 2 - j]) / denom;
            }
            a = b;
        }
    }
    true
}

/// A fitted ARIMA model with the state needed for online updates: the last
/// p differenced values, the last q innovations, and the last raw value for
/// undifferencing.
#[derive(Debug, Clone)]
pub struct ArmaModel {
    pub order: ArmaOrder,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    w_lags: VecDeque<f64>,
    residuals: VecDeque<f64>,
    last_raw: f64,
}

impl ArmaModel {
    /// Assembles a model from explicit parts; buffers are given oldest
    /// first and truncated/padded to the order's lag counts.
    pub fn from_parts(
        order: ArmaOrder,
        phi: Vec<f64>,
        theta: Vec<f64>,
        intercept: f64,
        sigma2: f64,
        w_lags: &[f64],
        residuals: &[f64],
        last_raw: f64,
    ) -> Self {
        assert_eq!(phi.len(), order.p);
        assert_eq!(theta.len(), order.q);
        let take = |xs: &[f64], n: usize| -> VecDeque<f64> {
            let start = xs.len().saturating_sub(n);
            xs[start..].iter().copied().collect()
        };
        Self {
            order,
            phi,
            theta,
            intercept,
            sigma2,
            w_lags: take(w_lags, order.p),
            residuals: take(residuals, order.q),
            last_raw,
        }
    }

    fn lag(buf: &VecDeque<f64>, k: usize) -> f64 {
        // k = 1 is the most recent element; missing history counts as 0.
        if k <= buf.len() {
            buf[buf.len() - k]
        } else {
            0.0
        }
    }

    /// One-step prediction of the next differenced value from current lags.
    fn predict_w(&self) -> f64 {
        let mut v = self.intercept;
        for (i, f) in self.phi.iter().enumerate() {
            v += f * Self::lag(&self.w_lags, i + 1);
        }
        for (j, t) in self.theta.iter().enumerate() {
            v += t * Self::lag(&self.residuals, j + 1);
        }
        v
    }

    /// Feeds one realised raw observation, advancing lag and residual
    /// buffers.
    pub fn update(&mut self, x: f64) {
        let w = if self.order.d == 1 { x - self.last_raw } else { x };
        let e = w - self.predict_w();
        push_capped(&mut self.w_lags, w, self.order.p);
        push_capped(&mut self.residuals, e, self.order.q);
        self.last_raw = x;
    }
}

fn push_capped(buf: &mut VecDeque<f64>, v: f64, cap: usize) {
    if cap == 0 {
        return;
    }
    if buf.len() == cap {
        buf.pop_front();
    }
    buf.push_back(v);
}

/// Fits an ARIMA(p,d,q) by Hannan-Rissanen two-stage least squares on the
/// d-times differenced series. Needs `max(30, 10(p+q))` differenced points.
/// The degenerate (0,d,0) case is the driftless random walk (intercept 0),
/// so its forecast is the last value at every horizon.
pub fn fit_arma(series: &[f64], p: usize, d: usize, q: usize) -> Result<ArmaModel, FitError> {
    let order = ArmaOrder::new(p, d, q)?;
    let w = difference(series, d);
    let n = w.len();
    let needed = 30.max(10 * (p + q));
    if n < needed {
        return Err(FitError::NeedMoreData { needed, got: n });
    }

    let (phi, theta, intercept, sigma2);
    if p + q == 0 {
        phi = Vec::new();
        theta = Vec::new();
        intercept = 0.0;
        sigma2 = stats::autocovariance(&w, 0);
        if sigma2 <= 0.0 {
            return Err(FitError::Singular);
        }
    } else {
        // Stage 1: long AR for innovation proxies (only needed when q > 0).
        let (proxies, long_order) = if q > 0 {
            let long_order = ((n as f64 / 10.0).min(20.0)).ceil() as usize;
            let (a, _) = yule_walker_impl(&w, long_order)?;
            let w_mean = stats::mean(&w);
            let mut eps = vec![0.0; n];
            for t in long_order..n {
                let mut pred = 0.0;
                for (j, aj) in a.iter().enumerate() {
                    pred += aj * (w[t - 1 - j] - w_mean);
                }
                eps[t] = (w[t] - w_mean) - pred;
            }
            (eps, long_order)
        } else {
            (Vec::new(), 0)
        };

        // Stage 2: regress w_t on [1, w lags, proxy lags].
        let t0 = p.max(long_order + q);
        let k = 1 + p + q;
        if n - t0 < k + 2 {
            return Err(FitError::NeedMoreData { needed: t0 + k + 2, got: n });
        }
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        let mut row = vec![0.0; k];
        for t in t0..n {
            row[0] = 1.0;
            for i in 1..=p {
                row[i] = w[t - i];
            }
            for j in 1..=q {
                row[p + j] = proxies[t - j];
            }
            for r in 0..k {
                for c in 0..k {
                    xtx[r][c] += row[r] * row[c];
                }
                xty[r] += row[r] * w[t];
            }
        }
        let beta = stats::solve_linear(xtx, xty).ok_or(FitError::Singular)?;
        intercept = beta[0];
        phi = beta[1..=p].to_vec();
        theta = beta[p + 1..].to_vec();
        if !ar_stationary(&phi) {
            return Err(FitError::NonStationary);
        }
        let mut ssr = 0.0;
        for t in t0..n {
            let mut pred = intercept;
            for i in 1..=p {
                pred += phi[i - 1] * w[t - i];
            }
            for j in 1..=q {
                pred += theta[j - 1] * proxies[t - j];
            }
            let r = w[t] - pred;
            ssr += r * r;
        }
        sigma2 = ssr / (n - t0) as f64;
    }

    // Prime lag/residual buffers by running the innovation recursion over
    // the training window.
    let mut residuals: Vec<f64> = vec![0.0; n];
    for t in p..n {
        let mut pred = intercept;
        for i in 1..=p {
            pred += phi[i - 1] * w[t - i];
        }
        for j in 1..=q {
            if t >= j + p {
                pred += theta[j - 1] * residuals[t - j];
            }
        }
        residuals[t] = w[t] - pred;
    }

    Ok(ArmaModel::from_parts(
        order,
        phi,
        theta,
        intercept,
        sigma2,
        &w,
        &residuals,
        *series.last().expect("series non-empty"),
    ))
}

/// Grid search over (p, d, q) minimising `AIC = n ln(sigma2) + 2(p+q+1)`,
/// n being the differenced length. Members that fail to fit are excluded;
/// ties break toward smaller p+q, then d, then p.
pub fn select_order(
    series: &[f64],
    max_p: usize,
    max_d: usize,
    max_q: usize,
) -> Result<(usize, usize, usize), FitError> {
    let mut best: Option<(f64, usize, usize, usize, usize)> = None;
    for d in 0..=max_d {
        for p in 0..=max_p {
            for q in 0..=max_q {
                if p + q == 0 && d == 0 {
                    continue;
                }
                let Ok(m) = fit_arma(series, p, d, q) else { continue };
                let n = (series.len() - d) as f64;
                let aic = n * m.sigma2.max(1e-300).ln() + 2.0 * (p + q + 1) as f64;
                if !aic.is_finite() {
                    continue;
                }
                let key = (aic, p + q, d, p, q);
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (key.0, key.1, key.2, key.3)
                            .partial_cmp(&(b.0, b.1, b.2, b.3))
                            .map(|o| o == std::cmp::Ordering::Less)
                            .unwrap_or(false)
                    }
                };
                if better {
                    best = Some(key);
                }
            }
        }
    }
    best.map(|(_, _, d, p, q)| (p, d, q)).ok_or(FitError::SelectionFailed)
}

/// Iterates the ARMA recursion h steps with future innovations set to
/// zero, undoes differencing, and widths the interval by the psi-weight
/// expansion of the (differenced) AR polynomial.
pub fn forecast_arma(m: &ArmaModel, horizon: usize, confidence: f64) -> Forecast {
    assert!(horizon >= 1);
    let ArmaOrder { p, d, q } = m.order;

    let mut future_w = Vec::with_capacity(horizon);
    for s in 1..=horizon {
        let mut v = m.intercept;
        for i in 1..=p {
            let offset = s as i64 - i as i64;
            v += m.phi[i - 1]
                * if offset >= 1 {
                    future_w[offset as usize - 1]
                } else {
                    ArmaModel::lag(&m.w_lags, (1 - offset) as usize)
                };
        }
        for j in 1..=q {
            let offset = s as i64 - j as i64;
            if offset < 1 {
                // Future innovations are zero; only realised ones count.
                v += m.theta[j - 1] * ArmaModel::lag(&m.residuals, (1 - offset) as usize);
            }
        }
        future_w.push(v);
    }

    let point = if d == 1 {
        let mut level = m.last_raw;
        for w in &future_w {
            level += w;
        }
        level
    } else {
        future_w[horizon - 1]
    };

    // psi weights of the ARMA form with differencing folded into the AR
    // polynomial: phi*(B) = phi(B) (1-B)^d.
    let mut ar_poly = Vec::with_capacity(p + d + 1);
    ar_poly.push(1.0);
    ar_poly.extend(m.phi.iter().map(|f| -f));
    for _ in 0..d {
        let mut conv = vec![0.0; ar_poly.len() + 1];
        for (i, &a) in ar_poly.iter().enumerate() {
            conv[i] += a;
            conv[i + 1] -= a;
        }
        ar_poly = conv;
    }
    let big_p = ar_poly.len() - 1;
    let mut psi = vec![0.0; horizon];
    psi[0] = 1.0;
    for j in 1..horizon {
        let mut v = if j <= q { m.theta[j - 1] } else { 0.0 };
        for i in 1..=big_p.min(j) {
            v += -ar_poly[i] * psi[j - i];
        }
        psi[j] = v;
    }
    let var = m.sigma2 * psi.iter().map(|x| x * x).sum::<f64>();

    Forecast::gaussian(point, var.max(0.0).sqrt(), confidence, horizon)
}

/// Simulates a stationary ARMA with Gaussian innovations (200-step burn-in
/// discarded); used to validate parameter recovery.
pub fn simulate_arma(
    phi: &[f64],
    theta: &[f64],
    intercept: f64,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let burn = 200;
    let mut rng = SplitMix64::new(seed);
    let mut xs: Vec<f64> = Vec::with_capacity(n + burn);
    let mut es: Vec<f64> = Vec::with_capacity(n + burn);
    for t in 0..n + burn {
        let e = sigma * rng.normal();
        let mut x = intercept + e;
        for (i, f) in phi.iter().enumerate() {
            if t > i {
                x += f * xs[t - 1 - i];
            }
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j {
                x += th * es[t - 1 - j];
            }
        }
        xs.push(x);
        es.push(e);
    }
    xs.split_off(burn)
}

/// How an [`ArmaForecaster`] chooses its order at refit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    Fixed(ArmaOrder),
    Auto { max_p: usize, max_d: usize, max_q: usize },
}

/// Ensemble wrapper: maintains the class history, refits on a cadence over
/// a trailing window, and updates lag buffers online between refits.
pub struct ArmaForecaster {
    policy: OrderPolicy,
    refit_every: usize,
    fit_window: usize,
    history: Vec<f64>,
    model: Option<ArmaModel>,
    since_refit: usize,
}

impl ArmaForecaster {
    pub fn new(policy: OrderPolicy, refit_every: usize) -> Self {
        Self {
            policy,
            refit_every: refit_every.max(1),
            fit_window: 500,
            history: Vec::new(),
            model: None,
            since_refit: 0,
        }
    }

    pub fn with_fit_window(mut self, window: usize) -> Self {
        self.fit_window = window.max(30);
        self
    }

    pub fn model(&self) -> Option<&ArmaModel> {
        self.model.as_ref()
    }

    fn refit(&mut self) {
        let start = self.history.len().saturating_sub(self.fit_window);
        let train = &self.history[start..];
        let fitted = match self.policy {
            OrderPolicy::Fixed(o) => fit_arma(train, o.p, o.d, o.q),
            OrderPolicy::Auto { max_p, max_d, max_q } => select_order(train, max_p, max_d, max_q)
                .and_then(|(p, d, q)| fit_arma(train, p, d, q)),
        };
        if let Ok(m) = fitted {
            self.model = Some(m);
        }
        self.since_refit = 0;
    }
}

impl Forecaster for ArmaForecaster {
    fn name(&self) -> String {
        match self.policy {
            OrderPolicy::Fixed(o) => format!("arma({},{},{})", o.p, o.d, o.q),
            OrderPolicy::Auto { .. } => "arma(auto)".to_string(),
        }
    }

    fn observe(&mut self, value: f64) {
        self.history.push(value);
        if let Some(m) = &mut self.model {
            m.update(value);
        }
        self.since_refit += 1;
        if self.model.is_none() || self.since_refit >= self.refit_every {
            self.refit();
        }
    }

    fn forecast(&self, horizon: usize, confidence: f64) -> Option<Forecast> {
        self.model.as_ref().map(|m| forecast_arma(m, horizon, confidence))
    }

    fn state(&self) -> ModelState {
        match &self.model {
            Some(m) => ModelState::Arma {
                p: m.order.p,
                d: m.order.d,
                q: m.order.q,
                phi: m.phi.clone(),
                theta: m.theta.clone(),
                intercept: m.intercept,
                sigma2: m.sigma2,
            },
            None => ModelState::Arma {
                p: 0,
                d: 0,
                q: 0,
                phi: vec![],
                theta: vec![],
                intercept: 0.0,
                sigma2: 0.0,
            },
        }
    }
}
