//! Plot-ready CSV/JSON emission: per-class replay summaries and decision
//! logs, percentage-error histograms, duration CDFs, and scheduler
//! decision logs. All CSVs carry a header row; floats are written in
//! full-precision scientific notation so artifacts are byte-reproducible.

use crate::anomaly::{AnomalyEvent, FlagKinds};
use crate::sim::JobOutcome;
use crate::stats;

/// Full-precision float formatting (16 significant digits, '.' separator).
pub fn fmt_num(x: f64) -> String {
    format!("{x:.15e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// One replayed observation of a class.
#[derive(Debug, Clone)]
pub struct ClassReplayRow {
    pub step: u64,
    pub actual: f64,
    pub forecast: Option<f64>,
    pub pct_error: Option<f64>,
    pub smoothed: f64,
    pub kinds: FlagKinds,
    pub event: AnomalyEvent,
    pub active_model: String,
    pub ewma_active: f64,
    pub horizon: usize,
}

/// Per-class summary: predicted vs actual with anomaly annotations.
pub fn class_summary_csv(rows: &[ClassReplayRow]) -> String {
    let mut out = String::from("step,actual,forecast,pct_error,smoothed,flags,event,active_model\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            fmt_num(r.actual),
            fmt_opt(r.forecast),
            fmt_opt(r.pct_error),
            fmt_num(r.smoothed),
            r.kinds,
            r.event,
            r.active_model
        ));
    }
    out
}

/// Per-step expert-selector decision log.
pub fn decision_log_csv(rows: &[ClassReplayRow]) -> String {
    let mut out = String::from("step,active_model,forecast,actual,pct_error,ewma_active,horizon,event\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.active_model,
            fmt_opt(r.forecast),
            fmt_num(r.actual),
            fmt_opt(r.pct_error),
            fmt_num(r.ewma_active),
            r.horizon,
            r.event
        ));
    }
    out
}

/// Histogram bin edges fixed for cross-run comparability: 21 equal-width
/// bins on [-1, +1] plus an overflow bin at each end.
pub const HISTOGRAM_BINS: usize = 21;

/// Bins signed percentage errors. Returns (bin_lo, bin_hi, count) with
/// infinite edges on the overflow bins.
pub fn error_histogram(errors: &[f64]) -> Vec<(f64, f64, u64)> {
    let width = 2.0 / HISTOGRAM_BINS as f64;
    let mut bins: Vec<(f64, f64, u64)> = Vec::with_capacity(HISTOGRAM_BINS + 2);
    bins.push((f64::NEG_INFINITY, -1.0, 0));
    for i in 0..HISTOGRAM_BINS {
        bins.push((-1.0 + i as f64 * width, -1.0 + (i + 1) as f64 * width, 0));
    }
    bins.push((1.0, f64::INFINITY, 0));
    for &e in errors {
        let idx = if e < -1.0 {
            0
        } else if e > 1.0 {
            HISTOGRAM_BINS + 1
        } else {
            // values exactly at +1 land in the last regular bin
            1 + (((e + 1.0) / width) as usize).min(HISTOGRAM_BINS - 1)
        };
        bins[idx].2 += 1;
    }
    bins
}

pub fn histogram_csv(bins: &[(f64, f64, u64)]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for &(lo, hi, count) in bins {
        out.push_str(&format!("{},{},{count}\n", fmt_num(lo), fmt_num(hi)));
    }
    out
}

/// Empirical CDF evaluated at each distinct duration, plus the 10%/90%
/// quantiles and the R² of the linear fit of CDF against log10(duration)
/// between them.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CdfStats {
    pub q10: f64,
    pub q90: f64,
    pub r_squared: f64,
}

pub fn duration_cdf(durations: &[f64]) -> (Vec<(f64, f64)>, CdfStats) {
    assert!(!durations.is_empty(), "need at least one duration");
    let mut sorted = durations.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &d) in sorted.iter().enumerate() {
        let cdf = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == d => last.1 = cdf,
            _ => points.push((d, cdf)),
        }
    }
    let q10 = stats::nearest_rank_quantile(&sorted, 0.10);
    let q90 = stats::nearest_rank_quantile(&sorted, 0.90);
    let in_band: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(d, _)| d >= q10 && d <= q90 && d > 0.0)
        .collect();
    let r_squared = if in_band.len() >= 2 {
        let xs: Vec<f64> = in_band.iter().map(|p| p.0.log10()).collect();
        let ys: Vec<f64> = in_band.iter().map(|p| p.1).collect();
        stats::linear_fit(&xs, &ys).2
    } else {
        1.0
    };
    (points, CdfStats { q10, q90, r_squared })
}

pub fn cdf_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("duration,cdf\n");
    for &(d, c) in points {
        out.push_str(&format!("{},{}\n", fmt_num(d), fmt_num(c)));
    }
    out
}

pub fn cdf_stats_csv(stats: &CdfStats) -> String {
    format!(
        "q10,q90,r_squared\n{},{},{}\n",
        fmt_num(stats.q10),
        fmt_num(stats.q90),
        fmt_num(stats.r_squared)
    )
}

/// Per-job scheduler decision log.
pub fn sim_decisions_csv(outcomes: &[JobOutcome]) -> String {
    let mut out =
        String::from("job_number,class,verdict,budget,planned_start,actual_start,completion,deadline,hit\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            o.job_number,
            o.class,
            o.verdict,
            fmt_num(o.budget),
            o.planned_start.map(|v| v.to_string()).unwrap_or_default(),
            fmt_opt(o.actual_start),
            fmt_opt(o.completion),
            o.deadline,
            o.hit.map(|h| h.to_string()).unwrap_or_default(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_symmetric_pair() {
        let bins = error_histogram(&[-0.5, 0.5]);
        assert_eq!(bins.len(), HISTOGRAM_BINS + 2);
        let total: u64 = bins.iter().map(|b| b.2).sum();
        assert_eq!(total, 2);
        let neg = bins.iter().find(|&&(lo, hi, _)| lo <= -0.5 && -0.5 < hi).unwrap();
        let pos = bins.iter().find(|&&(lo, hi, _)| lo <= 0.5 && 0.5 < hi).unwrap();
        assert_eq!(neg.2, 1);
        assert_eq!(pos.2, 1);
        // symmetric bins around zero
        assert!((neg.0 + pos.1).abs() < 1e-12);
    }

    #[test]
    fn histogram_perfect_forecasts_pile_at_zero() {
        let bins = error_histogram(&vec![0.0; 10]);
        let zero_bin = bins.iter().find(|&&(lo, hi, _)| lo <= 0.0 && 0.0 < hi).unwrap();
        assert_eq!(zero_bin.2, 10);
    }

    #[test]
    fn histogram_overflow_bins() {
        let bins = error_histogram(&[-3.0, 4.0, 1.0, -1.0]);
        assert_eq!(bins[0].2, 1); // -3
        assert_eq!(bins[HISTOGRAM_BINS + 1].2, 1); // 4
        // +/-1 exactly stay in the regular bins
        let inner: u64 = bins[1..=HISTOGRAM_BINS].iter().map(|b| b.2).sum();
        assert_eq!(inner, 2);
    }

    #[test]
    fn cdf_points_for_distinct_durations() {
        let (points, _) = duration_cdf(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(points, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
    }

    #[test]
    fn cdf_single_duration() {
        let (points, stats) = duration_cdf(&[7.0]);
        assert_eq!(points, vec![(7.0, 1.0)]);
        assert_eq!(stats.q10, 7.0);
        assert_eq!(stats.q90, 7.0);
    }

    #[test]
    fn cdf_duplicates_collapse() {
        let (points, _) = duration_cdf(&[5.0, 5.0, 10.0]);
        assert_eq!(points, vec![(5.0, 2.0 / 3.0), (10.0, 1.0)]);
    }

    #[test]
    fn log_uniform_cdf_is_log_linear() {
        use crate::rng::SplitMix64;
        let mut rng = SplitMix64::new(1);
        let durations: Vec<f64> = (0..10_000).map(|_| rng.log_uniform(50.0, 5000.0)).collect();
        let (_, stats) = duration_cdf(&durations);
        assert!(stats.r_squared >= 0.99, "r2 {}", stats.r_squared);
    }

    #[test]
    fn csv_headers_and_precision() {
        let rows = vec![ClassReplayRow {
            step: 0,
            actual: 123.456,
            forecast: Some(120.0),
            pct_error: Some(-0.028),
            smoothed: 125.0,
            kinds: FlagKinds::default(),
            event: AnomalyEvent::None,
            active_model: "median(10)".into(),
            ewma_active: 0.05,
            horizon: 3,
        }];
        let summary = class_summary_csv(&rows);
        let mut lines = summary.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,actual,forecast,pct_error,smoothed,flags,event,active_model"
        );
        let data = lines.next().unwrap();
        assert!(data.contains("1.234560000000000e2"), "{data}");

        let log = decision_log_csv(&rows);
        assert!(log.starts_with("step,active_model,forecast,actual,pct_error,ewma_active,horizon,event\n"));
    }
}
