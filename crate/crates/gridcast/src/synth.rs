//! Synthetic workload generation. Per-class series carry multiplicative
//! lognormal or AR(1)-correlated noise around a base level for forecasting
//! experiments; full aggregate workloads reproduce the empirical shape of
//! production traces — a log-uniform bulk between the duration bounds, a
//! short/failed tail, and a small fraction of extremely long jobs.
//!
//! Everything derives from explicit seeds through the documented generator
//! in [`crate::rng`]; the trace header records the generator identifier and
//! the full mix specification, so a trace is reproducible byte-for-byte.

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, SplitMix64, GENERATOR_ID};
use crate::trace::JobRecord;

/// Multiplicative duration noise around the base level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// i.i.d. lognormal: duration = base * exp(N(0, sigma_log)).
    Lognormal { sigma_log: f64 },
    /// AR(1) log-deviations: e_t = phi * e_{t-1} + N(0, sigma).
    Ar1 { phi: f64, sigma: f64 },
}

/// Generator for one class's series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassGenSpec {
    pub base_level: f64,
    pub noise: NoiseSpec,
    pub n_jobs: usize,
    /// Mean of the exponential interarrival times, seconds.
    pub interarrival_mean: f64,
    pub seed: u64,
}

impl ClassGenSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_level <= 0.0 {
            return Err("base_level must be positive".into());
        }
        match self.noise {
            NoiseSpec::Lognormal { sigma_log } if sigma_log <= 0.0 => {
                return Err("sigma_log must be positive".into())
            }
            NoiseSpec::Ar1 { phi, sigma } if phi.abs() >= 1.0 || sigma <= 0.0 => {
                return Err("ar1 noise needs |phi| < 1 and sigma > 0".into())
            }
            _ => {}
        }
        if self.interarrival_mean <= 0.0 {
            return Err("interarrival_mean must be positive".into());
        }
        Ok(())
    }
}

/// One class in an aggregate workload: meta-data plus its generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadClass {
    pub group: String,
    pub owner: String,
    pub submit_host: String,
    pub gen: ClassGenSpec,
}

/// Aggregate workload shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadMixSpec {
    pub classes: Vec<WorkloadClass>,
    /// Fraction of jobs that fail or finish in under 10 seconds.
    pub short_fail_fraction: f64,
    /// Fraction of jobs exceeding `long_threshold` seconds.
    pub long_fraction: f64,
    pub long_threshold: f64,
    /// Log-uniform bulk duration bounds (seconds).
    pub duration_bounds: (f64, f64),
    /// Epoch base for the first arrivals.
    pub trace_start: i64,
    pub seed: u64,
}

impl Default for WorkloadMixSpec {
    fn default() -> Self {
        Self {
            classes: (0..4)
                .map(|i| WorkloadClass {
                    group: format!("grp{i}"),
                    owner: format!("user{i}"),
                    submit_host: format!("submit{i:02}"),
                    gen: ClassGenSpec {
                        base_level: 200.0 * (i + 1) as f64,
                        noise: NoiseSpec::Lognormal { sigma_log: 0.2 },
                        n_jobs: 12_500,
                        interarrival_mean: 120.0,
                        seed: 0, // per-class seeds derive from the mix seed
                    },
                })
                .collect(),
            short_fail_fraction: 0.04,
            long_fraction: 0.025,
            long_threshold: 1e5,
            duration_bounds: (50.0, 5000.0),
            trace_start: 1_100_000_000,
            seed: 42,
        }
    }
}

impl WorkloadMixSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.classes.is_empty() {
            return Err("workload needs at least one class".into());
        }
        if self.short_fail_fraction + self.long_fraction >= 1.0 {
            return Err("tail fractions must sum below 1".into());
        }
        let (lo, hi) = self.duration_bounds;
        if !(0.0 < lo && lo < hi) {
            return Err("duration_bounds must satisfy 0 < lo < hi".into());
        }
        for c in &self.classes {
            c.gen.validate()?;
        }
        Ok(())
    }

    pub fn total_jobs(&self) -> usize {
        self.classes.iter().map(|c| c.gen.n_jobs).sum()
    }
}

/// Generates one class's (submit_offset, duration) series: exponential
/// interarrivals, durations = base_level times multiplicative noise. Fully
/// determined by the spec's seed. Offsets start at the first interarrival.
pub fn gen_class_series(spec: &ClassGenSpec) -> Vec<(f64, f64)> {
    let mut rng = SplitMix64::new(spec.seed);
    let mut t = 0.0;
    let mut log_dev = 0.0; // AR(1) state
    let mut out = Vec::with_capacity(spec.n_jobs);
    for i in 0..spec.n_jobs {
        t += rng.exponential(spec.interarrival_mean);
        let noise = match spec.noise {
            NoiseSpec::Lognormal { sigma_log } => sigma_log * rng.normal(),
            NoiseSpec::Ar1 { phi, sigma } => {
                log_dev = if i == 0 {
                    // start the chain at its stationary scale
                    sigma / (1.0 - phi * phi).sqrt() * rng.normal()
                } else {
                    phi * log_dev + sigma * rng.normal()
                };
                log_dev
            }
        };
        out.push((t, spec.base_level * noise.exp()));
    }
    out
}

/// Multiplies durations at indices >= `at`.
pub fn inject_mode_change(series: &[(f64, f64)], at: usize, factor: f64) -> Vec<(f64, f64)> {
    series
        .iter()
        .enumerate()
        .map(|(i, &(t, d))| if i >= at { (t, d * factor) } else { (t, d) })
        .collect()
}

/// Accounting records for one class series (no tails); start = submit,
/// completion back-to-back with the duration.
pub fn class_records(
    class: &WorkloadClass,
    series: &[(f64, f64)],
    trace_start: i64,
    first_job_number: u64,
) -> Vec<JobRecord> {
    series
        .iter()
        .enumerate()
        .map(|(i, &(offset, duration))| {
            let submit = trace_start + offset.round() as i64;
            let dur = duration.round().max(1.0) as u64;
            JobRecord {
                queue_name: "all.q".into(),
                exec_host: class.submit_host.clone(),
                group: class.group.clone(),
                owner: class.owner.clone(),
                job_name: "job.sh".into(),
                job_number: first_job_number + i as u64,
                submit_time: submit,
                start_time: submit,
                end_time: submit + dur as i64,
                failed_code: 0,
                exit_status: 0,
                ru_wallclock: dur,
            }
        })
        .collect()
}

/// Generates the full aggregate workload. Each class contributes arrivals
/// from its own derived sub-stream; durations are drawn class-independent
/// from the aggregate law — log-uniform on the bulk bounds, with the
/// configured short/failed and extremely-long tails. Job numbers are
/// assigned in submission order.
pub fn gen_workload(mix: &WorkloadMixSpec) -> Vec<JobRecord> {
    mix.validate().expect("invalid workload mix");
    let (lo, hi) = mix.duration_bounds;
    struct Proto {
        class_idx: usize,
        submit: i64,
        duration: u64,
        failed: bool,
    }
    let mut protos: Vec<Proto> = Vec::with_capacity(mix.total_jobs());
    for (class_idx, class) in mix.classes.iter().enumerate() {
        let mut rng = SplitMix64::new(derive_seed(mix.seed, class_idx as u64));
        let mut t = mix.trace_start as f64;
        for _ in 0..class.gen.n_jobs {
            t += rng.exponential(class.gen.interarrival_mean);
            let bucket = rng.next_f64();
            let (duration, failed) = if bucket < mix.short_fail_fraction {
                let failed = rng.next_f64() < 0.5;
                (rng.uniform_int(1, 9).max(1), failed)
            } else if bucket < mix.short_fail_fraction + mix.long_fraction {
                // nudged above the threshold so rounding cannot dip below
                (rng.log_uniform(mix.long_threshold * 1.001, mix.long_threshold * 10.0).round()
                    as u64, false)
            } else {
                (rng.log_uniform(lo, hi).round().max(1.0) as u64, false)
            };
            protos.push(Proto {
                class_idx,
                submit: t.round() as i64,
                duration,
                failed,
            });
        }
    }
    protos.sort_by_key(|p| (p.submit, p.class_idx));
    protos
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let class = &mix.classes[p.class_idx];
            let dur = p.duration;
            JobRecord {
                queue_name: "all.q".into(),
                exec_host: class.submit_host.clone(),
                group: class.group.clone(),
                owner: class.owner.clone(),
                job_name: "job.sh".into(),
                job_number: i as u64 + 1,
                submit_time: p.submit,
                start_time: p.submit,
                end_time: p.submit + dur as i64,
                failed_code: if p.failed { 100 } else { 0 },
                exit_status: if p.failed { 137 } else { 0 },
                ru_wallclock: dur,
            }
        })
        .collect()
}

/// Serialises a workload as an accounting trace with a header comment
/// recording the generator identifier and the full mix specification.
pub fn workload_to_trace(mix: &WorkloadMixSpec, records: &[JobRecord]) -> String {
    let spec_json = serde_json::to_string(mix).expect("mix spec serialises");
    let mut out = String::new();
    out.push_str("# synthetic accounting trace\n");
    out.push_str(&format!("# generator={GENERATOR_ID}\n"));
    out.push_str(&format!("# spec={spec_json}\n"));
    for r in records {
        out.push_str(&r.to_accounting_line());
        out.push('\n');
    }
    out
}
