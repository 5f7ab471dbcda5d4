//! End-to-end orchestration: load traces, partition into classes, replay
//! each class through the forecaster ensemble and anomaly detector, and
//! optionally feed the stream through the deadline scheduler simulation.
//! Every artifact is a pure function of (inputs, config, seed).

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyDetector, LowessConfig, Thresholds};
use crate::classing::{make_class_key, partition, ClassKey, ClassKeySpec};
use crate::ensemble::{Ensemble, EnsembleConfig};
use crate::report::{self, ClassReplayRow};
use crate::rng::{derive_seed, SplitMix64};
use crate::sim::{
    run_simulation, AdmissionPolicy, ClusterSpec, JobRequest, PolicyAssessment, SimReport,
};
use crate::trace::{
    derive_wallclock, load_trace, IngestError, IngestStats, JobRecord, TraceLoadOptions,
};

/// Deadline synthesis for trace-driven simulation: each job's deadline is
/// `submit + grace + slack * true_duration` with slack drawn uniformly per
/// job from the seeded range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSettings {
    pub slack_lo: f64,
    pub slack_hi: f64,
    pub grace_seconds: i64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            slack_lo: 1.5,
            slack_hi: 4.0,
            grace_seconds: 600,
        }
    }
}

/// Whole-run configuration; every field has a default and a JSON key, and
/// the CLI can override the scalar ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub confidence: f64,
    pub class_key: ClassKeySpec,
    /// Classes below this size are unmodellable and bypass forecasting.
    pub min_class_size: usize,
    pub ingest: TraceLoadOptions,
    pub ensemble: EnsembleConfig,
    pub thresholds: Thresholds,
    pub lowess: LowessConfig,
    /// Trailing observations smoothed per detector step.
    pub detector_window: usize,
    /// Recent absolute percentage errors kept per class for safety margins.
    pub error_window: usize,
    pub cluster: ClusterSpec,
    pub sim: SimSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            out_dir: PathBuf::from("out"),
            seed: 42,
            confidence: 0.9,
            class_key: ClassKeySpec::default(),
            min_class_size: 20,
            ingest: TraceLoadOptions::default(),
            ensemble: EnsembleConfig::default(),
            thresholds: Thresholds::default(),
            lowess: LowessConfig::default(),
            detector_window: 50,
            error_window: 200,
            cluster: ClusterSpec::uniform(8, 4),
            sim: SimSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let config = |msg: String| PipelineError::Config(msg);
        self.class_key.validate().map_err(config)?;
        self.thresholds.validate().map_err(config)?;
        self.lowess.validate().map_err(config)?;
        self.cluster.validate().map_err(config)?;
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PipelineError::Config(format!(
                "confidence must be in (0,1), got {}",
                self.confidence
            )));
        }
        if self.sim.slack_lo <= 0.0 || self.sim.slack_hi < self.sim.slack_lo {
            return Err(PipelineError::Config("invalid sim slack range".into()));
        }
        if self.min_class_size == 0 {
            return Err(PipelineError::Config("min_class_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl PipelineError {
    /// Distinct process exit codes per failure family.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io(_) => 3,
            PipelineError::Ingest(IngestError::Io(_)) => 3,
            PipelineError::Ingest(IngestError::TraceRejected { .. }) => 4,
        }
    }
}

/// How much of the pipeline to run; each stage includes the previous ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunMode {
    Ingest,
    Report,
    Replay,
    Simulate,
}

/// What a run produced, for CLI reporting and tests.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub ingest: IngestStats,
    pub classes: usize,
    pub sim_report: Option<SimReport>,
}

/// Replays one duration series through a fresh detector/ensemble pair.
/// Returns the per-step rows and the final ensemble (for checkpointing).
pub fn replay_durations(durations: &[f64], cfg: &PipelineConfig) -> (Vec<ClassReplayRow>, Ensemble) {
    let mut ensemble = Ensemble::new(cfg.ensemble.clone());
    let mut detector =
        AnomalyDetector::new(cfg.thresholds.clone(), cfg.lowess.clone(), cfg.detector_window);
    let mut rows = Vec::with_capacity(durations.len());
    for (step, &actual) in durations.iter().enumerate() {
        let prev = ensemble.current_forecast();
        let flag = detector.observe(actual, prev.map(|f| f.point));
        let out = ensemble.advance(actual, &flag, cfg.confidence);
        rows.push(ClassReplayRow {
            step: step as u64,
            actual,
            forecast: prev.map(|f| f.point),
            pct_error: out.pct_error,
            smoothed: detector.last_smoothed(),
            kinds: flag.kinds,
            event: flag.event,
            active_model: out.active_model,
            ewma_active: out.ewma_active,
            horizon: out.horizon,
        });
    }
    (rows, ensemble)
}

struct ClassPipeline {
    ensemble: Ensemble,
    detector: AnomalyDetector,
    recent_abs_errors: VecDeque<f64>,
}

/// Admission policy backed by per-class ensembles that learn online from
/// completions (the monitoring feedback loop). Classes below the minimum
/// size are reported unmodellable and run best-effort.
pub struct EnsemblePolicy {
    cfg: PipelineConfig,
    classes: BTreeMap<ClassKey, ClassPipeline>,
}

impl EnsemblePolicy {
    pub fn new(cfg: PipelineConfig) -> Self {
        Self {
            cfg,
            classes: BTreeMap::new(),
        }
    }

    fn class_mut(&mut self, key: &ClassKey) -> &mut ClassPipeline {
        let cfg = &self.cfg;
        self.classes.entry(key.clone()).or_insert_with(|| ClassPipeline {
            ensemble: Ensemble::new(cfg.ensemble.clone()),
            detector: AnomalyDetector::new(
                cfg.thresholds.clone(),
                cfg.lowess.clone(),
                cfg.detector_window,
            ),
            recent_abs_errors: VecDeque::new(),
        })
    }
}

impl AdmissionPolicy for EnsemblePolicy {
    fn assess(&mut self, job: &JobRequest, _now: f64) -> Option<PolicyAssessment> {
        let min_class_size = self.cfg.min_class_size as u64;
        let cp = self.class_mut(&job.class_key);
        if cp.ensemble.observations() < min_class_size || cp.recent_abs_errors.is_empty() {
            return None;
        }
        let forecast = cp.ensemble.current_forecast()?;
        let errors: Vec<f64> = cp.recent_abs_errors.iter().copied().collect();
        let margin = crate::sim::safety_margin(&errors, job.requested_confidence);
        let confidence = cp.ensemble.effective_confidence(job.requested_confidence);
        Some(PolicyAssessment {
            forecast_point: forecast.point.max(1.0),
            margin,
            effective_level: confidence.level,
            degraded: confidence.degraded,
        })
    }

    fn feedback(&mut self, class: &ClassKey, actual_duration: f64) {
        let confidence = self.cfg.confidence;
        let error_window = self.cfg.error_window;
        let cp = self.class_mut(class);
        let prev = cp.ensemble.current_forecast().map(|f| f.point);
        let flag = cp.detector.observe(actual_duration, prev);
        let out = cp.ensemble.advance(actual_duration, &flag, confidence);
        if let Some(e) = out.pct_error {
            if cp.recent_abs_errors.len() == error_window {
                cp.recent_abs_errors.pop_front();
            }
            cp.recent_abs_errors.push_back(e.abs());
        }
    }
}

/// Builds simulator requests from trace records: deadlines are synthesised
/// per [`SimSettings`] with per-job seeded slack, output sorted by submit
/// time then job number. Failed records are skipped.
pub fn build_requests(records: &[JobRecord], cfg: &PipelineConfig) -> Vec<JobRequest> {
    let mut requests: Vec<JobRequest> = records
        .iter()
        .filter_map(|r| {
            let duration = match derive_wallclock(r) {
                Ok(d) if d > 0 => d as f64,
                _ => return None,
            };
            let mut rng = SplitMix64::new(derive_seed(cfg.seed, r.job_number));
            let slack = rng.uniform(cfg.sim.slack_lo, cfg.sim.slack_hi);
            let deadline =
                r.submit_time + cfg.sim.grace_seconds + (slack * duration).ceil() as i64;
            Some(JobRequest {
                job_number: r.job_number,
                class_key: make_class_key(r, &cfg.class_key),
                submit_time: r.submit_time,
                deadline,
                requested_confidence: cfg.confidence,
                true_duration: duration,
            })
        })
        .collect();
    requests.sort_by_key(|r| (r.submit_time, r.job_number));
    requests
}

fn sanitize_for_filename(key: &ClassKey) -> String {
    let mut out: String = key
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    out.truncate(60);
    out
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Vec<JobRecord>, IngestStats), PipelineError> {
    if cfg.inputs.is_empty() {
        return Err(PipelineError::Config("no input trace given".into()));
    }
    let mut all_records = Vec::new();
    let mut total = IngestStats::default();
    for path in &cfg.inputs {
        let file = fs::File::open(path)?;
        let (records, stats) = load_trace(BufReader::new(file), &cfg.ingest)?;
        all_records.extend(records);
        total.parsed += stats.parsed;
        total.skipped += stats.skipped;
        total.malformed += stats.malformed;
        total.filtered_short += stats.filtered_short;
        total.failed += stats.failed;
    }
    all_records.sort_by_key(|r| (r.end_time, r.job_number));
    Ok((all_records, total))
}

struct ArtifactWriter {
    out_dir: PathBuf,
    files: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn new(out_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| PipelineError::Config(format!("serialisation failed: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// Runs the pipeline up to the requested stage and writes all artifacts
/// for that stage into the configured output directory.
pub fn run_pipeline(cfg: &PipelineConfig, mode: RunMode) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let (records, ingest) = load_inputs(cfg)?;
    let mut writer = ArtifactWriter::new(&cfg.out_dir)?;
    writer.write_json("run_config.json", cfg)?;
    writer.write_json("ingest_stats.json", &ingest)?;

    let mut summary = RunSummary {
        files: Vec::new(),
        ingest,
        classes: 0,
        sim_report: None,
    };

    if mode >= RunMode::Report {
        let durations: Vec<f64> = records
            .iter()
            .filter_map(|r| derive_wallclock(r).ok())
            .filter(|&d| d > 0)
            .map(|d| d as f64)
            .collect();
        if !durations.is_empty() {
            let (points, stats) = report::duration_cdf(&durations);
            writer.write("duration_cdf.csv", &report::cdf_csv(&points))?;
            writer.write("duration_cdf_stats.csv", &report::cdf_stats_csv(&stats))?;
        }
    }

    if mode >= RunMode::Replay {
        let classes = partition(&records, &cfg.class_key);
        summary.classes = classes.len();
        let mut index = String::from("class,prefix,observations,modellable\n");
        for (i, (key, class)) in classes.iter().enumerate() {
            let prefix = format!("class_{i:03}_{}", sanitize_for_filename(key));
            let modellable = class.is_modellable(cfg.min_class_size);
            index.push_str(&format!(
                "{key},{prefix},{},{modellable}\n",
                class.observations.len()
            ));
            if !modellable {
                continue; // unmodellable classes bypass the forecasters
            }
            let durations = class.durations();
            let (rows, ensemble) = replay_durations(&durations, cfg);
            writer.write(&format!("{prefix}_summary.csv"), &report::class_summary_csv(&rows))?;
            writer.write(&format!("{prefix}_decisions.csv"), &report::decision_log_csv(&rows))?;
            let errors: Vec<f64> = rows.iter().filter_map(|r| r.pct_error).collect();
            let bins = report::error_histogram(&errors);
            writer.write(&format!("{prefix}_histogram.csv"), &report::histogram_csv(&bins))?;
            let states: Vec<serde_json::Value> = ensemble
                .model_states()
                .iter()
                .map(|(name, state)| {
                    let mut v = serde_json::to_value(state).expect("model state serialises");
                    v.as_object_mut()
                        .expect("model state is an object")
                        .insert("name".into(), serde_json::Value::String(name.clone()));
                    v
                })
                .collect();
            writer.write_json(&format!("{prefix}_models.json"), &states)?;
        }
        writer.write("classes.csv", &index)?;
    }

    if mode >= RunMode::Simulate {
        let requests = build_requests(&records, cfg);
        let mut policy = EnsemblePolicy::new(cfg.clone());
        let (sim_report, outcomes) = run_simulation(&requests, &cfg.cluster, &mut policy);
        writer.write_json("sim_report.json", &sim_report)?;
        writer.write("sim_decisions.csv", &report::sim_decisions_csv(&outcomes))?;
        summary.sim_report = Some(sim_report);
    }

    summary.files = writer.files;
    Ok(summary)
}
