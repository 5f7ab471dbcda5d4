//! Partitions the job stream into classes with consistent statistics, keyed
//! by submitter meta-data (group, owner, submitting host, and an
//! office-hours/off-hours tag on the submission time).

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, FixedOffset, TimeZone, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::trace::{derive_wallclock, JobRecord};

/// Which meta-data fields select a class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassKeySpec {
    pub use_group: bool,
    pub use_owner: bool,
    pub use_submit_host: bool,
    pub use_time_window: bool,
    /// Local office hours as a half-open `[start_hour, end_hour)` range.
    pub office_hours: (u32, u32),
    pub utc_offset_minutes: i32,
}

impl Default for ClassKeySpec {
    fn default() -> Self {
        Self {
            use_group: true,
            use_owner: false,
            use_submit_host: false,
            use_time_window: false,
            office_hours: (9, 18),
            utc_offset_minutes: 0,
        }
    }
}

impl ClassKeySpec {
    pub fn validate(&self) -> Result<(), String> {
        let (start, end) = self.office_hours;
        if !(start < end && end <= 24) {
            return Err(format!("office_hours must satisfy 0 <= start < end <= 24, got {start}..{end}"));
        }
        if !(self.use_group || self.use_owner || self.use_submit_host || self.use_time_window) {
            return Err("at least one class key flag must be enabled".into());
        }
        Ok(())
    }

    /// Parses the compact CLI form: comma-separated flags out of
    /// `group`, `owner`, `host`, `window`.
    pub fn parse_flags(s: &str) -> Result<Self, String> {
        let mut spec = ClassKeySpec {
            use_group: false,
            ..Default::default()
        };
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "group" => spec.use_group = true,
                "owner" => spec.use_owner = true,
                "host" => spec.use_submit_host = true,
                "window" => spec.use_time_window = true,
                other => return Err(format!("unknown class key flag {other:?}")),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowTag {
    Office,
    OffHours,
}

impl fmt::Display for WindowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowTag::Office => write!(f, "office"),
            WindowTag::OffHours => write!(f, "offhours"),
        }
    }
}

/// A class selector; fields are present exactly when the spec enables them.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassKey {
    pub group: Option<String>,
    pub owner: Option<String>,
    pub submit_host: Option<String>,
    pub window_tag: Option<WindowTag>,
}

impl ClassKey {
    pub fn from_group(group: &str) -> Self {
        ClassKey {
            group: Some(group.to_string()),
            ..Default::default()
        }
    }
}

impl fmt::Display for ClassKey {
    /// Canonical text form `group=<g>|owner=<o>|host=<h>|win=<w>` with
    /// absent fields omitted; used in report file names and CSV columns.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(g) = &self.group {
            parts.push(format!("group={g}"));
        }
        if let Some(o) = &self.owner {
            parts.push(format!("owner={o}"));
        }
        if let Some(h) = &self.submit_host {
            parts.push(format!("host={h}"));
        }
        if let Some(w) = &self.window_tag {
            parts.push(format!("win={w}"));
        }
        write!(f, "{}", parts.join("|"))
    }
}

/// One observation fed to forecasters: completion time, wall-clock seconds,
/// and the job number for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub end_time: i64,
    pub duration: f64,
    pub job_number: u64,
}

/// An ordered duration series plus the key that selected it.
#[derive(Debug, Clone)]
pub struct JobClass {
    pub key: ClassKey,
    pub observations: Vec<Observation>,
}

impl JobClass {
    pub fn durations(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.duration).collect()
    }

    /// Classes below the minimum size are routed past the forecasters and
    /// scheduled best-effort.
    pub fn is_modellable(&self, min_class_size: usize) -> bool {
        self.observations.len() >= min_class_size
    }
}

/// Office iff local weekday Mon-Fri and local hour within the configured
/// half-open range. Tagging uses the submission time: the submitter's
/// workflow context is set when the job is submitted, not when it starts.
pub fn time_window_tag(epoch_seconds: i64, spec: &ClassKeySpec) -> WindowTag {
    let offset = FixedOffset::east_opt(spec.utc_offset_minutes * 60)
        .expect("utc offset out of range");
    let local = offset
        .timestamp_opt(epoch_seconds, 0)
        .single()
        .expect("timestamp out of range");
    let weekday_ok = !matches!(local.weekday(), Weekday::Sat | Weekday::Sun);
    let (start, end) = spec.office_hours;
    if weekday_ok && (start..end).contains(&local.hour()) {
        WindowTag::Office
    } else {
        WindowTag::OffHours
    }
}

pub fn make_class_key(record: &JobRecord, spec: &ClassKeySpec) -> ClassKey {
    ClassKey {
        group: spec.use_group.then(|| record.group.clone()),
        owner: spec.use_owner.then(|| record.owner.clone()),
        submit_host: spec.use_submit_host.then(|| record.exec_host.clone()),
        window_tag: spec
            .use_time_window
            .then(|| time_window_tag(record.submit_time, spec)),
    }
}

/// True when the record can be fed to forecasters: not failed, and with a
/// derivable positive duration.
pub fn is_forecastable(record: &JobRecord) -> bool {
    matches!(derive_wallclock(record), Ok(d) if d > 0)
}

/// Groups records into classes. Input must be sorted by end_time; each
/// class preserves that order. Failed and zero-duration records are
/// excluded, so the class sizes sum to the forecastable record count.
pub fn partition(records: &[JobRecord], spec: &ClassKeySpec) -> BTreeMap<ClassKey, JobClass> {
    let mut classes: BTreeMap<ClassKey, JobClass> = BTreeMap::new();
    for record in records {
        let duration = match derive_wallclock(record) {
            Ok(d) if d > 0 => d as f64,
            _ => continue,
        };
        let key = make_class_key(record, spec);
        classes
            .entry(key.clone())
            .or_insert_with(|| JobClass {
                key,
                observations: Vec::new(),
            })
            .observations
            .push(Observation {
                end_time: record.end_time,
                duration,
                job_number: record.job_number,
            });
    }
    classes
}
