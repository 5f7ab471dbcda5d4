//! Accounting-trace ingestion: parses colon-delimited accounting lines into
//! validated job records and derives wall-clock durations.
//!
//! Line layout (classic 13+-field accounting order, positional):
//!
//! ```text
//! 0 qname : 1 hostname : 2 group : 3 owner : 4 job_name : 5 job_number :
//! 6 account (ignored) : 7 priority (ignored) : 8 submission_time :
//! 9 start_time : 10 end_time : 11 failed : 12 exit_status : 13 ru_wallclock
//! ```
//!
//! Extra trailing fields vary by middleware version and are ignored. Lines
//! starting with `#` are comments.

use std::io::BufRead;

use thiserror::Error;

/// One accounting-file entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRecord {
    pub queue_name: String,
    pub exec_host: String,
    pub group: String,
    pub owner: String,
    pub job_name: String,
    pub job_number: u64,
    /// Epoch seconds.
    pub submit_time: i64,
    pub start_time: i64,
    pub end_time: i64,
    /// Non-zero means the job failed; such records never reach forecasters.
    pub failed_code: i64,
    pub exit_status: i64,
    /// Recorded wall-clock seconds; 0 means "derive from end - start".
    pub ru_wallclock: u64,
}

impl JobRecord {
    /// Serialises back to the 14-field accounting line (account and
    /// priority are written as constants since they are not retained).
    pub fn to_accounting_line(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}:{}:sge:0:{}:{}:{}:{}:{}:{}",
            self.queue_name,
            self.exec_host,
            self.group,
            self.owner,
            self.job_name,
            self.job_number,
            self.submit_time,
            self.start_time,
            self.end_time,
            self.failed_code,
            self.exit_status,
            self.ru_wallclock
        )
    }
}

/// Options for [`load_trace`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TraceLoadOptions {
    /// Records shorter than this many seconds are filtered out (test runs
    /// and near-instant failures, typically ~4% of a trace).
    pub min_duration_filter: u64,
    pub drop_failed: bool,
    /// Fatal threshold on the fraction of malformed non-comment lines.
    pub max_malformed_fraction: f64,
}

impl Default for TraceLoadOptions {
    fn default() -> Self {
        Self {
            min_duration_filter: 10,
            drop_failed: true,
            max_malformed_fraction: 0.05,
        }
    }
}

/// Per-load counters. The non-`skipped` counters partition the non-comment
/// input lines: `parsed + malformed + filtered_short + failed` equals the
/// number of non-comment lines. `skipped` counts comment lines.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct IngestStats {
    /// Records that made it into the output.
    pub parsed: u64,
    /// Comment lines.
    pub skipped: u64,
    /// Unparseable lines plus records violating submit <= start <= end or
    /// duplicating a job number.
    pub malformed: u64,
    pub filtered_short: u64,
    /// Records dropped because failed_code != 0 (only when drop_failed).
    pub failed: u64,
}

impl IngestStats {
    /// Sum over the outcome counters; equals the non-comment line count.
    pub fn non_comment_lines(&self) -> u64 {
        self.parsed + self.malformed + self.filtered_short + self.failed
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("expected at least 14 colon-separated fields, got {0}")]
    TooFewFields(usize),
    #[error("field {field} ({name}) is not numeric: {value:?}")]
    BadNumber {
        field: usize,
        name: &'static str,
        value: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("end_time {end} precedes start_time {start}")]
    EndBeforeStart { start: i64, end: i64 },
    /// Not a defect in the record, but a signal that it must not be fed to
    /// forecasters.
    #[error("record failed with code {0}; excluded from forecasting")]
    Failed(i64),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error(
        "trace rejected: {malformed} of {lines} non-comment lines malformed \
         (limit {limit})"
    )]
    TraceRejected {
        malformed: u64,
        lines: u64,
        limit: f64,
    },
}

/// Parses one physical line. `Ok(None)` for comment lines.
pub fn parse_accounting_line(line: &str) -> Result<Option<JobRecord>, ParseError> {
    if line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split(':').collect();
    if fields.len() < 14 {
        return Err(ParseError::TooFewFields(fields.len()));
    }
    fn num<T: std::str::FromStr>(
        fields: &[&str],
        idx: usize,
        name: &'static str,
    ) -> Result<T, ParseError> {
        fields[idx].trim().parse().map_err(|_| ParseError::BadNumber {
            field: idx,
            name,
            value: fields[idx].to_string(),
        })
    }
    Ok(Some(JobRecord {
        queue_name: fields[0].to_string(),
        exec_host: fields[1].to_string(),
        group: fields[2].to_string(),
        owner: fields[3].to_string(),
        job_name: fields[4].to_string(),
        job_number: num(&fields, 5, "job_number")?,
        submit_time: num(&fields, 8, "submission_time")?,
        start_time: num(&fields, 9, "start_time")?,
        end_time: num(&fields, 10, "end_time")?,
        failed_code: num(&fields, 11, "failed")?,
        exit_status: num(&fields, 12, "exit_status")?,
        ru_wallclock: num(&fields, 13, "ru_wallclock")?,
    }))
}

/// Wall-clock duration: the recorded `ru_wallclock` when positive, else
/// `end_time - start_time`. The two can disagree by seconds in real
/// accounting files; the recorded value wins.
pub fn derive_wallclock(record: &JobRecord) -> Result<u64, RecordError> {
    if record.failed_code != 0 {
        return Err(RecordError::Failed(record.failed_code));
    }
    wallclock_ignoring_failure(record)
}

/// Same derivation without the failed-record signal; used when failed
/// records are deliberately retained.
pub fn wallclock_ignoring_failure(record: &JobRecord) -> Result<u64, RecordError> {
    if record.end_time < record.start_time {
        return Err(RecordError::EndBeforeStart {
            start: record.start_time,
            end: record.end_time,
        });
    }
    if record.ru_wallclock > 0 {
        Ok(record.ru_wallclock)
    } else {
        Ok((record.end_time - record.start_time) as u64)
    }
}

/// Loads a whole trace from a line stream. Output is sorted by end_time
/// ascending (forecasters consume completions in finish order), ties broken
/// by job_number.
pub fn load_trace<R: BufRead>(
    source: R,
    opts: &TraceLoadOptions,
) -> Result<(Vec<JobRecord>, IngestStats), IngestError> {
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut seen_numbers = std::collections::HashSet::new();

    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match parse_accounting_line(&line) {
            Ok(None) => {
                stats.skipped += 1;
                continue;
            }
            Ok(Some(r)) => r,
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        if record.start_time < record.submit_time || !seen_numbers.insert(record.job_number) {
            stats.malformed += 1;
            continue;
        }
        if opts.drop_failed && record.failed_code != 0 {
            stats.failed += 1;
            continue;
        }
        let duration = match wallclock_ignoring_failure(&record) {
            Ok(d) => d,
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        if duration < opts.min_duration_filter {
            stats.filtered_short += 1;
            continue;
        }
        stats.parsed += 1;
        records.push(record);
    }

    let lines = stats.non_comment_lines();
    if lines > 0 && stats.malformed as f64 / lines as f64 > opts.max_malformed_fraction {
        return Err(IngestError::TraceRejected {
            malformed: stats.malformed,
            lines,
            limit: opts.max_malformed_fraction,
        });
    }

    records.sort_by_key(|r| (r.end_time, r.job_number));
    Ok((records, stats))
}
