//! Discrete-event replay of a job stream against a simulated homogeneous
//! cluster. Admission gives each job a budget of forecast times one plus an
//! empirical safety margin and accepts it only when a slot interval fitting
//! the budget exists before the deadline. Dispatch is earliest-deadline-
//! first with conservative backfilling: every accepted job holds a
//! reservation, and a later-deadline job may only jump into an idle gap
//! that closes before the next reservation would start.
//!
//! Jobs exceeding their budget are not killed; they run to their true
//! duration and may push reservations late (knock-on misses). The deadline
//! guarantee is distributional, not per job.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::classing::ClassKey;
use crate::stats;

/// Simulated cluster: a list of nodes with identical slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub nodes: Vec<NodeSpec>,
    /// Fixed true; per-node speed factors are out of scope.
    pub homogeneous: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub slots: u32,
}

impl ClusterSpec {
    /// `nodes` identical nodes of `slots_per_node` slots each.
    pub fn uniform(nodes: usize, slots_per_node: u32) -> Self {
        Self {
            nodes: (0..nodes)
                .map(|i| NodeSpec {
                    node_id: format!("node{i:02}"),
                    slots: slots_per_node,
                })
                .collect(),
            homogeneous: true,
        }
    }

    pub fn total_slots(&self) -> usize {
        self.nodes.iter().map(|n| n.slots as usize).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.total_slots() == 0 {
            return Err("cluster must have at least one slot".into());
        }
        Ok(())
    }
}

/// One job to replay. `true_duration` is hidden from the admission policy
/// and only revealed to the simulator when the job completes.
#[derive(Debug, Clone)]
pub struct JobRequest {
    pub job_number: u64,
    pub class_key: ClassKey,
    pub submit_time: i64,
    pub deadline: i64,
    pub requested_confidence: f64,
    pub true_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    Unmodellable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Accepted => write!(f, "accepted"),
            Verdict::Rejected => write!(f, "rejected"),
            Verdict::Unmodellable => write!(f, "unmodellable"),
        }
    }
}

/// Admission outcome for one job.
#[derive(Debug, Clone)]
pub struct Decision {
    pub verdict: Verdict,
    /// Reserved wall-clock seconds: `max(1, forecast) * (1 + margin)`.
    pub budget: f64,
    pub planned_node: Option<String>,
    pub planned_start: Option<i64>,
}

/// What the forecasting side tells the scheduler about one job.
#[derive(Debug, Clone, Copy)]
pub struct PolicyAssessment {
    pub forecast_point: f64,
    pub margin: f64,
    /// Achieved confidence after any horizon degradation, for the log.
    pub effective_level: f64,
    pub degraded: bool,
}

/// Forecast source for admission plus the completion feedback loop.
/// Returning `None` routes the job best-effort past admission
/// (unmodellable class).
pub trait AdmissionPolicy {
    fn assess(&mut self, job: &JobRequest, now: f64) -> Option<PolicyAssessment>;
    fn feedback(&mut self, class: &ClassKey, actual_duration: f64);
}

/// Nearest-rank empirical quantile of recent absolute percentage errors;
/// the multiplicative safety margin for a requested confidence.
pub fn safety_margin(recent_abs_pct_errors: &[f64], confidence: f64) -> f64 {
    stats::nearest_rank_quantile(recent_abs_pct_errors, confidence)
}

/// Final per-job record for the decision log.
#[derive(Debug, Clone, Serialize)]
pub struct JobOutcome {
    pub job_number: u64,
    pub class: String,
    pub verdict: Verdict,
    pub budget: f64,
    pub planned_node: Option<String>,
    pub planned_start: Option<i64>,
    pub actual_start: Option<f64>,
    pub completion: Option<f64>,
    pub deadline: i64,
    pub hit: Option<bool>,
    pub effective_level: Option<f64>,
    pub degraded: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassStats {
    pub admitted: u64,
    pub rejected: u64,
    pub unmodellable: u64,
    pub hits: u64,
    pub misses: u64,
}

/// Aggregate replay statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimReport {
    pub admitted: u64,
    pub rejected: u64,
    pub unmodellable: u64,
    pub deadline_hits: u64,
    pub deadline_misses: u64,
    /// busy-slot-seconds / (slots * makespan), over first submit to last
    /// completion.
    pub utilisation: f64,
    /// Slot overlap violations observed during the run; expected 0.
    pub invariant_violations: u64,
    pub per_class: BTreeMap<String, ClassStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Complete = 0,
    Start = 1,
    Submit = 2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    kind: EventKind,
    job: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| (self.kind as u8).cmp(&(other.kind as u8)))
            .then_with(|| self.job.cmp(&other.job))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Reservation {
    job: u64,
    start: f64,
    budget: f64,
}

impl Reservation {
    fn end(&self) -> f64 {
        self.start + self.budget
    }
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    running: Option<(u64, f64, f64)>, // job, actual_start, budget
    /// Un-started accepted jobs planned here, sorted by start.
    reservations: Vec<Reservation>,
    last_completion: f64,
    busy_seconds: f64,
}

impl Slot {
    /// Earliest time at or after `now` with an idle interval of `budget`
    /// seconds, respecting the running job's budget window and all
    /// reservations. An overrunning job blocks through `now`.
    fn earliest_fit(&self, now: f64, budget: f64) -> f64 {
        let mut t = now;
        if let Some((_, start, b)) = self.running {
            t = t.max(start + b);
        }
        for r in &self.reservations {
            if t + budget <= r.start + 1e-9 {
                return t;
            }
            t = t.max(r.end());
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum JobPhase {
    Waiting,
    Running,
    Done,
}

struct JobState {
    request: JobRequest,
    decision: Decision,
    assessment: Option<PolicyAssessment>,
    phase: JobPhase,
    actual_start: Option<f64>,
    completion: Option<f64>,
}

/// The event-driven scheduler core. Drive it with [`run_simulation`], or
/// construct one directly to exercise admission and dispatch in isolation.
pub struct Simulator {
    slots: Vec<Slot>,
    jobs: BTreeMap<u64, JobState>,
    events: BinaryHeap<std::cmp::Reverse<Event>>,
    invariant_violations: u64,
    first_submit: Option<f64>,
    last_completion: f64,
}

impl Simulator {
    pub fn new(cluster: &ClusterSpec) -> Self {
        let mut slots = Vec::new();
        for node in &cluster.nodes {
            for s in 0..node.slots {
                slots.push(Slot {
                    name: format!("{}/{s}", node.node_id),
                    running: None,
                    reservations: Vec::new(),
                    last_completion: f64::NEG_INFINITY,
                    busy_seconds: 0.0,
                });
            }
        }
        Self {
            slots,
            jobs: BTreeMap::new(),
            events: BinaryHeap::new(),
            invariant_violations: 0,
            first_submit: None,
            last_completion: f64::NEG_INFINITY,
        }
    }

    /// Registers a waiting job; used by [`run_simulation`] and tests that
    /// drive admission/dispatch directly.
    pub fn register(&mut self, request: JobRequest, decision: Decision) {
        self.jobs.insert(
            request.job_number,
            JobState {
                request,
                decision,
                assessment: None,
                phase: JobPhase::Waiting,
                actual_start: None,
                completion: None,
            },
        );
    }

    pub fn actual_start_of(&self, job: u64) -> Option<f64> {
        self.jobs.get(&job).and_then(|j| j.actual_start)
    }

    /// Admission test: the budget must fit into some slot's earliest idle
    /// interval without breaching the deadline. Accepting reserves the
    /// interval and schedules a start attempt.
    pub fn admit(
        &mut self,
        job: &JobRequest,
        forecast_point: f64,
        margin: f64,
        now: f64,
    ) -> Decision {
        let budget = forecast_point.max(1.0) * (1.0 + margin);
        let mut best: Option<(f64, usize)> = None;
        for (idx, slot) in self.slots.iter().enumerate() {
            let start = slot.earliest_fit(now, budget);
            if start + budget <= job.deadline as f64 + 1e-9
                && best.map_or(true, |(bs, _)| start < bs)
            {
                best = Some((start, idx));
            }
        }
        match best {
            Some((start, idx)) => {
                let slot = &mut self.slots[idx];
                slot.reservations.push(Reservation {
                    job: job.job_number,
                    start,
                    budget,
                });
                slot.reservations
                    .sort_by(|a, b| a.start.total_cmp(&b.start).then(a.job.cmp(&b.job)));
                self.events.push(std::cmp::Reverse(Event {
                    time: start,
                    kind: EventKind::Start,
                    job: job.job_number,
                }));
                Decision {
                    verdict: Verdict::Accepted,
                    budget,
                    planned_node: Some(self.slots[idx].name.clone()),
                    planned_start: Some(start.round() as i64),
                }
            }
            None => Decision {
                verdict: Verdict::Rejected,
                budget,
                planned_node: None,
                planned_start: None,
            },
        }
    }

    fn reservation_of(&self, job: u64) -> Option<(usize, usize)> {
        for (si, slot) in self.slots.iter().enumerate() {
            if let Some(ri) = slot.reservations.iter().position(|r| r.job == job) {
                return Some((si, ri));
            }
        }
        None
    }

    fn start_job(&mut self, job: u64, slot_idx: usize, now: f64) {
        if let Some((si, ri)) = self.reservation_of(job) {
            self.slots[si].reservations.remove(ri);
        }
        let state = self.jobs.get_mut(&job).expect("unknown job started");
        let duration = state.request.true_duration;
        let slot = &mut self.slots[slot_idx];
        if slot.running.is_some() || now < slot.last_completion - 1e-9 {
            self.invariant_violations += 1;
        }
        slot.running = Some((job, now, state.decision.budget));
        slot.busy_seconds += duration;
        state.phase = JobPhase::Running;
        state.actual_start = Some(now);
        self.events.push(std::cmp::Reverse(Event {
            time: now + duration,
            kind: EventKind::Complete,
            job,
        }));
    }

    /// One dispatch pass: fills every idle slot it can, earliest deadline
    /// first. A job whose reservation heads the slot's queue may always
    /// start; any other candidate may only backfill if its budget ends
    /// before the first pending reservation would begin. Best-effort jobs
    /// run only on slots with no pending reservations at all.
    pub fn dispatch(&mut self, now: f64) -> Vec<(u64, usize)> {
        let mut assignments = Vec::new();
        loop {
            let mut progressed = false;
            for slot_idx in 0..self.slots.len() {
                if self.slots[slot_idx].running.is_some() {
                    continue;
                }
                let head = self.slots[slot_idx]
                    .reservations
                    .first()
                    .map(|r| (r.job, r.start));
                let mut accepted_waiting: Vec<(i64, u64)> = self
                    .jobs
                    .values()
                    .filter(|j| {
                        j.phase == JobPhase::Waiting
                            && j.decision.verdict == Verdict::Accepted
                            && (j.request.submit_time as f64) <= now + 1e-9
                    })
                    .map(|j| (j.request.deadline, j.request.job_number))
                    .collect();
                accepted_waiting.sort_unstable();

                let mut chosen = None;
                for &(_, job) in &accepted_waiting {
                    let is_head = head.map_or(true, |(h, _)| h == job);
                    let fits = is_head || {
                        let budget = self.jobs[&job].decision.budget;
                        now + budget <= head.unwrap().1 + 1e-9
                    };
                    if fits {
                        chosen = Some(job);
                        break;
                    }
                }
                if chosen.is_none() && self.slots[slot_idx].reservations.is_empty() {
                    // FIFO among best-effort jobs.
                    chosen = self
                        .jobs
                        .values()
                        .filter(|j| {
                            j.phase == JobPhase::Waiting
                                && j.decision.verdict == Verdict::Unmodellable
                                && (j.request.submit_time as f64) <= now + 1e-9
                        })
                        .map(|j| (j.request.submit_time, j.request.job_number))
                        .min()
                        .map(|(_, job)| job);
                }
                if let Some(job) = chosen {
                    self.start_job(job, slot_idx, now);
                    assignments.push((job, slot_idx));
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        assignments
    }

    fn complete_job(&mut self, job: u64, now: f64) -> (ClassKey, f64) {
        for slot in &mut self.slots {
            if matches!(slot.running, Some((j, _, _)) if j == job) {
                slot.running = None;
                slot.last_completion = now;
            }
        }
        self.last_completion = self.last_completion.max(now);
        let state = self.jobs.get_mut(&job).expect("unknown job completed");
        state.phase = JobPhase::Done;
        state.completion = Some(now);
        (state.request.class_key.clone(), state.request.true_duration)
    }
}

/// Replays time-ordered requests through admission, dispatch, and the
/// forecast feedback loop. Returns the aggregate report plus one outcome
/// row per job (sorted by job number).
pub fn run_simulation<P: AdmissionPolicy>(
    requests: &[JobRequest],
    cluster: &ClusterSpec,
    policy: &mut P,
) -> (SimReport, Vec<JobOutcome>) {
    let mut sim = Simulator::new(cluster);
    let by_number: BTreeMap<u64, JobRequest> =
        requests.iter().map(|r| (r.job_number, r.clone())).collect();
    assert_eq!(by_number.len(), requests.len(), "job numbers must be unique");

    for r in requests {
        assert!(r.deadline > r.submit_time, "deadline must follow submission");
        sim.events.push(std::cmp::Reverse(Event {
            time: r.submit_time as f64,
            kind: EventKind::Submit,
            job: r.job_number,
        }));
    }

    while let Some(std::cmp::Reverse(event)) = sim.events.pop() {
        let now = event.time;
        match event.kind {
            EventKind::Submit => {
                let request = by_number[&event.job].clone();
                sim.first_submit = Some(sim.first_submit.map_or(now, |f: f64| f.min(now)));
                let assessment = policy.assess(&request, now);
                let decision = match assessment {
                    Some(a) => sim.admit(&request, a.forecast_point, a.margin, now),
                    None => Decision {
                        verdict: Verdict::Unmodellable,
                        budget: 0.0,
                        planned_node: None,
                        planned_start: None,
                    },
                };
                sim.register(request, decision);
                sim.jobs.get_mut(&event.job).unwrap().assessment = assessment;
                sim.dispatch(now);
            }
            EventKind::Start => {
                sim.dispatch(now);
            }
            EventKind::Complete => {
                let (class, duration) = sim.complete_job(event.job, now);
                policy.feedback(&class, duration);
                sim.dispatch(now);
            }
        }
    }

    let mut report = SimReport {
        invariant_violations: sim.invariant_violations,
        ..Default::default()
    };
    let mut outcomes = Vec::with_capacity(sim.jobs.len());
    for state in sim.jobs.values() {
        let class_name = state.request.class_key.to_string();
        let entry = report.per_class.entry(class_name.clone()).or_default();
        let hit = match (state.decision.verdict, state.completion) {
            (Verdict::Accepted, Some(c)) => Some(c <= state.request.deadline as f64 + 1e-9),
            _ => None,
        };
        match state.decision.verdict {
            Verdict::Accepted => {
                report.admitted += 1;
                entry.admitted += 1;
                match hit {
                    Some(true) => {
                        report.deadline_hits += 1;
                        entry.hits += 1;
                    }
                    Some(false) => {
                        report.deadline_misses += 1;
                        entry.misses += 1;
                    }
                    None => {}
                }
            }
            Verdict::Rejected => {
                report.rejected += 1;
                entry.rejected += 1;
            }
            Verdict::Unmodellable => {
                report.unmodellable += 1;
                entry.unmodellable += 1;
            }
        }
        outcomes.push(JobOutcome {
            job_number: state.request.job_number,
            class: class_name,
            verdict: state.decision.verdict,
            budget: state.decision.budget,
            planned_node: state.decision.planned_node.clone(),
            planned_start: state.decision.planned_start,
            actual_start: state.actual_start,
            completion: state.completion,
            deadline: state.request.deadline,
            hit,
            effective_level: state.assessment.map(|a| a.effective_level),
            degraded: state.assessment.map(|a| a.degraded),
        });
    }

    let busy: f64 = sim.slots.iter().map(|s| s.busy_seconds).sum();
    if let Some(first) = sim.first_submit {
        let makespan = sim.last_completion - first;
        if makespan > 0.0 {
            report.utilisation = busy / (sim.slots.len() as f64 * makespan);
        }
    }
    (report, outcomes)
}
