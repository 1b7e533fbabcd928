//! Seeded discrete-event simulation of the split-inference pipeline
//! `sample -> mobile -> link1 -> edge -> link2 -> cloud -> generated`.
//!
//! Every stage serves one job at a time. Compute stages and links integrate
//! their remaining work at the current value of their capacity process and
//! are rescheduled whenever that value changes. Stages with no work under the
//! configured partition are skipped entirely.

mod log;
mod process;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{ModelProfile, Partition, ProfileError};

pub use log::{export_log, EventLog, Record, Stage, LOG_CSV_HEADER};
pub use process::{step_process, ProcessState, RandomProcessSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingPolicy {
    /// Samples at `0, T, 2T, ...`.
    Periodic { period_s: f64 },
    /// Samples at 0 and whenever the first working stage turns idle. When
    /// deduplication drops a sample the source is polled again after
    /// `dedup_poll_s`.
    ZeroWait {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dedup_poll_s: Option<f64>,
    },
}

impl SamplingPolicy {
    pub fn zero_wait() -> Self {
        Self::ZeroWait { dedup_poll_s: None }
    }

    pub fn periodic(period_s: f64) -> Self {
        Self::Periodic { period_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueDiscipline {
    Fifo,
    /// At most one waiting job per stage; a newer arrival replaces it.
    KeepLatest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustLevel {
    pub name: String,
    pub probability: f64,
    /// Age of trust right after a verification that lands on this level.
    pub initial_age_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSpec {
    pub period_s: f64,
    /// Resource units spent per verification.
    pub cost: f64,
    pub levels: Vec<TrustLevel>,
}

impl VerificationSpec {
    pub fn single_level(period_s: f64, cost: f64, name: &str, initial_age_s: f64) -> Self {
        Self {
            period_s,
            cost,
            levels: vec![TrustLevel {
                name: name.to_owned(),
                probability: 1.0,
                initial_age_s,
            }],
        }
    }

    /// Expected initial age over the trust distribution.
    pub fn mean_initial_age(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.probability * l.initial_age_s)
            .sum()
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return Err(invalid("verification.period_s", "must be > 0"));
        }
        if !(self.cost >= 0.0) {
            return Err(invalid("verification.cost", "must be >= 0"));
        }
        if self.levels.is_empty() {
            return Err(invalid("verification.levels", "at least one trust level needed"));
        }
        for l in &self.levels {
            if !(0.0..=1.0).contains(&l.probability) {
                return Err(invalid("verification.levels.probability", "must lie in [0, 1]"));
            }
            if !(l.initial_age_s >= 0.0 && l.initial_age_s.is_finite()) {
                return Err(invalid("verification.levels.initial_age_s", "must be >= 0"));
            }
        }
        let total: f64 = self.levels.iter().map(|l| l.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "verification.levels",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        Ok(())
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub profile: ModelProfile<f64>,
    pub partition: Partition,
    pub cap_mobile: RandomProcessSpec,
    pub cap_edge: RandomProcessSpec,
    pub cap_cloud: Option<RandomProcessSpec>,
    pub rate1: RandomProcessSpec,
    pub rate2: RandomProcessSpec,
    pub sampling: SamplingPolicy,
    pub queue_discipline: QueueDiscipline,
    pub dedup_enabled: bool,
    pub p_semantic_change: f64,
    pub p_intercept: f64,
    pub early_exit_threshold_s: Option<f64>,
    pub verification: Option<VerificationSpec>,
    pub horizon_s: f64,
    pub seed: u64,
}

impl Scenario {
    /// Mobile-edge deployment with constant capacities and one link rate.
    /// Zero-wait sampling and keep-latest queues; everything else off.
    pub fn mobile_edge(
        profile: ModelProfile<f64>,
        cut1: usize,
        cap_mobile: f64,
        cap_edge: f64,
        rate: f64,
    ) -> Self {
        let layers = profile.len();
        Self {
            profile,
            partition: Partition::two_tier(cut1, layers),
            cap_mobile: RandomProcessSpec::constant(cap_mobile),
            cap_edge: RandomProcessSpec::constant(cap_edge),
            cap_cloud: None,
            rate1: RandomProcessSpec::constant(rate),
            rate2: RandomProcessSpec::constant(rate),
            sampling: SamplingPolicy::zero_wait(),
            queue_discipline: QueueDiscipline::KeepLatest,
            dedup_enabled: false,
            p_semantic_change: 1.0,
            p_intercept: 0.0,
            early_exit_threshold_s: None,
            verification: None,
            horizon_s: 10.0,
            seed: 0,
        }
    }

    pub fn stage_work(&self) -> Result<[f64; 5], SimError> {
        let c = self.profile.partition_costs(self.partition)?;
        Ok([
            c.mobile_gflop,
            c.uplink1_mbit,
            c.edge_gflop,
            c.uplink2_mbit,
            c.cloud_gflop,
        ])
    }

    pub fn stage_process(&self, stage: Stage) -> Option<&RandomProcessSpec> {
        match stage {
            Stage::Mobile => Some(&self.cap_mobile),
            Stage::Link1 => Some(&self.rate1),
            Stage::Edge => Some(&self.cap_edge),
            Stage::Link2 => Some(&self.rate2),
            Stage::Cloud => self.cap_cloud.as_ref(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.profile.validate()?;
        let work = self.stage_work()?;
        for stage in Stage::ALL {
            match self.stage_process(stage) {
                Some(spec) => spec
                    .validate()
                    .map_err(|r| invalid(process_field(stage), r))?,
                None if work[stage.index()] > 0.0 => {
                    return Err(invalid(
                        process_field(stage),
                        "the partition places work on the cloud but no capacity is configured",
                    ))
                }
                None => {}
            }
        }
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !prob(self.p_semantic_change) {
            return Err(invalid("p_semantic_change", format!("{} not in [0, 1]", self.p_semantic_change)));
        }
        if !prob(self.p_intercept) {
            return Err(invalid("p_intercept", format!("{} not in [0, 1]", self.p_intercept)));
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(invalid("horizon_s", "must be > 0"));
        }
        if let Some(th) = self.early_exit_threshold_s {
            if !(th > 0.0) {
                return Err(invalid("early_exit_threshold_s", "must be > 0"));
            }
        }
        if let Some(v) = &self.verification {
            v.validate()?;
        }
        match self.sampling {
            SamplingPolicy::Periodic { period_s } => {
                if !(period_s > 0.0 && period_s.is_finite()) {
                    return Err(invalid("sampling.period_s", "must be > 0"));
                }
            }
            SamplingPolicy::ZeroWait { dedup_poll_s } => {
                if work.iter().all(|&w| w == 0.0) {
                    return Err(invalid(
                        "sampling",
                        "zero-wait sampling needs at least one stage with work",
                    ));
                }
                match dedup_poll_s {
                    Some(p) if !(p > 0.0 && p.is_finite()) => {
                        return Err(invalid("sampling.dedup_poll_s", "must be > 0"))
                    }
                    None if self.dedup_enabled && self.p_semantic_change < 1.0 => {
                        return Err(invalid(
                            "sampling.dedup_poll_s",
                            "required for zero-wait sampling with deduplication",
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Warnings for fifo queues that cannot keep up with the arrival rate.
    pub fn stability_warnings(&self) -> Result<Vec<String>, SimError> {
        if self.queue_discipline != QueueDiscipline::Fifo {
            return Ok(Vec::new());
        }
        let work = self.stage_work()?;
        let service_rate = |s: Stage| -> Option<f64> {
            let w = work[s.index()];
            (w > 0.0).then(|| 1.0 / self.stage_process(s).map_or(f64::INFINITY, |p| p.mean_service_time(w)))
        };
        let arrival = match self.sampling {
            SamplingPolicy::Periodic { period_s } => {
                let admitted = if self.dedup_enabled { self.p_semantic_change } else { 1.0 };
                admitted / period_s
            }
            SamplingPolicy::ZeroWait { .. } => Stage::ALL
                .iter()
                .find_map(|&s| service_rate(s))
                .unwrap_or(0.0),
        };
        Ok(Stage::ALL
            .iter()
            .filter_map(|&s| service_rate(s).map(|r| (s, r)))
            .filter(|&(_, rate)| arrival > rate * (1.0 + 1e-12))
            .map(|(s, rate)| {
                format!(
                    "unstable: {} serves {rate:.6} jobs/s but jobs arrive at {arrival:.6}/s; the fifo queue grows without bound",
                    s.name()
                )
            })
            .collect())
    }
}

fn process_field(stage: Stage) -> &'static str {
    match stage {
        Stage::Mobile => "cap_mobile",
        Stage::Link1 => "rate1",
        Stage::Edge => "cap_edge",
        Stage::Link2 => "rate2",
        Stage::Cloud => "cap_cloud",
    }
}

/// Simulates `scenario` up to its horizon. Identical scenarios (seed
/// included) yield identical logs.
pub fn run(scenario: &Scenario) -> Result<EventLog, SimError> {
    scenario.validate()?;
    let warnings = scenario.stability_warnings()?;
    let mut engine = Engine::new(scenario)?;
    engine.run();
    Ok(EventLog {
        scenario: scenario.clone(),
        records: engine.records,
        end_time: scenario.horizon_s,
        warnings,
    })
}

// RNG streams, one per independent source of randomness, so that changing
// one decision (say, the partition) leaves every other draw sequence intact.
const STREAM_SEMANTIC: u64 = 0;
const STREAM_INTERCEPT: u64 = 1;
const STREAM_VERIFY: u64 = 2;
const STREAM_STAGE0: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy)]
enum Event {
    PeriodicSample { k: u64 },
    ZeroWaitSample,
    Timer { stage: usize, token: u64 },
    Verify { k: u64 },
}

#[derive(Debug)]
struct Pending {
    t: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, insertion order)
        other
            .t
            .total_cmp(&self.t)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    id: u64,
    sampled_at: f64,
    next_stage: usize,
    intercepted: bool,
    service_s: f64,
}

#[derive(Debug)]
struct Service {
    job: Job,
    started: f64,
    since: f64,
    remaining: f64,
    rate: f64,
    finishes: bool,
    token: u64,
}

#[derive(Debug)]
struct StageState {
    stage: Stage,
    work: f64,
    spec: Option<RandomProcessSpec>,
    process: ProcessState,
    rng: ChaCha8Rng,
    serving: Option<Service>,
    queue: VecDeque<Job>,
}

struct Engine<'a> {
    sc: &'a Scenario,
    now: f64,
    heap: BinaryHeap<Pending>,
    seq: u64,
    token: u64,
    records: Vec<Record>,
    stages: Vec<StageState>,
    first_stage: Option<usize>,
    /// Layer index finished once a stage completes, if it is an exit point.
    exit_layer: [Option<usize>; 5],
    next_job: u64,
    semantic_rng: ChaCha8Rng,
    intercept_rng: ChaCha8Rng,
    verify_rng: ChaCha8Rng,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, SimError> {
        let work = sc.stage_work()?;
        let stages: Vec<StageState> = Stage::ALL
            .iter()
            .map(|&stage| {
                let mut rng = stream(sc.seed, STREAM_STAGE0 + stage.index() as u64);
                let spec = sc.stage_process(stage).copied();
                let process = match &spec {
                    Some(s) => ProcessState::start(s, &mut rng),
                    None => ProcessState::Constant,
                };
                StageState {
                    stage,
                    work: work[stage.index()],
                    spec,
                    process,
                    rng,
                    serving: None,
                    queue: VecDeque::new(),
                }
            })
            .collect();
        let first_stage = stages.iter().position(|s| s.work > 0.0);

        let layers = sc.profile.len();
        let Partition { cut1, cut2 } = sc.partition;
        let is_exit = |k: usize| (k >= 1 && k < layers && sc.profile.layers[k - 1].exit_point).then_some(k);
        let exit_layer = [is_exit(cut1), is_exit(cut1), is_exit(cut2), is_exit(cut2), None];

        Ok(Self {
            sc,
            now: 0.0,
            heap: BinaryHeap::new(),
            seq: 0,
            token: 0,
            records: Vec::new(),
            stages,
            first_stage,
            exit_layer,
            next_job: 0,
            semantic_rng: stream(sc.seed, STREAM_SEMANTIC),
            intercept_rng: stream(sc.seed, STREAM_INTERCEPT),
            verify_rng: stream(sc.seed, STREAM_VERIFY),
        })
    }

    fn schedule(&mut self, t: f64, event: Event) {
        if t <= self.sc.horizon_s {
            self.heap.push(Pending {
                t,
                seq: self.seq,
                event,
            });
            self.seq += 1;
        }
    }

    fn run(&mut self) {
        self.prime();
        while self.step() {}
    }

    fn prime(&mut self) {
        match self.sc.sampling {
            SamplingPolicy::Periodic { .. } => self.schedule(0.0, Event::PeriodicSample { k: 0 }),
            SamplingPolicy::ZeroWait { .. } => self.schedule(0.0, Event::ZeroWaitSample),
        }
        if self.sc.verification.is_some() {
            self.schedule(0.0, Event::Verify { k: 0 });
        }
    }

    /// Processes the next event; false once the calendar is empty.
    fn step(&mut self) -> bool {
        let Some(p) = self.heap.pop() else {
            return false;
        };
        self.now = p.t;
        {
            match p.event {
                Event::PeriodicSample { k } => {
                    self.sample();
                    if let SamplingPolicy::Periodic { period_s } = self.sc.sampling {
                        self.schedule((k + 1) as f64 * period_s, Event::PeriodicSample { k: k + 1 });
                    }
                }
                Event::ZeroWaitSample => {
                    let admitted = self.sample();
                    if !admitted {
                        if let SamplingPolicy::ZeroWait {
                            dedup_poll_s: Some(poll),
                        } = self.sc.sampling
                        {
                            self.schedule(self.now + poll, Event::ZeroWaitSample);
                        }
                    }
                }
                Event::Timer { stage, token } => self.on_timer(stage, token),
                Event::Verify { k } => self.verify(k),
            }
        }
        true
    }

    /// Returns whether the sample entered the pipeline.
    fn sample(&mut self) -> bool {
        let id = self.next_job;
        self.next_job += 1;
        let u: f64 = self.semantic_rng.random();
        let semantic_new = id == 0 || u < self.sc.p_semantic_change;
        let admitted = semantic_new || !self.sc.dedup_enabled;
        self.records.push(Record::Sample {
            t: self.now,
            id,
            semantic_new,
            admitted,
        });
        if admitted {
            self.route(Job {
                id,
                sampled_at: self.now,
                next_stage: 0,
                intercepted: false,
                service_s: 0.0,
            });
        }
        admitted
    }

    fn route(&mut self, job: Job) {
        match (job.next_stage..self.stages.len()).find(|&s| self.stages[s].work > 0.0) {
            Some(s) => self.arrive(s, job),
            None => self.generate(job, None),
        }
    }

    fn arrive(&mut self, s: usize, job: Job) {
        if self.stages[s].serving.is_none() {
            self.start(s, job);
            return;
        }
        let now = self.now;
        let st = &mut self.stages[s];
        if self.sc.queue_discipline == QueueDiscipline::KeepLatest {
            if let Some(old) = st.queue.pop_front() {
                self.records.push(Record::Discarded {
                    t: now,
                    id: old.id,
                    stage: st.stage,
                });
            }
        }
        st.queue.push_back(job);
    }

    fn start(&mut self, s: usize, job: Job) {
        self.token += 1;
        let token = self.token;
        let now = self.now;
        let st = &mut self.stages[s];
        st.serving = Some(Service {
            job,
            started: now,
            since: now,
            remaining: st.work,
            rate: 0.0,
            finishes: false,
            token,
        });
        let t = self.plan(s);
        self.schedule_timer(s, t);
    }

    /// Reads the stage's capacity at `now` and picks the next timer instant:
    /// completion if the capacity holds long enough, else the change point.
    fn plan(&mut self, s: usize) -> f64 {
        let now = self.now;
        let st = &mut self.stages[s];
        let spec = st.spec.expect("validated: working stage has a process");
        let (rate, next_change, state) = step_process(&spec, st.process, now, &mut st.rng);
        st.process = state;
        let svc = st.serving.as_mut().expect("stage is serving");
        svc.rate = rate;
        svc.since = now;
        let finish = now + svc.remaining / rate;
        svc.finishes = finish <= next_change;
        if svc.finishes {
            finish
        } else {
            next_change
        }
    }

    fn schedule_timer(&mut self, s: usize, t: f64) {
        let token = self.stages[s].serving.as_ref().expect("serving").token;
        self.schedule(t, Event::Timer { stage: s, token });
    }

    fn on_timer(&mut self, s: usize, token: u64) {
        let now = self.now;
        let Some(svc) = self.stages[s].serving.as_mut() else {
            return;
        };
        if svc.token != token {
            return;
        }
        if svc.finishes {
            self.complete(s);
        } else {
            svc.remaining = (svc.remaining - svc.rate * (now - svc.since)).max(0.0);
            let t = self.plan(s);
            self.schedule_timer(s, t);
        }
    }

    fn complete(&mut self, s: usize) {
        let now = self.now;
        let st = &mut self.stages[s];
        let svc = st.serving.take().expect("serving");
        let stage = st.stage;
        let mut job = svc.job;
        job.service_s += now - svc.started;
        self.records.push(Record::StageDone {
            t: now,
            id: job.id,
            stage,
        });
        if stage.is_link() {
            let u: f64 = self.intercept_rng.random();
            if u < self.sc.p_intercept {
                job.intercepted = true;
            }
        }
        if let Some(waiting) = self.stages[s].queue.pop_front() {
            self.start(s, waiting);
        }

        job.next_stage = s + 1;
        let exit = self.exit_layer[s].filter(|_| {
            let threshold = self.sc.early_exit_threshold_s.unwrap_or(f64::INFINITY);
            now - job.sampled_at >= threshold
                && self.stages[s + 1..].iter().any(|st| st.work > 0.0)
        });
        match exit {
            Some(layer) => self.generate(job, Some(layer)),
            None => self.route(job),
        }

        if matches!(self.sc.sampling, SamplingPolicy::ZeroWait { .. })
            && self.first_stage == Some(s)
            && self.stages[s].serving.is_none()
        {
            self.schedule(now, Event::ZeroWaitSample);
        }
    }

    fn generate(&mut self, job: Job, via_exit: Option<usize>) {
        self.records.push(Record::Generated {
            t: self.now,
            id: job.id,
            via_exit,
            inference_s: job.service_s,
        });
        if job.intercepted {
            self.records.push(Record::Intercepted {
                t: self.now,
                id: job.id,
            });
        }
    }

    fn verify(&mut self, k: u64) {
        let spec = self.sc.verification.as_ref().expect("verification configured");
        let u: f64 = self.verify_rng.random();
        let mut acc = 0.0;
        let level = spec
            .levels
            .iter()
            .find(|l| {
                acc += l.probability;
                u < acc
            })
            .unwrap_or_else(|| spec.levels.last().expect("non-empty"));
        self.records.push(Record::Verified {
            t: self.now,
            k,
            trust_level: level.name.clone(),
            delta: level.initial_age_s,
        });
        let period = spec.period_s;
        self.schedule((k + 1) as f64 * period, Event::Verify { k: k + 1 });
    }
}

#[cfg(test)]
mod tests;
