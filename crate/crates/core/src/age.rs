//! Exact piecewise-linear age trajectories (AoGI, AoII, AoLI, AoT) built
//! from an event log, and their peak and time-average statistics.
//!
//! An [`AgeSeries`] grows with slope one except while it *holds*: after a
//! reset it may stay flat until a given instant. Holds only arise for the
//! age of incorrect information, which sits at zero while nothing is
//! pending.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::num::Real;
use crate::sim::{EventLog, Record};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgeError {
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("records not sorted by time at index {index}")]
    Unsorted { index: usize },
    #[error("record at index {index} lies outside the series window")]
    OutOfRange { index: usize },
    #[error("invalid age series: {0}")]
    InvalidSeries(String),
}

/// A completed generation joined to the sample that triggered it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRecord<T> {
    pub sample_time: T,
    pub generation_time: T,
    pub job_id: u64,
    pub semantic_new: bool,
    pub intercepted: bool,
}

impl<T: Real> GenerationRecord<T> {
    pub fn new(sample_time: T, generation_time: T) -> Self {
        Self {
            sample_time,
            generation_time,
            job_id: 0,
            semantic_new: true,
            intercepted: false,
        }
    }

    pub fn intercepted(mut self) -> Self {
        self.intercepted = true;
        self
    }
}

/// One record per `Generated` event, sorted by generation time.
pub fn generation_records(log: &EventLog) -> Result<Vec<GenerationRecord<f64>>, AgeError> {
    let mut samples: HashMap<u64, (f64, bool)> = HashMap::new();
    let mut out: Vec<GenerationRecord<f64>> = Vec::new();
    let mut index_of: HashMap<u64, usize> = HashMap::new();
    for r in &log.records {
        match *r {
            Record::Sample {
                t,
                id,
                semantic_new,
                ..
            } => {
                samples.insert(id, (t, semantic_new));
            }
            Record::Generated { t, id, .. } => {
                let &(sample_time, semantic_new) = samples.get(&id).ok_or_else(|| {
                    AgeError::MalformedLog(format!("generated job {id} has no matching sample"))
                })?;
                index_of.insert(id, out.len());
                out.push(GenerationRecord {
                    sample_time,
                    generation_time: t,
                    job_id: id,
                    semantic_new,
                    intercepted: false,
                });
            }
            Record::Intercepted { id, .. } => {
                let &i = index_of.get(&id).ok_or_else(|| {
                    AgeError::MalformedLog(format!("intercepted job {id} was never generated"))
                })?;
                out[i].intercepted = true;
            }
            _ => {}
        }
    }
    out.sort_by(|a, b| a.generation_time.total_cmp(&b.generation_time));
    Ok(out)
}

/// Instants of every sample, admitted or not.
pub fn sample_times(log: &EventLog) -> Vec<f64> {
    log.records
        .iter()
        .filter_map(|r| match *r {
            Record::Sample { t, .. } => Some(t),
            _ => None,
        })
        .collect()
}

/// Instants at which a sample carried new semantics.
pub fn semantic_changes(log: &EventLog) -> Vec<f64> {
    log.records
        .iter()
        .filter_map(|r| match *r {
            Record::Sample {
                t,
                semantic_new: true,
                ..
            } => Some(t),
            _ => None,
        })
        .collect()
}

/// `(time, initial age)` of every verification.
pub fn verifications(log: &EventLog) -> Vec<(f64, f64)> {
    log.records
        .iter()
        .filter_map(|r| match *r {
            Record::Verified { t, delta, .. } => Some((t, delta)),
            _ => None,
        })
        .collect()
}

/// A downward (or, for trust, arbitrary) jump of the age at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reset<T> {
    pub time: T,
    pub value: T,
    /// The value stays flat until this instant before growing again.
    pub hold_until: Option<T>,
}

impl<T: Real> Reset<T> {
    pub fn rising(time: T, value: T) -> Self {
        Self {
            time,
            value,
            hold_until: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Anchor<T> {
    time: T,
    value: T,
    hold_until: Option<T>,
}

impl<T: Real> Anchor<T> {
    fn eval(&self, t: T) -> T {
        let grow_from = match self.hold_until {
            Some(h) if h > self.time => h,
            _ => self.time,
        };
        if t <= grow_from {
            self.value
        } else {
            self.value + (t - grow_from)
        }
    }

    /// Exact integral over `[self.time, b]`.
    fn integral(&self, b: T) -> T {
        let a = self.time;
        let grow_from = match self.hold_until {
            Some(h) if h > a => h.min(b),
            _ => a,
        };
        let d = b - grow_from;
        self.value * (b - a) + d * d / T::lit(2.0)
    }
}

/// Piecewise-linear age trajectory on `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeSeries<T> {
    start: T,
    end: T,
    initial_value: T,
    initial_hold_until: Option<T>,
    resets: Vec<Reset<T>>,
}

impl<T: Real> AgeSeries<T> {
    pub fn new(
        start: T,
        end: T,
        initial_value: T,
        initial_hold_until: Option<T>,
        resets: Vec<Reset<T>>,
    ) -> Result<Self, AgeError> {
        let bad = |m: String| Err(AgeError::InvalidSeries(m));
        if !(start < end) {
            return bad(format!("start {start} must precede end {end}"));
        }
        if !(initial_value >= T::zero()) {
            return bad("initial value must be >= 0".into());
        }
        let mut prev: Option<T> = None;
        for (i, r) in resets.iter().enumerate() {
            if !(r.time >= start && r.time <= end) {
                return bad(format!("reset {i} at {} outside [{start}, {end}]", r.time));
            }
            if prev.is_some_and(|p| !(r.time > p)) {
                return bad(format!("reset {i} at {} not strictly after the previous one", r.time));
            }
            if !(r.value >= T::zero()) {
                return bad(format!("reset {i} has negative value"));
            }
            if r.hold_until.is_some_and(|h| h < r.time) {
                return bad(format!("reset {i} holds until before it happens"));
            }
            prev = Some(r.time);
        }
        Ok(Self {
            start,
            end,
            initial_value,
            initial_hold_until,
            resets,
        })
    }

    /// Plain sawtooth with slope-one growth between `(time, value)` resets.
    pub fn sawtooth(start: T, end: T, initial_value: T, resets: &[(T, T)]) -> Result<Self, AgeError> {
        Self::new(
            start,
            end,
            initial_value,
            None,
            resets.iter().map(|&(t, v)| Reset::rising(t, v)).collect(),
        )
    }

    pub fn start(&self) -> T {
        self.start
    }

    pub fn end(&self) -> T {
        self.end
    }

    pub fn initial_value(&self) -> T {
        self.initial_value
    }

    pub fn initial_hold_until(&self) -> Option<T> {
        self.initial_hold_until
    }

    pub fn resets(&self) -> &[Reset<T>] {
        &self.resets
    }

    fn initial_anchor(&self) -> Anchor<T> {
        Anchor {
            time: self.start,
            value: self.initial_value,
            hold_until: self.initial_hold_until,
        }
    }

    fn anchors(&self) -> impl Iterator<Item = Anchor<T>> + '_ {
        std::iter::once(self.initial_anchor()).chain(self.resets.iter().map(|r| Anchor {
            time: r.time,
            value: r.value,
            hold_until: r.hold_until,
        }))
    }

    /// Anchor in force at `t`; with `left` a reset at exactly `t` is not yet applied.
    fn anchor_at(&self, t: T, left: bool) -> Anchor<T> {
        let n = self
            .resets
            .partition_point(|r| if left { r.time < t } else { r.time <= t });
        if n == 0 {
            self.initial_anchor()
        } else {
            let r = self.resets[n - 1];
            Anchor {
                time: r.time,
                value: r.value,
                hold_until: r.hold_until,
            }
        }
    }

    /// Right-continuous value: a reset at `t` is already applied.
    pub fn value_at(&self, t: T) -> T {
        self.anchor_at(t, false).eval(t)
    }

    /// Left limit at `t`.
    pub fn value_before(&self, t: T) -> T {
        self.anchor_at(t, true).eval(t)
    }

    pub fn end_value(&self) -> T {
        self.value_at(self.end)
    }

    /// Value just before every reset, in time order. The value at the end of
    /// the horizon is not a peak.
    pub fn peaks(&self) -> Vec<T> {
        self.anchors()
            .zip(self.resets.iter())
            .map(|(before, r)| before.eval(r.time))
            .collect()
    }

    pub fn average_peak(&self) -> Option<T> {
        let p = self.peaks();
        if p.is_empty() {
            None
        } else {
            Some(crate::num::compensated_sum(p.iter().copied()) / T::from_usize(p.len()).unwrap())
        }
    }

    /// Exact integral divided by the horizon length.
    pub fn time_average(&self) -> T {
        let ends = self
            .resets
            .iter()
            .map(|r| r.time)
            .chain(std::iter::once(self.end));
        let total = crate::num::compensated_sum(self.anchors().zip(ends).map(|(a, b)| a.integral(b)));
        total / (self.end - self.start)
    }

    /// Restriction to `[from, to]`; a reset exactly at `from` becomes the
    /// initial state.
    pub fn window(&self, from: T, to: T) -> Result<Self, AgeError> {
        if !(from >= self.start && to <= self.end && from < to) {
            return Err(AgeError::InvalidSeries(format!(
                "window [{from}, {to}] not inside [{}, {}]",
                self.start, self.end
            )));
        }
        let a = self.anchor_at(from, false);
        let hold = a.hold_until.filter(|&h| h > from);
        let resets = self
            .resets
            .iter()
            .copied()
            .filter(|r| r.time > from && r.time <= to)
            .collect();
        Self::new(from, to, a.eval(from), hold, resets)
    }

    /// Every corner of the trajectory as `(time, value)`; a reset contributes
    /// its before and after values at the same timestamp.
    pub fn breakpoints(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(2 * self.resets.len() + 3);
        let push_hold = |out: &mut Vec<(T, T)>, a: &Anchor<T>, until: T| {
            if let Some(h) = a.hold_until {
                if h > a.time && h < until {
                    out.push((h, a.value));
                }
            }
        };
        let first = self.initial_anchor();
        out.push((self.start, first.value));
        let mut current = first;
        for r in &self.resets {
            push_hold(&mut out, &current, r.time);
            out.push((r.time, current.eval(r.time)));
            out.push((r.time, r.value));
            current = Anchor {
                time: r.time,
                value: r.value,
                hold_until: r.hold_until,
            };
        }
        push_hold(&mut out, &current, self.end);
        out.push((self.end, current.eval(self.end)));
        out
    }

    /// CSV with columns `time_s,value_s` at every breakpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,value_s\n");
        for (t, v) in self.breakpoints() {
            let _ = writeln!(out, "{t:.9},{v:.9}");
        }
        out
    }
}

fn check_sorted<T: Real>(records: &[GenerationRecord<T>], start: T, end: T) -> Result<(), AgeError> {
    for (i, r) in records.iter().enumerate() {
        if i > 0 && r.generation_time < records[i - 1].generation_time {
            return Err(AgeError::Unsorted { index: i });
        }
        if r.generation_time < start || r.generation_time > end || r.sample_time > r.generation_time {
            return Err(AgeError::OutOfRange { index: i });
        }
    }
    Ok(())
}

/// Sawtooth resetting at each generation to the age of the sample behind it.
/// Generations of samples older than one already reflected are ignored.
fn freshness_series<'a, T: Real>(
    records: impl Iterator<Item = &'a GenerationRecord<T>>,
    start: T,
    end: T,
) -> Result<AgeSeries<T>, AgeError> {
    let mut resets: Vec<Reset<T>> = Vec::new();
    let mut newest: Option<T> = None;
    for r in records {
        if newest.is_some_and(|n| r.sample_time <= n) {
            continue;
        }
        newest = Some(r.sample_time);
        let value = r.generation_time - r.sample_time;
        match resets.last_mut() {
            Some(last) if last.time == r.generation_time => last.value = last.value.min(value),
            _ => resets.push(Reset::rising(r.generation_time, value)),
        }
    }
    AgeSeries::new(start, end, T::zero(), None, resets)
}

/// Age of generative information: starts at zero and, at each generation,
/// drops to the age of the sample that generation was produced from.
pub fn aogi_series<T: Real>(
    records: &[GenerationRecord<T>],
    start: T,
    end: T,
) -> Result<AgeSeries<T>, AgeError> {
    check_sorted(records, start, end)?;
    freshness_series(records.iter(), start, end)
}

/// Age of leaked information: the eavesdropper's view, resetting only at
/// intercepted generations.
pub fn aoli_series<T: Real>(
    records: &[GenerationRecord<T>],
    start: T,
    end: T,
) -> Result<AgeSeries<T>, AgeError> {
    check_sorted(records, start, end)?;
    freshness_series(records.iter().filter(|r| r.intercepted), start, end)
}

/// Age of incorrect information. `changes` are the instants where a sample
/// carried new semantics. The value is zero while no change is waiting for a
/// generation; otherwise it is the time since the earliest unreflected
/// change. A generation reflects every change up to its own sample time.
pub fn aoii_series<T: Real>(
    records: &[GenerationRecord<T>],
    changes: &[T],
    start: T,
    end: T,
) -> Result<AgeSeries<T>, AgeError> {
    check_sorted(records, start, end)?;
    if let Some(i) = (1..changes.len()).find(|&i| changes[i] < changes[i - 1]) {
        return Err(AgeError::Unsorted { index: i });
    }
    // earliest change strictly after `reflected`
    let pending_after = |reflected: Option<T>| -> Option<T> {
        let idx = match reflected {
            None => 0,
            Some(r) => changes.partition_point(|&c| c <= r),
        };
        changes.get(idx).copied()
    };
    let state_at = |t: T, pending: Option<T>| -> (T, Option<T>) {
        match pending {
            Some(c) if c <= t => (t - c, None),
            Some(c) => (T::zero(), Some(c)),
            None => (T::zero(), Some(T::infinity())),
        }
    };

    let mut reflected: Option<T> = None;
    let mut pending = pending_after(None);
    let (initial_value, initial_hold) = state_at(start, pending);
    let mut resets: Vec<Reset<T>> = Vec::new();
    for r in records {
        if reflected.is_some_and(|x| r.sample_time <= x) {
            continue;
        }
        reflected = Some(r.sample_time);
        let next = pending_after(reflected);
        if next == pending {
            continue;
        }
        pending = next;
        let (value, hold_until) = state_at(r.generation_time, pending);
        match resets.last_mut() {
            Some(last) if last.time == r.generation_time => {
                last.value = value;
                last.hold_until = hold_until;
            }
            _ => resets.push(Reset {
                time: r.generation_time,
                value,
                hold_until,
            }),
        }
    }
    AgeSeries::new(start, end, initial_value, initial_hold, resets)
}

/// Age of trust: jumps to the initial age `delta` at each verification
/// `(time, delta)` and grows in between. Before the first verification the
/// series starts from `initial_age`; a verification exactly at `start` sets
/// the starting value instead.
pub fn aot_series<T: Real>(
    verifications: &[(T, T)],
    start: T,
    end: T,
    initial_age: T,
) -> Result<AgeSeries<T>, AgeError> {
    for (i, w) in verifications.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(AgeError::Unsorted { index: i + 1 });
        }
    }
    let mut initial = initial_age;
    let mut resets = Vec::with_capacity(verifications.len());
    for (i, &(t, delta)) in verifications.iter().enumerate() {
        if t < start || t > end {
            return Err(AgeError::OutOfRange { index: i });
        }
        if t == start {
            initial = delta;
        } else {
            resets.push(Reset::rising(t, delta));
        }
    }
    AgeSeries::new(start, end, initial, None, resets)
}

/// Age of the original information itself: zero at every sample. This is
/// the floor no generative pipeline can beat.
pub fn ideal_age_series<T: Real>(samples: &[T], start: T, end: T) -> Result<AgeSeries<T>, AgeError> {
    let resets: Vec<(T, T)> = samples
        .iter()
        .filter(|&&t| t > start && t <= end)
        .map(|&t| (t, T::zero()))
        .collect();
    AgeSeries::sawtooth(start, end, T::zero(), &resets)
}

/// Arithmetic mean of the peaks; `None` without resets.
pub fn average_peak<T: Real>(series: &AgeSeries<T>) -> Option<T> {
    series.average_peak()
}
