//! Capacity and rate processes driving the pipeline stages.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

/// A positive-valued random process in continuous time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RandomProcessSpec {
    Constant {
        value: f64,
    },
    /// Alternates between two levels with exponentially distributed dwell times.
    TwoStateMarkov {
        value_hi: f64,
        value_lo: f64,
        mean_dwell_hi_s: f64,
        mean_dwell_lo_s: f64,
    },
    /// A fresh log-normal draw for every query; `mu` and `sigma` are the
    /// parameters of the underlying normal.
    IidLognormal { mu: f64, sigma: f64 },
}

impl RandomProcessSpec {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            Self::Constant { value } if !pos(value) => {
                Err(format!("constant value must be > 0, got {value}"))
            }
            Self::TwoStateMarkov {
                value_hi,
                value_lo,
                mean_dwell_hi_s,
                mean_dwell_lo_s,
            } if !(pos(value_hi) && pos(value_lo) && pos(mean_dwell_hi_s) && pos(mean_dwell_lo_s)) => {
                Err("two_state_markov values and dwell means must be > 0".into())
            }
            Self::IidLognormal { mu, sigma } if !mu.is_finite() || !(sigma >= 0.0) || !sigma.is_finite() => {
                Err(format!("iid_lognormal needs finite mu and sigma >= 0, got ({mu}, {sigma})"))
            }
            _ => Ok(()),
        }
    }

    /// Long-run time-average of the value.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::TwoStateMarkov {
                value_hi,
                value_lo,
                mean_dwell_hi_s,
                mean_dwell_lo_s,
            } => {
                (value_hi * mean_dwell_hi_s + value_lo * mean_dwell_lo_s)
                    / (mean_dwell_hi_s + mean_dwell_lo_s)
            }
            Self::IidLognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    /// Long-run mean time to push `work` units through a busy server.
    pub fn mean_service_time(&self, work: f64) -> f64 {
        match *self {
            // each job holds a single draw, so the job time is work * E[1/C]
            Self::IidLognormal { mu, sigma } => work * (-mu + 0.5 * sigma * sigma).exp(),
            _ => work / self.mean(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessState {
    Constant,
    Markov { high: bool, next_switch: f64 },
    Lognormal,
}

impl ProcessState {
    /// Markov processes start in a state drawn from their stationary law.
    pub fn start<R: Rng + ?Sized>(spec: &RandomProcessSpec, rng: &mut R) -> Self {
        match *spec {
            RandomProcessSpec::Constant { .. } => Self::Constant,
            RandomProcessSpec::TwoStateMarkov {
                mean_dwell_hi_s,
                mean_dwell_lo_s,
                ..
            } => {
                let p_hi = mean_dwell_hi_s / (mean_dwell_hi_s + mean_dwell_lo_s);
                let high = rng.random::<f64>() < p_hi;
                let dwell = if high { mean_dwell_hi_s } else { mean_dwell_lo_s };
                Self::Markov {
                    high,
                    next_switch: draw_exp(dwell, rng),
                }
            }
            RandomProcessSpec::IidLognormal { .. } => Self::Lognormal,
        }
    }
}

fn draw_exp<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean).expect("positive dwell mean").sample(rng)
}

/// Reads the process at `now`, returning the current value, the next instant
/// the value may change (`+inf` if never) and the advanced state.
///
/// Markov switches are drawn lazily in order, so the realised path does not
/// depend on how often the process is queried.
pub fn step_process<R: Rng + ?Sized>(
    spec: &RandomProcessSpec,
    state: ProcessState,
    now: f64,
    rng: &mut R,
) -> (f64, f64, ProcessState) {
    match (*spec, state) {
        (RandomProcessSpec::Constant { value }, _) => (value, f64::INFINITY, ProcessState::Constant),
        (
            RandomProcessSpec::TwoStateMarkov {
                value_hi,
                value_lo,
                mean_dwell_hi_s,
                mean_dwell_lo_s,
            },
            ProcessState::Markov {
                mut high,
                mut next_switch,
            },
        ) => {
            while next_switch <= now {
                high = !high;
                let dwell = if high { mean_dwell_hi_s } else { mean_dwell_lo_s };
                next_switch += draw_exp(dwell, rng);
            }
            let value = if high { value_hi } else { value_lo };
            (value, next_switch, ProcessState::Markov { high, next_switch })
        }
        (RandomProcessSpec::IidLognormal { mu, sigma }, _) => {
            let v = LogNormal::new(mu, sigma).expect("validated").sample(rng);
            (v, f64::INFINITY, ProcessState::Lognormal)
        }
        (spec @ RandomProcessSpec::TwoStateMarkov { .. }, _) => {
            let fresh = ProcessState::start(&spec, rng);
            step_process(&spec, fresh, now, rng)
        }
    }
}
