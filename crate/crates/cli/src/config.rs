//! JSON experiment configuration: strict parsing, defaults and validation.

use std::fmt;
use std::path::Path;

use agesim::optimize::{Evaluation, Objective};
use agesim::profile::{ModelProfile, Partition};
use agesim::sim::{QueueDiscipline, RandomProcessSpec, SamplingPolicy, Scenario, VerificationSpec};
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message} (key `{key}`)")]
    Parse {
        path: String,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// A capacity or rate: a bare number is a constant process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Process(pub RandomProcessSpec);

impl Serialize for Process {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            RandomProcessSpec::Constant { value } => s.serialize_f64(value),
            spec => spec.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Process {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Process;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a process object with a `kind`")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Process, E> {
                Ok(Process(RandomProcessSpec::constant(v)))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Process, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Process, E> {
                self.visit_f64(v as f64)
            }
            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Process, A::Error> {
                RandomProcessSpec::deserialize(de::value::MapAccessDeserializer::new(map)).map(Process)
            }
        }
        d.deserialize_any(V)
    }
}

/// `"reference"` or an explicit profile. Always written back explicitly.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Model(pub ModelProfile<f64>);

impl<'de> Deserialize<'de> for Model {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Model;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"reference\" or an object with `layers` and `input_mbit`")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Model, E> {
                match v {
                    "reference" => Ok(Model(ModelProfile::reference())),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Model, A::Error> {
                ModelProfile::deserialize(de::value::MapAccessDeserializer::new(map)).map(Model)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    EdgeCapacity,
    DeviceCapacity,
    LinkRate,
    SamplingPeriod,
    Cut1,
    PIntercept,
    PSemanticChange,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            Self::EdgeCapacity => "edge_capacity",
            Self::DeviceCapacity => "device_capacity",
            Self::LinkRate => "link_rate",
            Self::SamplingPeriod => "sampling_period",
            Self::Cut1 => "cut1",
            Self::PIntercept => "p_intercept",
            Self::PSemanticChange => "p_semantic_change",
        }
    }
}

/// Either explicit `values` or an inclusive `from`/`to`/`step` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
}

impl SweepSpec {
    pub fn points(&self) -> Result<Vec<f64>, ConfigError> {
        match (&self.values, self.from, self.to, self.step) {
            (Some(v), None, None, None) if !v.is_empty() => Ok(v.clone()),
            (Some(_), None, None, None) => invalid("sweep.values: must not be empty"),
            (None, Some(from), Some(to), Some(step)) => {
                if !(step > 0.0) || !(to >= from) {
                    return invalid("sweep: need step > 0 and to >= from");
                }
                let n = ((to - from) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|i| from + step * i as f64).collect())
            }
            _ => invalid("sweep: give either `values` or all of `from`, `to`, `step`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizeSpec {
    Partition {
        objective: Objective,
    },
    SamplingPeriod {
        objective: Objective,
        periods: Vec<f64>,
    },
    VerificationPeriod {
        cost: f64,
        budget_rate: f64,
        #[serde(default)]
        expected_initial_age_s: Option<f64>,
        period_bounds: (f64, f64),
    },
    /// Identical copies of the base scenario competing for edge capacity.
    CapacityShares {
        weights: Vec<f64>,
        edge_cap_total: f64,
        grid_step: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig5Spec {
    #[serde(default = "default_edge_caps")]
    pub edge_caps: Vec<f64>,
}

impl Default for Fig5Spec {
    fn default() -> Self {
        Self {
            edge_caps: default_edge_caps(),
        }
    }
}

fn default_edge_caps() -> Vec<f64> {
    (0..9).map(|i| 300.0 + 50.0 * i as f64).collect()
}

fn default_rate() -> Process {
    Process(RandomProcessSpec::constant(1000.0))
}
fn default_sampling() -> SamplingPolicy {
    SamplingPolicy::zero_wait()
}
fn default_discipline() -> QueueDiscipline {
    QueueDiscipline::KeepLatest
}
fn one() -> f64 {
    1.0
}
fn default_warmup() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Provenance block written into every JSON output; ignored on input.
    #[serde(default, skip_serializing)]
    pub meta: Option<serde_json::Value>,
    pub model: Model,
    #[serde(default)]
    pub partition: Option<Partition>,
    pub cap_mobile: Process,
    pub cap_edge: Process,
    #[serde(default)]
    pub cap_cloud: Option<Process>,
    #[serde(default = "default_rate")]
    pub rate1: Process,
    #[serde(default = "default_rate")]
    pub rate2: Process,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingPolicy,
    #[serde(default = "default_discipline")]
    pub queue_discipline: QueueDiscipline,
    #[serde(default)]
    pub dedup_enabled: bool,
    #[serde(default = "one")]
    pub p_semantic_change: f64,
    #[serde(default)]
    pub p_intercept: f64,
    #[serde(default)]
    pub early_exit_threshold_s: Option<f64>,
    #[serde(default)]
    pub verification: Option<VerificationSpec>,
    pub horizon_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Seeds for sweeps and optimisations; defaults to `[seed]`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub optimize: Option<OptimizeSpec>,
    #[serde(default)]
    pub fig5: Option<Fig5Spec>,
}

impl Config {
    pub fn scenario(&self) -> Scenario {
        let layers = self.model.0.len();
        Scenario {
            profile: self.model.0.clone(),
            partition: self.partition.unwrap_or(Partition::new(layers, layers)),
            cap_mobile: self.cap_mobile.0,
            cap_edge: self.cap_edge.0,
            cap_cloud: self.cap_cloud.map(|p| p.0),
            rate1: self.rate1.0,
            rate2: self.rate2.0,
            sampling: self.sampling,
            queue_discipline: self.queue_discipline,
            dedup_enabled: self.dedup_enabled,
            p_semantic_change: self.p_semantic_change,
            p_intercept: self.p_intercept,
            early_exit_threshold_s: self.early_exit_threshold_s,
            verification: self.verification.clone(),
            horizon_s: self.horizon_s,
            seed: self.seed,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            seeds: self.seeds(),
            warmup_fraction: self.warmup_fraction,
            epsilon: self.epsilon,
        }
    }

    /// Fills the derived defaults so the serialized form is self-contained.
    fn complete(mut self) -> Self {
        let layers = self.model.0.len();
        self.partition.get_or_insert(Partition::new(layers, layers));
        self.seeds.get_or_insert_with(|| vec![self.seed]);
        self.meta = None;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return invalid(format!("warmup_fraction: {} not in [0, 1)", self.warmup_fraction));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return invalid(format!("epsilon: {} not in (0, 1]", self.epsilon));
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return invalid("seeds: must not be empty");
        }
        if let Some(s) = &self.sweep {
            s.points()?;
        }
        match &self.optimize {
            Some(OptimizeSpec::Partition { objective }) => objective
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("optimize.objective: {e}")))?,
            Some(OptimizeSpec::SamplingPeriod { objective, periods }) => {
                objective
                    .validate()
                    .map_err(|e| ConfigError::Invalid(format!("optimize.objective: {e}")))?;
                if periods.is_empty() || periods.iter().any(|p| !(*p > 0.0)) {
                    return invalid("optimize.periods: need at least one positive period");
                }
            }
            Some(OptimizeSpec::CapacityShares { weights, .. }) if weights.is_empty() => {
                return invalid("optimize.weights: need at least one service");
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical JSON of the completed configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First twelve hex digits of the SHA-256 of [`Config::canonical_json`],
    /// ignoring where the outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        let digest = Sha256::digest(c.canonical_json().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses and validates JSON text; `origin` labels error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<Config, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        ConfigError::Parse {
            path: origin.to_owned(),
            key,
            message: e.into_inner().to_string(),
        }
    })?;
    let config = config.complete();
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model": "reference", "cap_mobile": 500, "cap_edge": 400, "horizon_s": 20}"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_config_str(MINIMAL, "mem").unwrap();
        assert_eq!(c.partition, Some(Partition::new(10, 10)));
        assert_eq!(c.rate1, Process(RandomProcessSpec::constant(1000.0)));
        assert_eq!(c.sampling, SamplingPolicy::zero_wait());
        assert_eq!(c.queue_discipline, QueueDiscipline::KeepLatest);
        assert_eq!(c.p_semantic_change, 1.0);
        assert_eq!(c.p_intercept, 0.0);
        assert_eq!(c.seeds, Some(vec![0]));
        assert_eq!(c.warmup_fraction, 0.1);
        assert_eq!(c.epsilon, 0.05);
        assert_eq!(c.output_dir, "out");
        assert_eq!(c.scenario().profile.len(), 10);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = r#"{"modle": "reference", "cap_mobile": 500, "cap_edge": 400, "horizon_s": 20}"#;
        let msg = parse_config_str(text, "mem").unwrap_err().to_string();
        assert!(msg.contains("modle"), "{msg}");
    }

    #[test]
    fn nested_errors_carry_the_key_path() {
        let text = r#"{"model": "reference", "cap_mobile": 500, "cap_edge": {"kind": "two_state_markov", "value_hi": 1}, "horizon_s": 20}"#;
        let err = parse_config_str(text, "mem").unwrap_err();
        match err {
            ConfigError::Parse { key, .. } => assert_eq!(key, "cap_edge"),
            other => panic!("{other}"),
        }
        let text = r#"{"model": {"layers": [{"gflop": 1, "act": 2}], "input_mbit": 1}, "cap_mobile": 500, "cap_edge": 1, "horizon_s": 20}"#;
        let msg = parse_config_str(text, "mem").unwrap_err().to_string();
        assert!(msg.contains("model.layers[0]") && msg.contains("act"), "{msg}");
    }

    #[test]
    fn range_errors() {
        let text = r#"{"model": "reference", "cap_mobile": 500, "cap_edge": 400, "horizon_s": 20, "p_intercept": 1.5}"#;
        let msg = parse_config_str(text, "mem").unwrap_err().to_string();
        assert!(msg.contains("p_intercept"), "{msg}");
        let text = r#"{"model": "reference", "cap_mobile": -1, "cap_edge": 400, "horizon_s": 20}"#;
        assert!(parse_config_str(text, "mem").unwrap_err().to_string().contains("cap_mobile"));
    }

    #[test]
    fn effective_config_round_trips() {
        let text = r#"{"meta": {"note": "ignored"}, "model": "reference", "cap_mobile": 500,
            "cap_edge": {"kind": "two_state_markov", "value_hi": 700, "value_lo": 300, "mean_dwell_hi_s": 1, "mean_dwell_lo_s": 2},
            "horizon_s": 20, "sweep": {"variable": "edge_capacity", "from": 300, "to": 700, "step": 50},
            "optimize": {"target": "partition", "objective": {"kind": "statistical_aogi", "epsilon": 0.1}}}"#;
        let c = parse_config_str(text, "mem").unwrap();
        let again = parse_config_str(&c.canonical_json(), "mem").unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_eq!(c.hash().len(), 12);
        assert_eq!(c.sweep.unwrap().points().unwrap().len(), 9);
    }

    #[test]
    fn sweep_forms() {
        let s = SweepSpec {
            variable: SweepVariable::Cut1,
            values: Some(vec![]),
            from: None,
            to: None,
            step: None,
        };
        assert!(s.points().is_err());
        let s = SweepSpec {
            values: None,
            from: Some(0.0),
            to: Some(1.0),
            step: Some(0.25),
            ..s
        };
        assert_eq!(s.points().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
