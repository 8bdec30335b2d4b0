use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dsm_core::corpus::{CorpusSpec, PSD_SINGULAR_LINEAR};
use dsm_core::flow::FlowTolerances;
use dsm_core::iterate::{Schedule, StepRule};
use dsm_core::lemma::SequenceSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Flow,
    Iterate,
    RegPath,
    NoiseStudy,
    LemmaSim,
    Suite,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Flow => "flow",
            Kind::Iterate => "iterate",
            Kind::RegPath => "reg-path",
            Kind::NoiseStudy => "noise-study",
            Kind::LemmaSim => "lemma-sim",
            Kind::Suite => "suite",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    /// A problem description JSON file, relative to the config file.
    File { file: PathBuf },
    Corpus(CorpusSpec),
}

impl Default for ProblemRef {
    fn default() -> Self {
        ProblemRef::Corpus(CorpusSpec::named(PSD_SINGULAR_LINEAR))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub epsilons: Vec<f64>,
    /// Integration horizon; the stopping time `−2 ln ε` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub tolerances: FlowTolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            epsilons: vec![1e-2],
            t_end: None,
            tolerances: FlowTolerances::default(),
            u0: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateParams {
    /// The oracle schedule with `c = ½M₂` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    /// Oracle constant for problems with `M₂ = 0`.
    pub linear_c: f64,
    pub steps: StepRule,
    pub max_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_residual: Option<f64>,
    pub track_oracle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

impl Default for IterateParams {
    fn default() -> Self {
        IterateParams {
            schedule: None,
            linear_c: 1.0,
            steps: StepRule::ConstantP { p: std::f64::consts::E.sqrt() },
            max_n: 60,
            stop_residual: None,
            track_oracle: true,
            u0: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegPathParams {
    pub epsilons: Vec<f64>,
}

impl Default for RegPathParams {
    fn default() -> Self {
        RegPathParams {
            epsilons: (1..=6).map(|k| 10f64.powi(-k)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub deltas: Vec<f64>,
    pub b_exp: f64,
    /// Extra `ε` values for the `‖W_δ − V_ε‖ ≤ δ/ε` grid.
    pub gap_epsilons: Vec<f64>,
    pub tolerances: FlowTolerances,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            deltas: vec![1e-2, 1e-3, 1e-4],
            b_exp: 0.5,
            gap_epsilons: Vec::new(),
            tolerances: FlowTolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaParams {
    pub g1: f64,
    pub a: SequenceSpec,
    pub b: SequenceSpec,
    pub horizon: usize,
    /// Number of seeded random admissible `(g1, a, b)` certificates.
    pub random_trials: usize,
    pub random_max_len: usize,
}

impl Default for LemmaParams {
    fn default() -> Self {
        LemmaParams {
            g1: 1.0,
            a: SequenceSpec::Constant { value: 0.5 },
            b: SequenceSpec::Harmonic { scale: 1.0 },
            horizon: 200,
            random_trials: 0,
            random_max_len: 60,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub problem: ProblemRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub flow: FlowParams,
    pub iterate: IterateParams,
    pub reg_path: RegPathParams,
    pub noise_study: NoiseParams,
    pub lemma_sim: LemmaParams,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<ExperimentConfig>,
}

pub const DEFAULT_SEED: u64 = 1;

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// The config fields relevant to its kind, for the report echo.
    pub fn echo(&self, kind: Kind) -> Value {
        let mut map = serde_json::Map::new();
        map.insert("kind".into(), Value::String(kind.to_string()));
        if let Some(label) = &self.label {
            map.insert("label".into(), Value::String(label.clone()));
        }
        map.insert("seed".into(), Value::from(self.seed()));
        let section = match kind {
            Kind::Flow => Some(("flow", serde_json::to_value(&self.flow))),
            Kind::Iterate => Some(("iterate", serde_json::to_value(&self.iterate))),
            Kind::RegPath => Some(("reg_path", serde_json::to_value(&self.reg_path))),
            Kind::NoiseStudy => Some(("noise_study", serde_json::to_value(&self.noise_study))),
            Kind::LemmaSim => Some(("lemma_sim", serde_json::to_value(&self.lemma_sim))),
            Kind::Suite => None,
        };
        if kind != Kind::LemmaSim && kind != Kind::Suite {
            map.insert("problem".into(), serde_json::to_value(&self.problem).unwrap_or(Value::Null));
        }
        if let Some((name, value)) = section {
            map.insert(name.into(), value.unwrap_or(Value::Null));
        }
        Value::Object(map)
    }
}

/// Reads the JSON config (or starts from defaults) and applies `key.path=value` overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(serde_json::Map::new()),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| ConfigError(format!("invalid config: {e}")))
}

/// `a.b.c=value`: the value is parsed as JSON, falling back to a plain string.
/// Numeric path segments index into arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{assignment}` is not key=value")))?;
    if path.is_empty() {
        return Err(ConfigError(format!("override `{assignment}` has an empty key")));
    }
    let new = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for seg in path.split('.') {
        slot = match slot {
            Value::Array(items) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| ConfigError(format!("`{seg}` in `{path}` is not an array index")))?;
                items
                    .get_mut(i)
                    .ok_or_else(|| ConfigError(format!("index {i} in `{path}` is out of range")))?
            }
            other => {
                if !other.is_object() {
                    *other = Value::Object(serde_json::Map::new());
                }
                other
                    .as_object_mut()
                    .expect("just made an object")
                    .entry(seg.to_string())
                    .or_insert(Value::Null)
            }
        };
    }
    *slot = new;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_and_replace_fields() {
        let mut v = serde_json::json!({"flow": {"epsilons": [0.1, 0.2]}});
        apply_override(&mut v, "flow.epsilons.1=0.5").unwrap();
        apply_override(&mut v, "problem.name=hilbert-psd").unwrap();
        apply_override(&mut v, "seed=7").unwrap();
        assert_eq!(v["flow"]["epsilons"][1], 0.5);
        assert_eq!(v["problem"]["name"], "hilbert-psd");
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.seed(), 7);
        assert!(apply_override(&mut serde_json::json!({}), "novalue").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let v = serde_json::json!({"flow": {"epsilon": 0.1}});
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn problem_file_reference_parses() {
        let v = serde_json::json!({"problem": {"file": "p.json"}});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.problem, ProblemRef::File { file: "p.json".into() });
    }

    #[test]
    fn book_schema_example_parses() {
        let chapter = include_str!("../../../book/src/cli.md");
        let blocks: Vec<&str> = chapter
            .split("```json\n")
            .skip(1)
            .map(|b| b.split("```").next().unwrap())
            .collect();
        assert_eq!(blocks.len(), 2);
        let cfg: ExperimentConfig = serde_json::from_str(blocks[0]).unwrap();
        assert_eq!(cfg.kind, Some(Kind::Flow));
        assert_eq!(cfg.iterate.schedule, Some(Schedule::Oracle { c: 12.0 }));
        let desc: dsm_core::corpus::ProblemDescription = serde_json::from_str(blocks[1]).unwrap();
        assert_eq!(desc.dim, 2);
    }
}
