//! Run configuration: one JSON document covering every stage, overridable by
//! flat dotted keys.

use std::collections::BTreeMap;
use std::path::Path;

use sake_core::datagen::SplitSpec;
use sake_core::hashing::DEFAULT_ITERATIONS;
use sake_core::losses::Objective;
use sake_core::model::ModelConfig;
use sake_core::retrieval::Metric;
use sake_core::training::{ProbeConfig, TrainConfig};
use sake_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveName {
    /// Benchmark cross-entropy only.
    Benchmark,
    /// Distill towards the teacher's softmax.
    Teacher,
    /// Distill towards the semantic-aware blend.
    Sake,
}

impl From<ObjectiveName> for Objective {
    fn from(o: ObjectiveName) -> Self {
        match o {
            ObjectiveName::Benchmark => Objective::Benchmark,
            ObjectiveName::Teacher => Objective::Teacher,
            ObjectiveName::Sake => Objective::Sake,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItqSettings {
    pub bits: usize,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub metric: Metric,
    pub ks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Setting this key also sets every stage's seed.
    pub seed: u64,
    pub data: SplitSpec,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub objective: ObjectiveName,
    pub probe: ProbeConfig,
    pub itq: ItqSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: SplitSpec::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::pretrain(),
            train: TrainConfig::finetune(),
            objective: ObjectiveName::Sake,
            probe: ProbeConfig::default(),
            itq: ItqSettings {
                bits: 64,
                iterations: DEFAULT_ITERATIONS,
                seed: 0,
            },
            eval: EvalSettings {
                metric: Metric::Cosine,
                ks: vec![100, 200],
            },
        }
    }
}

const SEED_KEYS: [&str; 5] = ["data.seed", "pretrain.seed", "train.seed", "probe.seed", "itq.seed"];

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    for part in key.split('.') {
        node = &mut node[part];
    }
    *node = value;
}

/// Parses `key=value`; the value is JSON when it parses as JSON and a plain
/// string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value), Error> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Parse {
        line: 0,
        detail: format!("expected key=value, got `{s}`"),
    })?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Layers `entries` over this config in order. Keys are flat and dotted;
    /// `seed` is applied before the rest of its layer so explicit sub-seeds
    /// win over it.
    pub fn apply(&self, entries: &[(String, Value)]) -> Result<Self, Error> {
        let mut root = serde_json::to_value(self)?;
        let mut known = BTreeMap::new();
        flatten("", &root, &mut known);
        let mut flat = Vec::new();
        for (k, v) in entries {
            let mut one = BTreeMap::new();
            flatten(k, v, &mut one);
            flat.extend(one);
        }
        flat.sort_by_key(|(k, _)| k != "seed");
        for (k, v) in flat {
            if !known.contains_key(&k) {
                return Err(Error::Lookup {
                    kind: "config key",
                    name: k,
                });
            }
            if k == "seed" {
                for s in SEED_KEYS {
                    set_path(&mut root, s, v.clone());
                }
            }
            set_path(&mut root, &k, v);
        }
        Ok(serde_json::from_value(root)?)
    }

    /// Defaults, then the JSON file, then `--set` assignments.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.into(),
                source: e,
            })?;
            let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.into(),
                detail: e.to_string(),
            })?;
            let Value::Object(map) = doc else {
                return Err(Error::Format {
                    path: path.into(),
                    detail: "config must be a JSON object".into(),
                });
            };
            cfg = cfg.apply(&map.into_iter().collect::<Vec<_>>())?;
        }
        let sets = sets.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
        cfg = cfg.apply(&sets)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |detail: String| Err(Error::Contract { op: "run config", detail });
        self.model.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        if self.probe.epochs == 0 || self.probe.batch_size == 0 {
            return bad("probe epochs and batch size must be positive".into());
        }
        self.probe.adam.validate()?;
        if self.itq.bits == 0 {
            return bad("itq.bits must be positive".into());
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return bad(format!("eval.ks must be a non-empty list of positive integers, got {:?}", self.eval.ks));
        }
        Ok(())
    }
}
