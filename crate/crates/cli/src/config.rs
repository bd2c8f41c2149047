//! Run configuration: built-in defaults, then a JSON file, then command-line
//! overrides, with the origin of every resolved value recorded.

use std::collections::BTreeMap;
use std::path::Path;

use eigencoin::classify::ClassifierConfig;
use eigencoin::eval::EvalOptions;
use eigencoin::imaging::PreprocessConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "EIGENCOIN_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetOverrides {
    /// Replaces the manifest's split fraction.
    #[serde(default)]
    pub fraction: Option<f64>,
    /// Replaces the manifest's split seed (and the synthetic seed).
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Treat input images as already normalized.
    #[serde(default)]
    pub skip_preprocess: bool,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub dataset: DatasetOverrides,
    /// Per-method classifier settings for `compare`, keyed by method name.
    #[serde(default)]
    pub compare: BTreeMap<String, ClassifierConfig>,
}

impl RunConfig {
    pub fn preprocess(&self) -> Option<PreprocessConfig> {
        (!self.skip_preprocess).then_some(self.preprocess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Flag,
}

/// A fully resolved configuration plus where each leaf came from.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    #[serde(skip)]
    pub config: RunConfig,
    #[serde(rename = "values")]
    pub value: Value,
    pub provenance: BTreeMap<String, Source>,
}

fn leaves(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                leaves(&path, child, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn merge(base: &mut Value, patch: &Value, prefix: &str, source: Source, prov: &mut BTreeMap<String, Source>) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, pv) in p {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                let slot = b.entry(k.clone()).or_insert(Value::Null);
                if pv.is_object() && slot.is_object() {
                    merge(slot, pv, &path, source, prov);
                } else {
                    *slot = pv.clone();
                    let mut ls = Vec::new();
                    leaves(&path, pv, &mut ls);
                    for l in ls {
                        prov.insert(l, source);
                    }
                }
            }
        }
        (slot, _) => *slot = patch.clone(),
    }
}

/// Parses `a.b.c=value`; the value is JSON when it parses as JSON, a string
/// otherwise.
pub fn parse_assignment(s: &str) -> CliResult<(Vec<String>, Value)> {
    let (path, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{s}`")))?;
    let keys: Vec<String> = path.split('.').map(str::to_string).collect();
    if keys.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("malformed config key `{path}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((keys, value))
}

fn nest(keys: &[String], value: Value) -> Value {
    keys.iter().rev().fold(value, |acc, k| {
        let mut m = Map::new();
        m.insert(k.clone(), acc);
        Value::Object(m)
    })
}

/// Resolves defaults ← `file` ← `sets` (in order) ← `seed`.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> CliResult<Resolved> {
    let mut value = serde_json::to_value(RunConfig::default()).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut prov = BTreeMap::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Usage(format!(
                "config {} must hold a JSON object",
                path.display()
            )));
        }
        merge(&mut value, &patch, "", Source::File, &mut prov);
    }
    for s in sets {
        let (keys, v) = parse_assignment(s)?;
        merge(&mut value, &nest(&keys, v), "", Source::Flag, &mut prov);
    }
    if let Some(seed) = seed {
        merge(
            &mut value,
            &serde_json::json!({"dataset": {"seed": seed}}),
            "",
            Source::Flag,
            &mut prov,
        );
    }

    let config: RunConfig =
        serde_json::from_value(value.clone()).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    config.preprocess.validate()?;
    config.classifier.validate()?;
    for c in config.compare.values() {
        c.validate()?;
    }
    if let Some(f) = config.dataset.fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::Usage(format!("dataset.fraction {f} outside (0,1)")));
        }
    }

    let resolved = serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut given = Vec::new();
    leaves("", &value, &mut given);
    let mut kept = Vec::new();
    leaves("", &resolved, &mut kept);
    if let Some(stray) = given.iter().find(|g| !kept.contains(g) && prov.contains_key(*g)) {
        return Err(CliError::Usage(format!(
            "configuration key `{stray}` is unknown or does not apply"
        )));
    }
    let provenance = kept
        .into_iter()
        .map(|k| {
            let s = prov.get(&k).copied().unwrap_or(Source::Default);
            (k, s)
        })
        .collect();
    Ok(Resolved {
        config,
        value: resolved,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use eigencoin::classify::MethodConfig;

    #[test]
    fn defaults_only() {
        let r = resolve(None, &[], None).unwrap();
        assert_eq!(r.config, RunConfig::default());
        assert!(r.provenance.values().all(|&s| s == Source::Default));
        assert_eq!(r.provenance.get("preprocess.sobel_threshold"), Some(&Source::Default));
        assert_eq!(r.provenance.get("classifier.method"), Some(&Source::Default));
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"classifier":{"method":"bdpca","k_r":4},"preprocess":{"normalized_size":32}}"#,
        )
        .unwrap();
        let r = resolve(Some(&path), &["classifier.k_c=6".into()], Some(9)).unwrap();
        assert_eq!(r.config.classifier.method, MethodConfig::Bdpca { k_r: 4, k_c: 6 });
        assert_eq!(r.config.preprocess.normalized_size, 32);
        assert_eq!(r.config.dataset.seed, Some(9));
        assert_eq!(r.provenance["classifier.k_r"], Source::File);
        assert_eq!(r.provenance["classifier.k_c"], Source::Flag);
        assert_eq!(r.provenance["dataset.seed"], Source::Flag);
        assert_eq!(r.provenance["preprocess.se_length"], Source::Default);
    }

    #[test]
    fn bad_keys_are_usage_errors() {
        assert!(matches!(
            resolve(None, &["nonsense=1".into()], None),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            resolve(None, &["classifier.k_r=3".into()], None),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            resolve(None, &["classifier.threshold=-1".into()], None),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            resolve(None, &["novalue".into()], None),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            resolve(None, &["preprocess.sobel_threshold=2".into()], None),
            Err(CliError::Usage(_))
        ));
    }
}
