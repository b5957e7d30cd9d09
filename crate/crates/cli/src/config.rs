//! Run configuration: defaults, JSON config files with flat dotted keys and
//! `--set key=value` overrides.

use std::path::{Path, PathBuf};

use affordem::{ExperimentConfig, RegressorInput, SceneConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root holding `manifest.json`.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub manifest: String,
    /// Copied into every component seed before a run.
    pub seed: u64,
    /// Scenes written by `synth-gen`.
    pub count: usize,
    pub scene: SceneConfig,
    pub experiment: ExperimentConfig,
    /// Regressor input of `fit-pose` and `pipeline`.
    pub pose_input: RegressorInput,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            manifest: "manifest.json".into(),
            seed: 0,
            count: 60,
            scene: SceneConfig::default(),
            experiment: ExperimentConfig::desk_scale(),
            pose_input: RegressorInput::Pose,
        }
    }
}

impl RunConfig {
    /// Propagates `seed` into the scene, SGD, EM, GrabCut and pose seeds.
    pub fn seeded(mut self) -> Self {
        let s = self.seed;
        self.scene.seed = s;
        let e = &mut self.experiment;
        e.supervised.seed = s;
        e.em.seed = s;
        e.em.sgd.seed = s;
        e.em.grabcut.seed = s;
        e.pose.seed = s;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        self.scene.validate().map_err(|e| e.to_string())?;
        self.experiment.supervised.validate().map_err(|e| e.to_string())?;
        self.experiment.em.validate().map_err(|e| e.to_string())?;
        if self.experiment.pose.folds < 2 {
            return Err("experiment.pose.folds must be at least 2".into());
        }
        Ok(())
    }
}

/// Parses `key=value`; the value is JSON when it parses, a string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Writes `value` at the dotted `key`, which must name an existing field.
/// Objects written onto objects are merged field by field.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("`{}` is not a section", parts[..k].join(".")))?;
        node = obj.get_mut(*part).ok_or_else(|| format!("unknown config key `{key}`"))?;
    }
    match (node.is_object(), value) {
        (true, Value::Object(fields)) => {
            for (k, v) in fields {
                set_path(node, &k, v).map_err(|e| format!("{key}: {e}"))?;
            }
        }
        (_, v) => *node = v,
    }
    Ok(())
}

/// Defaults, then the config file, then each override in order.
pub fn resolve(
    file: Option<&Path>,
    base: Option<Value>,
    overrides: &[(String, Value)],
) -> Result<RunConfig, String> {
    let mut root = match base {
        Some(v) => v,
        None => serde_json::to_value(RunConfig::default()).map_err(|e| e.to_string())?,
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: Map<String, Value> =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for (k, v) in parsed {
            set_path(&mut root, &k, v).map_err(|e| format!("{}: {e}", path.display()))?;
        }
    }
    for (k, v) in overrides {
        set_path(&mut root, k, v.clone())?;
    }
    let config: RunConfig = serde_json::from_value(root).map_err(|e| format!("bad config: {e}"))?;
    config.validate()?;
    Ok(config)
}
