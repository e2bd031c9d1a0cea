//! Run configuration: profile presets, a TOML file and `a.b=v` overrides.
//!
//! Resolution order, later wins: the preset named by `profile` (default
//! `desk`), the file, then the overrides. A top-level `seed` (or
//! `PREDNET_SEED` when neither file nor overrides give one) is copied into
//! `train.seed` and `data.seed` unless those are set explicitly.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{EncoderConfig, MovingShapesConfig, Normalization, SamplingConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::prednet::{ErrorMode, PredNetConfig};
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "PREDNET_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Usage(format!("unknown profile {s:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding `train.json`, `val.json` and `test.json`.
    pub data_dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub normalization: Normalization,
    pub train: TrainConfig,
    pub data: MovingShapesConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn paper() -> Self {
        let data = MovingShapesConfig::default();
        RunConfig {
            profile: Profile::Paper,
            seed: 7,
            model: ModelConfig {
                prednet: PredNetConfig::paper(),
                num_classes: 51,
                use_prednet: true,
                encoder: None,
            },
            sampling: SamplingConfig::paper(),
            normalization: Normalization::paper(),
            train: TrainConfig::paper(),
            data,
            paths: PathsConfig {
                data_dir: "data".into(),
            },
        }
    }

    /// 32×32 single-channel moving shapes, a frozen random encoder to 8
    /// channels at 8×8, two 4-channel PredNet layers over 10 steps.
    pub fn desk() -> Self {
        let data = MovingShapesConfig {
            frames: 30,
            ..MovingShapesConfig::default()
        };
        RunConfig {
            profile: Profile::Desk,
            seed: 7,
            model: ModelConfig {
                prednet: PredNetConfig {
                    input_channels: 8,
                    repr_channels: vec![4, 4],
                    height: 8,
                    width: 8,
                    time_steps: 10,
                    kernel_size: 3,
                    error_mode: ErrorMode::RectifiedSplit,
                },
                num_classes: data.classes.len(),
                use_prednet: true,
                encoder: Some(EncoderConfig {
                    image_channels: 1,
                    image_height: data.height,
                    image_width: data.width,
                    hidden_channels: 8,
                    out_channels: 8,
                    kernel_size: 3,
                    trainable: false,
                }),
            },
            sampling: SamplingConfig::desk(),
            normalization: Normalization::desk(data.height),
            train: TrainConfig::desk(),
            data,
            paths: PathsConfig {
                data_dir: "data".into(),
            },
        }
    }

    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Builds the configuration from optional TOML text, `key=value`
    /// overrides and the seed environment fallback.
    pub fn resolve(file: Option<&str>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let file: Table = match file {
            Some(text) => toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?,
            None => Table::new(),
        };
        let overrides = overrides
            .iter()
            .map(|o| parse_override(o))
            .collect::<Result<Vec<_>>>()?;
        let explicit = |path: &[&str]| {
            get_path(&file, path).is_some() || overrides.iter().any(|(k, _)| k.iter().map(String::as_str).eq(path.iter().copied()))
        };

        let profile_value = overrides
            .iter()
            .rev()
            .find(|(k, _)| k.len() == 1 && k[0] == "profile")
            .map(|(_, v)| v.clone())
            .or_else(|| file.get("profile").cloned());
        let profile = match profile_value {
            None => Profile::default(),
            Some(Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::Config(format!("profile must be a string, got {v}"))),
        };

        let mut merged = match Value::try_from(Self::preset(profile)) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("presets serialize to a table"),
        };
        merge(&mut merged, &file, &mut Vec::new())?;
        for (key, value) in &overrides {
            set_path(&mut merged, key, value.clone())?;
        }

        let seed_given = explicit(&["seed"]);
        let seed = if seed_given {
            merged.get("seed").cloned()
        } else {
            match env_seed {
                Some(s) => Some(Value::Integer(s.trim().parse::<i64>().map_err(|_| {
                    Error::Config(format!("{SEED_ENV}={s:?} is not an integer"))
                })?)),
                None => None,
            }
        };
        if let Some(seed) = seed {
            merged.insert("seed".into(), seed.clone());
            for section in ["train", "data"] {
                if !explicit(&[section, "seed"]) {
                    set_path(&mut merged, &[section.to_string(), "seed".to_string()], seed.clone())?;
                }
            }
        }

        let cfg: RunConfig = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.prednet.validate()?;
        if let Some(e) = &self.model.encoder {
            e.validate()?;
        }
        self.train.validate()?;
        if self.sampling.steps != self.model.prednet.time_steps {
            return Err(Error::Config(format!(
                "sampling.steps = {} but the model unrolls {} steps",
                self.sampling.steps, self.model.prednet.time_steps
            )));
        }
        if self.sampling.steps > self.sampling.window || self.sampling.steps == 0 {
            return Err(Error::Config(format!(
                "cannot keep {} frames of a {}-frame window",
                self.sampling.steps, self.sampling.window
            )));
        }
        Ok(())
    }

    /// The resolved configuration as TOML, as logged by every run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Reads the configuration echoed into a checkpoint trailer.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value.clone())
            .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let text = text.strip_prefix("--").unwrap_or(text);
    let Some((key, raw)) = text.split_once('=') else {
        return Err(Error::Usage(format!("override {text:?} is not key=value")));
    };
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!("bad override key {key:?}")));
    }
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.split('.').map(String::from).collect(), value))
}

fn get_path<'a>(table: &'a Table, path: &[&str]) -> Option<&'a Value> {
    let (last, parents) = path.split_last()?;
    let mut t = table;
    for p in parents {
        t = t.get(*p)?.as_table()?;
    }
    t.get(*last)
}

/// Sets an existing key; unknown keys are usage errors.
fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let unknown = || Error::Usage(format!("unknown config key {:?}", path.join(".")));
    let (last, parents) = path.split_last().ok_or_else(unknown)?;
    let mut t = table;
    for p in parents {
        t = t.get_mut(p).and_then(Value::as_table_mut).ok_or_else(unknown)?;
    }
    if !t.contains_key(last) {
        return Err(unknown());
    }
    t.insert(last.clone(), value);
    Ok(())
}

/// Deep-merges `src` into `dst`. Tables merge key by key; anything else
/// replaces. Keys absent from the preset are rejected.
fn merge(dst: &mut Table, src: &Table, path: &mut Vec<String>) -> Result<()> {
    for (k, v) in src {
        path.push(k.clone());
        match (dst.get_mut(k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s, path)?,
            (Some(slot), _) => *slot = v.clone(),
            (None, _) if optional_key(path) => {
                dst.insert(k.clone(), v.clone());
            }
            (None, _) => {
                return Err(Error::Config(format!("unknown config key {:?}", path.join("."))));
            }
        }
        path.pop();
    }
    Ok(())
}

/// Keys a preset may leave out because they are optional.
fn optional_key(path: &[String]) -> bool {
    matches!(path, [a, b] if a == "model" && b == "encoder") || matches!(path, [a, b] if a == "train" && b == "per_step_loss")
}
