//! Training configuration files (TOML, or JSON when the file ends in
//! `.json`). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::HyperParams;

const KEYS: &[&str] = &[
    "lengths", "alpha", "beta", "mu", "omega", "lambda", "anchors", "max_iter", "tol", "seed", "x1", "x2", "labels",
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum Weight {
    Scalar(f64),
    PerLength(Vec<f64>),
}

#[derive(Debug, Deserialize)]
struct RawConfig {
    lengths: Vec<usize>,
    alpha: Option<Weight>,
    beta: Option<Weight>,
    mu: Option<Weight>,
    omega: Option<Weight>,
    lambda: Option<f64>,
    anchors: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    seed: Option<u64>,
    x1: Option<PathBuf>,
    x2: Option<PathBuf>,
    labels: Option<PathBuf>,
}

/// Training inputs named by the configuration; relative paths are resolved
/// against the configuration file's directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputPaths {
    pub x1: Option<PathBuf>,
    pub x2: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyperparams: HyperParams,
    pub inputs: InputPaths,
}

fn broadcast(name: &str, w: Option<Weight>, default: f64, len: usize) -> Result<Vec<f64>> {
    let values = match w {
        None => vec![default; len],
        Some(Weight::Scalar(v)) => vec![v; len],
        Some(Weight::PerLength(list)) => {
            // mu may also be given with one entry per length; the last one
            // has no successor and is dropped.
            if name == "mu" && list.len() == len + 1 {
                list[..len].to_vec()
            } else if list.len() == len {
                list
            } else {
                return Err(Error::Config(format!(
                    "{name} lists {} values, expected {len}",
                    list.len()
                )));
            }
        }
    };
    if let Some(&bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NegativeWeight {
            name: name.into(),
            value: bad,
        });
    }
    Ok(values)
}

fn to_json(text: &str, json: bool) -> Result<serde_json::Value> {
    if json {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    } else {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses configuration text. `json` selects the syntax; `base` resolves
/// relative input paths.
pub fn parse_config_str(text: &str, json: bool, base: &Path) -> Result<TrainConfig> {
    let value = to_json(text, json)?;
    let table = value
        .as_object()
        .ok_or_else(|| Error::Config("configuration must be a table of keys".into()))?;
    if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(Error::UnknownKey(key.clone()));
    }
    let raw: RawConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;

    let k = raw.lengths.len();
    if k == 0 {
        return Err(Error::Config("lengths must list at least one code length".into()));
    }
    if raw.lengths[0] == 0 || raw.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::NonIncreasingLengths(raw.lengths));
    }
    let mut hp = HyperParams::with_lengths(&raw.lengths);
    hp.alpha = broadcast("alpha", raw.alpha, HyperParams::DEFAULT_ALPHA, k)?;
    hp.beta = broadcast("beta", raw.beta, HyperParams::DEFAULT_BETA, k)?;
    hp.mu = broadcast("mu", raw.mu, HyperParams::DEFAULT_MU, k - 1)?;
    hp.omega = broadcast("omega", raw.omega, HyperParams::DEFAULT_OMEGA, k)?;
    if let Some(v) = raw.lambda {
        hp.lambda = v;
    }
    if let Some(v) = raw.anchors {
        hp.anchors = v;
    }
    if let Some(v) = raw.max_iter {
        hp.max_iter = v;
    }
    if let Some(v) = raw.tol {
        hp.tol = v;
    }
    if let Some(v) = raw.seed {
        hp.seed = v;
    }
    hp.validate()?;

    let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
    Ok(TrainConfig {
        hyperparams: hp,
        inputs: InputPaths {
            x1: resolve(raw.x1),
            x2: resolve(raw.x2),
            labels: resolve(raw.labels),
        },
    })
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, json, base)
}
