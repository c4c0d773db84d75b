//! `.fspw` parameter files: a JSON object holding the training
//! configuration, the feature recipe, the input standardization, the layer
//! shapes, and every weight as one flat list in layer order (each layer's
//! weights row-major, then its biases).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, Dense, InputNorm, ScorerConfig, ScorerParams};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;

pub const FORMAT_TAG: &str = "fspw1";

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerFile {
    pub config: ScorerConfig,
    pub features: FeatureSpec,
    pub params: ScorerParams,
}

#[derive(Serialize, Deserialize)]
struct LayerShape {
    name: String,
    out_dim: usize,
    in_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Raw {
    format: String,
    config: ScorerConfig,
    features: FeatureSpec,
    #[serde(default)]
    input_norm: Option<InputNorm>,
    layers: Vec<LayerShape>,
    weights: Vec<f64>,
}

fn layer_names(params: &ScorerParams) -> Vec<&'static str> {
    let mut names = vec!["projection"];
    if params.projection_b.is_some() {
        names.push("projection_b");
    }
    names.extend(["hidden1", "hidden2", "output"]);
    names
}

pub fn format_params(file: &ScorerFile) -> Result<String> {
    let p = &file.params;
    let raw = Raw {
        format: FORMAT_TAG.to_string(),
        config: file.config.clone(),
        features: file.features.clone(),
        input_norm: p.input_norm.clone(),
        layers: layer_names(p)
            .into_iter()
            .zip(p.layers())
            .map(|(name, l)| LayerShape {
                name: name.to_string(),
                out_dim: l.out_dim,
                in_dim: l.in_dim,
            })
            .collect(),
        weights: p.layers().into_iter().flat_map(Dense::flat).copied().collect(),
    };
    serde_json::to_string_pretty(&raw).map_err(|e| Error::parse("scorer parameters", e))
}

pub fn parse_params(text: &str) -> Result<ScorerFile> {
    let raw: Raw = serde_json::from_str(text).map_err(|e| Error::parse("scorer parameters", e))?;
    if raw.format != FORMAT_TAG {
        return Err(Error::validation(format!(
            "unknown parameter format \"{}\", expected \"{FORMAT_TAG}\"",
            raw.format
        )));
    }
    raw.features.validate()?;
    // The configuration fixes the architecture; the stored shapes must agree.
    let mut params = init_params(&raw.config)?.zeros_like();
    let expected: Vec<(usize, usize)> = params.layers().iter().map(|l| (l.out_dim, l.in_dim)).collect();
    let found: Vec<(usize, usize)> = raw.layers.iter().map(|l| (l.out_dim, l.in_dim)).collect();
    if expected != found {
        return Err(Error::validation(format!(
            "layer shapes {found:?} do not match the configuration {expected:?}"
        )));
    }
    let total = params.param_count();
    if raw.weights.len() != total {
        return Err(Error::validation(format!(
            "parameter file holds {} weights, architecture needs {total}",
            raw.weights.len()
        )));
    }
    let mut values = raw.weights.into_iter();
    for layer in params.layers_mut() {
        for slot in layer.flat_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    if let Some(norm) = &raw.input_norm {
        if norm.shift.len() != raw.config.input_dim || norm.scale.len() != raw.config.input_dim {
            return Err(Error::validation("input standardization does not match input_dim"));
        }
    }
    params.input_norm = raw.input_norm;
    if !params.is_finite() {
        return Err(Error::validation("parameter file contains non-finite weights"));
    }
    Ok(ScorerFile {
        config: raw.config,
        features: raw.features,
        params,
    })
}

pub fn save_params(file: &ScorerFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_params(file)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ScorerFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_params(&text)
}
