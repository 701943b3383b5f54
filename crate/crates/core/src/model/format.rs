//! TOML model-spec documents. The schema is described in
//! `docs/model-format.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::ValueRange;

pub const MODEL_DOCUMENT_KIND: &str = "model";
const FORMAT_VERSION: u32 = 1;

/// What to do with dense/conv layers that omit `weights`/`bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    /// Missing parameters are a parse error.
    Require,
    /// Missing parameters are drawn with [`ModelSpec::initialize`] using the seed.
    InitializeMissing(u64),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    kind: String,
    #[serde(default = "default_version")]
    format_version: u32,
    input_shape: Vec<usize>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_range: Option<[f64; 2]>,
    layers: Vec<LayerDoc>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerDoc {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Relu,
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Flatten,
    #[serde(rename = "avgpool2d")]
    AvgPool2d { k: usize },
}

/// Parses a model-spec document. Shapes are checked by [`Model::compile`].
pub fn parse_model_spec(text: &str, policy: WeightPolicy) -> Result<ModelSpec> {
    let doc: ModelDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.kind != MODEL_DOCUMENT_KIND {
        return Err(Error::Parse(format!(
            "expected document kind \"{MODEL_DOCUMENT_KIND}\", found \"{}\"",
            doc.kind
        )));
    }
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    let mut missing = false;
    let mut take = |v: Option<Vec<f64>>, n: usize| {
        v.unwrap_or_else(|| {
            missing = true;
            vec![0.0; n]
        })
    };
    let layers = doc
        .layers
        .into_iter()
        .map(|l| match l {
            LayerDoc::Dense {
                inputs,
                outputs,
                weights,
                bias,
            } => Layer::Dense {
                inputs,
                outputs,
                weights: take(weights, inputs * outputs),
                bias: take(bias, outputs),
            },
            LayerDoc::Relu => Layer::Relu,
            LayerDoc::Conv2d {
                in_ch,
                out_ch,
                k,
                weights,
                bias,
            } => Layer::Conv2d {
                in_ch,
                out_ch,
                k,
                weights: take(weights, out_ch * in_ch * k * k),
                bias: take(bias, out_ch),
            },
            LayerDoc::Flatten => Layer::Flatten,
            LayerDoc::AvgPool2d { k } => Layer::AvgPool2d { k },
        })
        .collect();
    let input_range = match doc.input_range {
        Some([lo, hi]) => ValueRange::new(lo, hi)?,
        None => ValueRange::default(),
    };
    let mut spec = ModelSpec {
        input_shape: doc.input_shape,
        num_classes: doc.num_classes,
        input_range,
        layers,
    };
    if missing {
        match policy {
            WeightPolicy::Require => {
                return Err(Error::Parse("layer is missing weights or bias".into()))
            }
            WeightPolicy::InitializeMissing(seed) => spec.initialize(seed),
        }
    }
    Ok(spec)
}

/// Reads, parses and compiles a model-spec file.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    Model::compile(parse_model_spec(&text, WeightPolicy::Require)?)
}

impl ModelSpec {
    /// Serializes to the model-spec document format.
    pub fn to_toml(&self) -> Result<String> {
        let doc = ModelDoc {
            kind: MODEL_DOCUMENT_KIND.into(),
            format_version: FORMAT_VERSION,
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
            input_range: Some([self.input_range.lo, self.input_range.hi]),
            layers: self
                .layers
                .iter()
                .map(|l| match l.clone() {
                    Layer::Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    } => LayerDoc::Dense {
                        inputs,
                        outputs,
                        weights: Some(weights),
                        bias: Some(bias),
                    },
                    Layer::Relu => LayerDoc::Relu,
                    Layer::Conv2d {
                        in_ch,
                        out_ch,
                        k,
                        weights,
                        bias,
                    } => LayerDoc::Conv2d {
                        in_ch,
                        out_ch,
                        k,
                        weights: Some(weights),
                        bias: Some(bias),
                    },
                    Layer::Flatten => LayerDoc::Flatten,
                    Layer::AvgPool2d { k } => LayerDoc::AvgPool2d { k },
                })
                .collect(),
        };
        toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
    }
}
