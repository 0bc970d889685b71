//! JSON encoding of attention tensors.
//!
//! Tensors travel either as nested arrays or, for large payloads, as
//! `{"shape": [..], "data": "<base64 little-endian f32>"}`.

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{AttentionArtifacts, BackendError, VQA_ATTENTION_PATH};
use crate::attention::{ChannelStack, FeatureStack, GradientStack, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorPayload {
    Blob { shape: Vec<usize>, data: String },
    Nested3(Vec<Vec<Vec<f64>>>),
    Nested2(Vec<Vec<f64>>),
}

fn protocol(msg: impl Into<String>) -> BackendError {
    BackendError::protocol(VQA_ATTENTION_PATH, msg)
}

impl TensorPayload {
    pub fn blob(shape: Vec<usize>, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        TensorPayload::Blob {
            shape,
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    fn decode_blob(shape: &[usize], data: &str) -> Result<Vec<f64>, BackendError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| protocol(format!("tensor blob is not base64: {e}")))?;
        let expected: usize = shape.iter().product();
        if bytes.len() != expected * 4 {
            return Err(protocol(format!(
                "tensor blob has {} bytes, shape {shape:?} needs {}",
                bytes.len(),
                expected * 4
            )));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    pub fn to_stack(&self) -> Result<ChannelStack<f64>, BackendError> {
        match self {
            TensorPayload::Nested3(n) => {
                ChannelStack::from_nested(n).map_err(|e| protocol(e.to_string()))
            }
            TensorPayload::Blob { shape, data } => {
                if shape.len() != 3 {
                    return Err(protocol(format!("expected a 3-d tensor, got shape {shape:?}")));
                }
                let values = Self::decode_blob(shape, data)?;
                ChannelStack::new(shape[0], shape[1], shape[2], values)
                    .map_err(|e| protocol(e.to_string()))
            }
            TensorPayload::Nested2(_) => Err(protocol("expected a 3-d tensor, got 2-d")),
        }
    }

    pub fn to_grid(&self) -> Result<Grid<f64>, BackendError> {
        let grid = match self {
            TensorPayload::Nested2(rows) => Grid::from_rows(rows),
            TensorPayload::Blob { shape, data } => {
                if shape.len() != 2 {
                    return Err(protocol(format!("expected a 2-d heatmap, got shape {shape:?}")));
                }
                Grid::new(shape[0], shape[1], Self::decode_blob(shape, data)?)
            }
            TensorPayload::Nested3(_) => return Err(protocol("expected a 2-d heatmap, got 3-d")),
        }
        .map_err(|e| protocol(e.to_string()))?;
        if grid.values.iter().any(|v| !v.is_finite()) {
            return Err(protocol("heatmap contains non-finite values"));
        }
        Ok(grid)
    }
}

/// Attention response as it appears on the wire: exactly one of
/// `features`+`gradients` or `heatmap` must be present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireAttentionResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<TensorPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradients: Option<TensorPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<TensorPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl WireAttentionResponse {
    pub fn into_artifacts(self) -> Result<AttentionArtifacts, BackendError> {
        match (self.features, self.gradients, self.heatmap) {
            (Some(f), Some(g), None) => {
                let features = f.to_stack()?;
                let gradients = g.to_stack()?;
                if features.shape() != gradients.shape() {
                    return Err(protocol(format!(
                        "features {:?} and gradients {:?} differ in shape",
                        features.shape(),
                        gradients.shape()
                    )));
                }
                let target_layer = self
                    .target_layer
                    .ok_or_else(|| protocol("gradient payload without target_layer"))?;
                Ok(AttentionArtifacts::Gradients {
                    features: FeatureStack(features),
                    gradients: GradientStack(gradients),
                    target_layer,
                    metadata: self.metadata,
                })
            }
            (None, None, Some(h)) => {
                let heatmap = h.to_grid()?;
                if heatmap.values.iter().any(|v| *v < 0.0 || *v > 1.0) {
                    return Err(protocol("heatmap values outside [0,1]"));
                }
                Ok(AttentionArtifacts::Heatmap {
                    heatmap,
                    target_layer: self.target_layer,
                    metadata: self.metadata,
                })
            }
            (None, None, None) => Err(protocol("attention response carries no payload")),
            (Some(_), None, _) | (None, Some(_), _) => {
                Err(protocol("features and gradients must be sent together"))
            }
            _ => Err(protocol("attention response carries both payload variants")),
        }
    }

    pub fn from_artifacts(a: &AttentionArtifacts) -> Self {
        match a {
            AttentionArtifacts::Gradients {
                features,
                gradients,
                target_layer,
                metadata,
            } => Self {
                features: Some(TensorPayload::Nested3(features.to_nested())),
                gradients: Some(TensorPayload::Nested3(gradients.to_nested())),
                target_layer: Some(target_layer.clone()),
                heatmap: None,
                metadata: metadata.clone(),
            },
            AttentionArtifacts::Heatmap {
                heatmap,
                target_layer,
                metadata,
            } => Self {
                heatmap: Some(TensorPayload::Nested2(
                    heatmap.values.chunks(heatmap.width).map(<[f64]>::to_vec).collect(),
                )),
                target_layer: target_layer.clone(),
                metadata: metadata.clone(),
                ..Default::default()
            },
        }
    }
}
