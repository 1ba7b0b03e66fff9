//! JSON bodies of the specialist backend protocol.
//!
//! ```text
//! GET  /v1/health   -> {"status":"ok","model_id":..,"model_version":..,"labels":[..]}
//! POST /v1/predict  {"texts":[..]} -> {"model_version":..,"predictions":[{"label":..,"confidence":..}]}
//! POST /v1/refine   {"samples":[{"text":..,"label":..}],"hyperparams":{..}}
//!                   -> {"model_version":..,"train_loss_before":..,"train_loss_after":..}
//! ```
//!
//! Field order in these structs is the order on the wire.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: String,
    pub model_version: u64,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrediction {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model_version: u64,
    pub predictions: Vec<WirePrediction>,
}

/// Fine-tuning settings sent with every refine request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineHyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: u32,
}

impl Default for RefineHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            epochs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineSample {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRequest {
    pub samples: Vec<RefineSample>,
    pub hyperparams: RefineHyperparams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineResponse {
    pub model_version: u64,
    pub train_loss_before: f64,
    pub train_loss_after: f64,
}
