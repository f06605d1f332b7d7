//! Wire types for the model-backend protocol. All bodies are UTF-8 JSON.
//!
//! ```text
//! POST /v1/score    {"model","text"} -> {"tokens":[{"logprob","rank","entropy"}..],"total_logprob"}
//! POST /v1/generate {"model","source_text","n_prompt_tokens","decoding","max_tokens","seed"} -> {"text"}
//! POST /v1/fill     {"model","masked_text","span_count","n_samples","seed"} -> {"samples":[[fill..]..]}
//! ```
//! Errors are 4xx with `{"error","code"}`; 5xx responses are retried.

use serde::{Deserialize, Serialize};

use crate::passage::TokenScoreRecord;
use crate::synthetic::Decoding;

pub const SCORE_PATH: &str = "/v1/score";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const FILL_PATH: &str = "/v1/fill";

pub const CODE_UNKNOWN_MODEL: &str = "unknown_model";
pub const CODE_EMPTY_TEXT: &str = "empty_text";
pub const CODE_BAD_REQUEST: &str = "bad_request";
pub const CODE_UNSCORABLE: &str = "unscorable_text";
pub const CODE_ARITY_EXHAUSTED: &str = "fill_arity_exhausted";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<TokenScoreRecord>,
    pub total_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub source_text: String,
    pub n_prompt_tokens: usize,
    pub decoding: Decoding,
    pub max_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRequest {
    pub model: String,
    pub masked_text: String,
    pub span_count: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Optional hint with the word length of each masked span. Neural fillers
    /// ignore it; length-preserving fillers use it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_lengths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub samples: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}
