//! In-process backend serving the wire protocol from exact Markov chains.
//!
//! It implements [`Transport`], so the harness talks to it through the same
//! client, cache and validation path as a remote service.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::*;
use super::transport::{RawResponse, Transport, TransportError};
use crate::passage::split_words;
use crate::perturbation::sentinel;
use crate::seed::{derive_seed, stream};
use crate::synthetic::{ChainFamily, MarkovLM, SyntheticError};

pub const SOURCE_MODEL: &str = "synth-source";
pub const HUMAN_MODEL: &str = "synth-human";
pub const FILLER_MODEL: &str = "synth-filler";

/// Serves `/v1/score`, `/v1/generate` and `/v1/fill` from a registry of chains.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    models: BTreeMap<String, Arc<MarkovLM>>,
    /// Span length assumed when a fill request carries no `span_lengths`.
    pub default_fill_length: usize,
}

impl SyntheticBackend {
    pub fn new() -> Self {
        Self {
            models: BTreeMap::new(),
            default_fill_length: 2,
        }
    }

    pub fn with_model(mut self, id: &str, lm: MarkovLM) -> Self {
        self.models.insert(id.to_owned(), Arc::new(lm));
        self
    }

    pub fn model(&self, id: &str) -> Option<&MarkovLM> {
        self.models.get(id).map(Arc::as_ref)
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    /// The standard twin-chain world: a source chain, a "human" chain that is
    /// a Dirichlet-jittered, flattened copy of it, a filler that is their even mixture,
    /// and `n_extra` further jittered siblings named `synth-a`, `synth-b`, ...
    pub fn twin_world(seed: u64, family: &ChainFamily, n_extra: usize) -> Result<Self, SyntheticError> {
        let source = family.source(seed)?;
        let human = family.human(&source, seed)?;
        let filler = ChainFamily::mixture(&source, &human, 0.5)?;
        let mut world = Self::new()
            .with_model(SOURCE_MODEL, source.clone())
            .with_model(HUMAN_MODEL, human)
            .with_model(FILLER_MODEL, filler);
        for i in 0..n_extra {
            let name = sibling_name(i);
            let lm = family.jittered(&source, seed, &name)?;
            world = world.with_model(&name, lm);
        }
        Ok(world)
    }

    fn lookup(&self, id: &str) -> Result<&MarkovLM, RawResponse> {
        self.model(id).ok_or_else(|| {
            error(400, CODE_UNKNOWN_MODEL, format!("unknown model '{id}'"))
        })
    }

    fn score(&self, req: ScoreRequest) -> Result<RawResponse, RawResponse> {
        let lm = self.lookup(&req.model)?;
        let words = split_words(&req.text);
        if words.is_empty() {
            return Err(error(422, CODE_EMPTY_TEXT, "text is empty".into()));
        }
        let seq = lm.encode(&words).map_err(unscorable)?;
        let tokens = lm.score_indices(&seq);
        let total_logprob = tokens.iter().map(|t| t.logprob).sum();
        Ok(json_ok(&ScoreResponse {
            tokens,
            total_logprob,
        }))
    }

    fn generate(&self, req: GenerateRequest) -> Result<RawResponse, RawResponse> {
        let lm = self.lookup(&req.model)?;
        req.decoding
            .validate()
            .map_err(|e| error(422, CODE_BAD_REQUEST, e.to_string()))?;
        let words = split_words(&req.source_text);
        let prompt = &words[..req.n_prompt_tokens.min(words.len())];
        let prefix = lm.encode(prompt).map_err(unscorable)?;
        let mut rng = stream(req.seed);
        let continuation = lm.sample_indices(&prefix, req.max_tokens, &req.decoding, &mut rng);
        let text = prompt
            .iter()
            .map(String::as_str)
            .chain(continuation.iter().map(|&i| lm.symbol(i)))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(json_ok(&GenerateResponse { text }))
    }

    fn fill(&self, req: FillRequest) -> Result<RawResponse, RawResponse> {
        let lm = self.lookup(&req.model)?;
        let lengths = match &req.span_lengths {
            Some(l) if l.len() == req.span_count && l.iter().all(|&n| n > 0) => l.clone(),
            Some(_) => {
                return Err(error(422, CODE_BAD_REQUEST, "span_lengths must match span_count".into()))
            }
            None => vec![self.default_fill_length; req.span_count],
        };
        // slots: Some(symbol) for context words, None for masked positions
        let mut slots: Vec<Option<usize>> = Vec::new();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for word in split_words(&req.masked_text) {
            if word == sentinel(spans.len()) && spans.len() < req.span_count {
                let len = lengths[spans.len()];
                spans.push((slots.len(), len));
                slots.extend(std::iter::repeat_n(None, len));
            } else if word.starts_with("«MASK_") {
                return Err(error(422, CODE_BAD_REQUEST, format!("unexpected sentinel {word}")));
            } else {
                let sym = lm.encode(std::slice::from_ref(&word)).map_err(unscorable)?;
                slots.push(Some(sym[0]));
            }
        }
        if spans.len() != req.span_count {
            return Err(error(
                422,
                CODE_BAD_REQUEST,
                format!("found {} sentinels, expected {}", spans.len(), req.span_count),
            ));
        }
        let samples = (0..req.n_samples)
            .map(|i| {
                let mut rng = stream(derive_seed(req.seed, &format!("sample/{i}")));
                let filled = lm.fill_slots(&slots, &mut rng);
                spans
                    .iter()
                    .map(|&(start, len)| {
                        filled[start..start + len]
                            .iter()
                            .map(|&s| lm.symbol(s))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect()
            })
            .collect();
        Ok(json_ok(&FillResponse { samples }))
    }
}

impl Default for SyntheticBackend {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sibling_name(i: usize) -> String {
    format!("synth-{}", (b'a' + (i % 26) as u8) as char)
}

fn json_ok<T: Serialize>(v: &T) -> RawResponse {
    RawResponse::ok(serde_json::to_string(v).expect("response serializes"))
}

fn error(status: u16, code: &str, message: String) -> RawResponse {
    RawResponse {
        status,
        body: serde_json::to_string(&ErrorBody {
            error: message,
            code: code.to_owned(),
        })
        .expect("error serializes"),
    }
}

fn unscorable(e: SyntheticError) -> RawResponse {
    error(422, CODE_UNSCORABLE, e.to_string())
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, RawResponse> {
    serde_json::from_str(body).map_err(|e| error(400, CODE_BAD_REQUEST, e.to_string()))
}

impl Transport for SyntheticBackend {
    fn post(&self, path: &str, body: &str) -> Result<RawResponse, TransportError> {
        let out = match path {
            SCORE_PATH => parse(body).and_then(|r| self.score(r)),
            GENERATE_PATH => parse(body).and_then(|r| self.generate(r)),
            FILL_PATH => parse(body).and_then(|r| self.fill(r)),
            other => Err(error(404, "not_found", format!("no route {other}"))),
        };
        Ok(out.unwrap_or_else(|e| e))
    }
}
