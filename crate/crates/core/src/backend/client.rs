use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::cache::ResponseCache;
use super::protocol::*;
use super::transport::{HttpTransport, RawResponse, Transport, TransportError};
use crate::passage::{passage_hash, split_words, within_rtol, Passage, ScoredPassage};
use crate::seed::derive_seed;
use crate::synthetic::Decoding;

/// Absolute-or-relative tolerance on `total_logprob` vs the token sum.
pub const PROTOCOL_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{0} (after retries)")]
    Transport(#[from] TransportError),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("backend rejected request ({status} {code}): {message}")]
    Rejected {
        status: u16,
        code: String,
        message: String,
    },
    #[error("backend error {status} after retries: {body}")]
    Server { status: u16, body: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("filler could not produce {expected} well-formed fills ({accepted} accepted after {attempts} requests)")]
    FillArity {
        expected: usize,
        accepted: usize,
        attempts: usize,
    },
    #[error("cache i/o: {0}")]
    Cache(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub model_id: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry_budget: usize,
}

impl Default for BackendEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            model_id: String::new(),
            timeout: Duration::from_secs(120),
            max_in_flight: 8,
            retry_budget: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub max: Duration,
}

impl Backoff {
    pub const NONE: Backoff = Backoff {
        base: Duration::ZERO,
        max: Duration::ZERO,
    };

    pub fn delay(&self, attempt: usize) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(16) as u32);
        self.base.saturating_mul(factor).min(self.max)
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(200),
            max: Duration::from_secs(10),
        }
    }
}

/// Counting gate bounding concurrently outstanding requests.
struct Gate {
    max: usize,
    count: Mutex<usize>,
    cv: Condvar,
}

struct GateGuard<'a>(&'a Gate);

impl Gate {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            count: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.count.lock().unwrap();
        while *n >= self.max {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        GateGuard(self)
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

/// Options for one `generate` call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateParams {
    pub n_prompt_tokens: usize,
    pub decoding: Decoding,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            n_prompt_tokens: 30,
            decoding: Decoding::default(),
            max_tokens: 200,
            seed: 0,
        }
    }
}

/// Client for the scoring / generation / fill protocol. Safe to share
/// across threads; identical logical requests are served from the cache.
pub struct BackendClient {
    transport: Arc<dyn Transport>,
    cache: ResponseCache,
    gate: Gate,
    retry_budget: usize,
    backoff: Backoff,
    network_calls: AtomicUsize,
}

impl BackendClient {
    pub fn new(transport: Arc<dyn Transport>, cache: ResponseCache) -> Self {
        let defaults = BackendEndpoint::default();
        Self {
            transport,
            cache,
            gate: Gate::new(defaults.max_in_flight),
            retry_budget: defaults.retry_budget,
            backoff: Backoff::default(),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn http(endpoint: &BackendEndpoint, cache: ResponseCache) -> Result<Self, BackendError> {
        let transport = HttpTransport::new(&endpoint.base_url, endpoint.timeout)?;
        Ok(Self::new(Arc::new(transport), cache)
            .with_max_in_flight(endpoint.max_in_flight)
            .with_retry_budget(endpoint.retry_budget))
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate = Gate::new(n);
        self
    }

    pub fn with_retry_budget(mut self, n: usize) -> Self {
        self.retry_budget = n;
        self
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.gate.max
    }

    /// Requests that actually reached the transport (cache misses, retries included).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn send(&self, path: &str, body: &str) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            let outcome = {
                let _slot = self.gate.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                self.transport.post(path, body)
            };
            let retryable = match outcome {
                Ok(RawResponse { status, body }) if (200..300).contains(&status) => return Ok(body),
                Ok(RawResponse { status, body }) if (400..500).contains(&status) || status == 507 => {
                    return Err(rejection(status, &body));
                }
                Ok(RawResponse { status, body }) => BackendError::Server { status, body },
                Err(e) => BackendError::Transport(e),
            };
            if attempt >= self.retry_budget {
                return Err(retryable);
            }
            log::debug!("retrying {path} after: {retryable}");
            std::thread::sleep(self.backoff.delay(attempt));
            attempt += 1;
        }
    }

    /// POST through the cache. `text` is the request's primary text field,
    /// `op` names the operation for the cache key.
    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        op: &str,
        model: &str,
        text: &str,
        req: &Req,
    ) -> Result<Resp, BackendError> {
        let body = serde_json::to_string(req).expect("request serializes");
        let key = cache_key(op, model, text, req);
        let (resp, _hit) = self.cache.get_or_fetch(&key, || self.send(path, &body))?;
        serde_json::from_str(&resp).map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
    }

    pub fn score(&self, model: &str, passage: &Passage) -> Result<ScoredPassage, BackendError> {
        if passage.len_words() == 0 {
            return Err(BackendError::InvalidRequest("empty text".into()));
        }
        let req = ScoreRequest {
            model: model.to_owned(),
            text: passage.text.clone(),
        };
        let resp: ScoreResponse = self.call(SCORE_PATH, "score", model, &passage.text, &req)?;
        let sum: f64 = resp.tokens.iter().map(|t| t.logprob).sum();
        if !within_rtol(resp.total_logprob, sum, PROTOCOL_SUM_TOLERANCE) {
            return Err(BackendError::Protocol(format!(
                "total_logprob {} disagrees with token sum {sum}",
                resp.total_logprob
            )));
        }
        ScoredPassage::from_records(passage.clone(), resp.tokens)
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }

    pub fn generate(
        &self,
        model: &str,
        source: &Passage,
        params: &GenerateParams,
    ) -> Result<Passage, BackendError> {
        params
            .decoding
            .validate()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let req = GenerateRequest {
            model: model.to_owned(),
            source_text: source.text.clone(),
            n_prompt_tokens: params.n_prompt_tokens,
            decoding: params.decoding,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let resp: GenerateResponse = self.call(GENERATE_PATH, "generate", model, &source.text, &req)?;
        Ok(Passage::new(source.id.clone(), &resp.text))
    }

    /// Request `n_samples` fills for a text with `span_count` sentinels. Samples
    /// with the wrong arity or an empty fill are dropped and the shortfall is
    /// re-requested under a derived seed, at most `retry_budget` times.
    pub fn fill_masks(
        &self,
        model: &str,
        masked_text: &str,
        span_count: usize,
        n_samples: usize,
        seed: u64,
        span_lengths: Option<&[usize]>,
    ) -> Result<Vec<Vec<Vec<String>>>, BackendError> {
        if span_count == 0 || n_samples == 0 {
            return Err(BackendError::InvalidRequest(
                "span_count and n_samples must be positive".into(),
            ));
        }
        let mut accepted = Vec::with_capacity(n_samples);
        let mut attempts = 0;
        while accepted.len() < n_samples {
            if attempts > self.retry_budget {
                return Err(BackendError::FillArity {
                    expected: span_count,
                    accepted: accepted.len(),
                    attempts,
                });
            }
            let req = FillRequest {
                model: model.to_owned(),
                masked_text: masked_text.to_owned(),
                span_count,
                n_samples: n_samples - accepted.len(),
                seed: if attempts == 0 {
                    seed
                } else {
                    derive_seed(seed, &format!("fill-resample/{attempts}"))
                },
                span_lengths: span_lengths.map(<[usize]>::to_vec),
            };
            attempts += 1;
            let resp: FillResponse = self.call(FILL_PATH, "fill", model, masked_text, &req)?;
            for sample in resp.samples {
                let fills: Vec<Vec<String>> = sample.iter().map(|f| split_words(f)).collect();
                if fills.len() == span_count && fills.iter().all(|f| !f.is_empty()) {
                    accepted.push(fills);
                } else {
                    log::debug!("rejecting fill sample with {} of {span_count} fills", fills.len());
                }
            }
        }
        accepted.truncate(n_samples);
        Ok(accepted)
    }
}

fn rejection(status: u16, body: &str) -> BackendError {
    let parsed: Option<ErrorBody> = serde_json::from_str(body).ok();
    match parsed {
        Some(e) if e.code == CODE_UNKNOWN_MODEL => BackendError::UnknownModel(e.error),
        Some(e) => BackendError::Rejected {
            status,
            code: e.code,
            message: e.error,
        },
        None => BackendError::Rejected {
            status,
            code: String::new(),
            message: body.to_owned(),
        },
    }
}

/// `passage_hash(text, model/op/params)` where params is the canonical
/// (key-sorted) JSON of the request without its model and text fields.
pub fn cache_key<Req: Serialize>(op: &str, model: &str, text: &str, req: &Req) -> String {
    let mut v = serde_json::to_value(req).expect("request serializes");
    if let Some(obj) = v.as_object_mut() {
        for field in ["model", "text", "source_text", "masked_text"] {
            obj.remove(field);
        }
    }
    passage_hash(text, &format!("{model}\u{1f}{op}\u{1f}{v}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Replays canned responses and records request bodies.
    #[derive(Default)]
    struct Scripted {
        responses: Mutex<VecDeque<Result<RawResponse, TransportError>>>,
        requests: Mutex<Vec<(String, String)>>,
    }

    impl Scripted {
        fn push(&self, status: u16, body: &str) {
            self.responses.lock().unwrap().push_back(Ok(RawResponse {
                status,
                body: body.into(),
            }));
        }
    }

    impl Transport for Scripted {
        fn post(&self, path: &str, body: &str) -> Result<RawResponse, TransportError> {
            self.requests.lock().unwrap().push((path.into(), body.into()));
            self.responses
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(TransportError("script exhausted".into())))
        }
    }

    fn client(t: &Arc<Scripted>) -> BackendClient {
        BackendClient::new(t.clone(), ResponseCache::in_memory()).with_backoff(Backoff::NONE)
    }

    #[test]
    fn score_assembly_and_cache() {
        let t = Arc::new(Scripted::default());
        t.push(200, r#"{"tokens":[{"logprob":-1,"rank":1,"entropy":0},{"logprob":-2,"rank":3,"entropy":0.5}],"total_logprob":-3}"#);
        let c = client(&t);
        let p = Passage::new("a", "hello world");
        let s = c.score("gpt", &p).unwrap();
        assert_eq!(s.total_logprob, -3.0);
        assert_eq!(s.records[1].rank, 3);
        assert_eq!(c.network_calls(), 1);
        let again = c.score("gpt", &Passage::new("b", "hello   world")).unwrap();
        assert_eq!(again.total_logprob, -3.0);
        assert_eq!(c.network_calls(), 1);
        assert_eq!(t.requests.lock().unwrap()[0].1, r#"{"model":"gpt","text":"hello world"}"#);
    }

    #[test]
    fn score_sum_mismatch_is_protocol_violation() {
        let t = Arc::new(Scripted::default());
        t.push(200, r#"{"tokens":[{"logprob":-1,"rank":1,"entropy":0},{"logprob":-2,"rank":1,"entropy":0}],"total_logprob":-3.1}"#);
        t.push(200, r#"{"tokens":[{"logprob":-1,"rank":1}],"total_logprob":-1}"#);
        t.push(200, r#"{"tokens":[],"total_logprob":0}"#);
        let c = client(&t);
        for text in ["a", "b", "c"] {
            assert!(matches!(c.score("m", &Passage::new("p", text)), Err(BackendError::Protocol(_))));
        }
    }

    #[test]
    fn retries_server_errors_then_gives_up() {
        let t = Arc::new(Scripted::default());
        t.push(503, "busy");
        t.push(502, "busy");
        t.push(200, r#"{"text":"ok then"}"#);
        let c = client(&t).with_retry_budget(2);
        let out = c.generate("m", &Passage::new("s", "src"), &GenerateParams::default()).unwrap();
        assert_eq!(out.text, "ok then");
        assert_eq!(c.network_calls(), 3);

        let t = Arc::new(Scripted::default());
        for _ in 0..3 {
            t.push(500, "down");
        }
        let c = client(&t).with_retry_budget(2);
        let err = c.score("m", &Passage::new("p", "x")).unwrap_err();
        assert!(matches!(err, BackendError::Server { status: 500, .. }));
        assert_eq!(c.network_calls(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Arc::new(Scripted::default());
        t.push(400, r#"{"error":"no such model: zz","code":"unknown_model"}"#);
        t.push(422, r#"{"error":"bad","code":"empty_text"}"#);
        let c = client(&t);
        assert!(matches!(c.score("zz", &Passage::new("p", "x")), Err(BackendError::UnknownModel(_))));
        assert!(matches!(
            c.score("m", &Passage::new("p", "y")),
            Err(BackendError::Rejected { status: 422, .. })
        ));
        assert_eq!(c.network_calls(), 2);
    }

    #[test]
    fn decoding_validated_client_side() {
        let t = Arc::new(Scripted::default());
        let c = client(&t);
        let params = GenerateParams {
            decoding: Decoding::TopP { p: 1.5 },
            ..GenerateParams::default()
        };
        assert!(matches!(
            c.generate("m", &Passage::new("s", "x"), &params),
            Err(BackendError::InvalidRequest(_))
        ));
        assert_eq!(c.network_calls(), 0);
    }

    #[test]
    fn generate_request_bodies() {
        let t = Arc::new(Scripted::default());
        let c = client(&t);
        for (d, frag) in [
            (Decoding::TopK { k: 40 }, r#""decoding":{"strategy":"top_k","k":40}"#),
            (Decoding::TopP { p: 0.96 }, r#""decoding":{"strategy":"top_p","p":0.96}"#),
            (
                Decoding::Temperature { temperature: 1.0 },
                r#""decoding":{"strategy":"temperature","temperature":1.0}"#,
            ),
        ] {
            t.push(200, r#"{"text":"x y"}"#);
            let params = GenerateParams { decoding: d, ..GenerateParams::default() };
            c.generate("m", &Passage::new("s", "source text"), &params).unwrap();
            let body = t.requests.lock().unwrap().last().unwrap().1.clone();
            assert!(body.contains(frag), "{body}");
            assert!(body.contains(r#""n_prompt_tokens":30"#));
        }
    }

    #[test]
    fn fill_arity_rejection_and_resample() {
        let t = Arc::new(Scripted::default());
        t.push(200, r#"{"samples":[["x y","z"],["only one"],["a",""]]}"#);
        t.push(200, r#"{"samples":[["p","q"],["r","s"]]}"#);
        let c = client(&t);
        let out = c.fill_masks("t5", "a «MASK_0» b «MASK_1»", 2, 3, 9, None).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], vec![vec!["x".to_string(), "y".into()], vec!["z".into()]]);
        assert_eq!(out[1], vec![vec!["p".to_string()], vec!["q".into()]]);
        let reqs = t.requests.lock().unwrap();
        let second: FillRequest = serde_json::from_str(&reqs[1].1).unwrap();
        assert_eq!(second.n_samples, 2);
        assert_ne!(second.seed, 9);
    }

    #[test]
    fn persistent_arity_failure() {
        let t = Arc::new(Scripted::default());
        for _ in 0..3 {
            t.push(200, r#"{"samples":[["one"]]}"#);
        }
        let c = client(&t).with_retry_budget(2);
        let err = c.fill_masks("t5", "«MASK_0» «MASK_1»", 2, 1, 1, None).unwrap_err();
        assert!(matches!(err, BackendError::FillArity { expected: 2, accepted: 0, attempts: 3 }));
    }

    #[test]
    fn in_flight_never_exceeds_limit() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Transport for Slow {
            fn post(&self, _: &str, body: &str) -> Result<RawResponse, TransportError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.now.fetch_sub(1, Ordering::SeqCst);
                assert!(serde_json::from_str::<ScoreRequest>(body).is_ok());
                Ok(RawResponse::ok(r#"{"tokens":[{"logprob":-1,"rank":1,"entropy":0}],"total_logprob":-1}"#.into()))
            }
        }
        let slow = Arc::new(Slow { now: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let c = BackendClient::new(slow.clone(), ResponseCache::in_memory()).with_max_in_flight(3);
        std::thread::scope(|s| {
            for i in 0..24 {
                let c = &c;
                s.spawn(move || c.score("m", &Passage::new("p", &format!("text {i}"))).unwrap());
            }
        });
        assert_eq!(c.network_calls(), 24);
        let peak = slow.peak.load(Ordering::SeqCst);
        assert!((2..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn cache_key_separates_operations_and_params() {
        let a = ScoreRequest { model: "m".into(), text: "t".into() };
        assert_eq!(cache_key("score", "m", "t", &a), cache_key("score", "m", "t", &a));
        assert_ne!(cache_key("score", "m", "t", &a), cache_key("score", "m2", "t", &a));
        let f = |seed| FillRequest {
            model: "m".into(),
            masked_text: "t".into(),
            span_count: 1,
            n_samples: 1,
            seed,
            span_lengths: None,
        };
        assert_ne!(cache_key("fill", "m", "t", &f(1)), cache_key("fill", "m", "t", &f(2)));
        assert_eq!(cache_key("fill", "m", "t", &f(1)).len(), 64);
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let b = Backoff { base: Duration::from_millis(100), max: Duration::from_secs(1) };
        assert_eq!(b.delay(0), Duration::from_millis(100));
        assert_eq!(b.delay(2), Duration::from_millis(400));
        assert_eq!(b.delay(10), Duration::from_secs(1));
    }
}
