use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use curvescan::backend::{
    BackendClient, BackendEndpoint, BackendError, ResponseCache, SyntheticBackend, FILLER_MODEL,
    SOURCE_MODEL,
};
use curvescan::harness::{Dataset, ExperimentConfig, HarnessError};
use curvescan::synthetic::{ChainFamily, Decoding};
use curvescan::Method;

use crate::{BackendArgs, ExperimentArgs};

pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// Sibling chains served next to the twin pair, for cross-model runs.
pub const SYNTHETIC_SIBLINGS: usize = 2;

#[derive(Debug)]
pub enum CliError {
    Backend(String),
    Input(String),
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Backend(m) => write!(f, "backend: {m}"),
            CliError::Input(m) => write!(f, "input: {m}"),
            CliError::Config(m) => write!(f, "config: {m}"),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Backend(b) => b.into(),
            HarnessError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            // the service understood the request but cannot score this text
            BackendError::Rejected { status: 422, .. } => CliError::Input(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Where model calls go: the in-process twin chains or an HTTP service.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendTarget {
    Synthetic(u64),
    Http(String),
}

impl BackendTarget {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.strip_prefix("synthetic") {
            Some("") => Ok(BackendTarget::Synthetic(0)),
            Some(rest) => rest
                .strip_prefix(':')
                .and_then(|seed| seed.parse().ok())
                .map(BackendTarget::Synthetic)
                .ok_or_else(|| CliError::Config(format!("bad synthetic backend '{s}'"))),
            None if s.starts_with("http://") || s.starts_with("https://") => {
                Ok(BackendTarget::Http(s.trim_end_matches('/').to_owned()))
            }
            None => Err(CliError::Config(format!(
                "backend must be 'synthetic[:seed]' or an http(s) URL, got '{s}'"
            ))),
        }
    }

    /// Defaults with model ids that this backend actually serves.
    pub fn base_config(&self) -> ExperimentConfig {
        match self {
            BackendTarget::Synthetic(_) => ExperimentConfig {
                source_model: SOURCE_MODEL.into(),
                filler_model: FILLER_MODEL.into(),
                ..ExperimentConfig::default()
            },
            BackendTarget::Http(_) => ExperimentConfig::default(),
        }
    }
}

pub fn open_cache(dir: Option<&Path>) -> Result<ResponseCache, CliError> {
    match dir {
        Some(d) => ResponseCache::open(d)
            .map_err(|e| CliError::Config(format!("cache dir {}: {e}", d.display()))),
        None => Ok(ResponseCache::in_memory()),
    }
}

pub fn connect(args: &BackendArgs) -> Result<(BackendTarget, BackendClient), CliError> {
    let target = BackendTarget::parse(&args.backend_url)?;
    let cache = open_cache(args.cache_dir.as_deref())?;
    let client = match &target {
        BackendTarget::Synthetic(seed) => {
            let world = SyntheticBackend::twin_world(*seed, &ChainFamily::default(), SYNTHETIC_SIBLINGS)
                .map_err(|e| CliError::Config(e.to_string()))?;
            BackendClient::new(Arc::new(world), cache).with_max_in_flight(args.max_in_flight)
        }
        BackendTarget::Http(url) => BackendClient::http(
            &BackendEndpoint {
                base_url: url.clone(),
                timeout: Duration::from_secs(args.timeout_secs),
                max_in_flight: args.max_in_flight,
                retry_budget: args.retry_budget,
                ..BackendEndpoint::default()
            },
            cache,
        )?,
    };
    Ok((target, client))
}

pub fn load_config_file(path: Option<&Path>, base: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    // file fields override the backend-aware defaults field by field
    let mut merged = serde_json::to_value(&base).expect("config serializes");
    let overrides: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(fields) = overrides else {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    };
    for (k, v) in fields {
        merged[k] = v;
    }
    serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl ExperimentArgs {
    pub fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        let mut c = load_config_file(self.config.as_deref(), base)?;
        if let Some(v) = &self.source_model {
            c.source_model = v.clone();
        }
        if let Some(v) = &self.scorer_model {
            c.scorer_model = Some(v.clone());
        }
        if let Some(v) = &self.filler_model {
            c.filler_model = v.clone();
        }
        if let Some(v) = self.n_examples {
            c.n_examples = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.mask_rate {
            c.mask_spec.mask_rate = v;
        }
        if let Some(v) = self.span_length {
            c.mask_spec.span_length = v;
        }
        if let Some(v) = &self.methods {
            c.methods = Method::parse_list(v).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.min_words {
            c.min_words = v;
        }
        if let Some(v) = self.n_prompt_tokens {
            c.n_prompt_tokens = v;
        }
        if let Some(v) = self.max_tokens {
            c.max_tokens = v;
        }
        if let Some(k) = self.top_k {
            c.decoding = Decoding::TopK { k };
        }
        if let Some(p) = self.top_p {
            c.decoding = Decoding::TopP { p };
        }
        if let Some(temperature) = self.temperature {
            c.decoding = Decoding::Temperature { temperature };
        }
        if self.no_equalize {
            c.equalize_lengths = false;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Dataset::from_jsonl(name, std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_targets() {
        assert_eq!(BackendTarget::parse("synthetic").unwrap(), BackendTarget::Synthetic(0));
        assert_eq!(BackendTarget::parse("synthetic:9").unwrap(), BackendTarget::Synthetic(9));
        assert_eq!(
            BackendTarget::parse("http://h:1/").unwrap(),
            BackendTarget::Http("http://h:1".into())
        );
        assert!(BackendTarget::parse("synthetic:x").is_err());
        assert!(BackendTarget::parse("ftp://h").is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"k": 20, "seed": 5, "methods": ["logp"]}"#).unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            k: Some(30),
            ..ExperimentArgs::default()
        };
        let c = args.resolve(BackendTarget::Synthetic(0).base_config()).unwrap();
        assert_eq!(c.k, 30);
        assert_eq!(c.seed, 5);
        assert_eq!(c.methods, vec![Method::Logp]);
        assert_eq!(c.source_model, SOURCE_MODEL);
        assert_eq!(c.n_examples, 200);
    }

    #[test]
    fn invalid_config_is_a_config_error() {
        let args = ExperimentArgs {
            methods: Some("".into()),
            ..ExperimentArgs::default()
        };
        assert_eq!(args.resolve(ExperimentConfig::default()).unwrap_err().exit_code(), EXIT_CONFIG);
        let args = ExperimentArgs {
            k: Some(1),
            ..ExperimentArgs::default()
        };
        assert_eq!(args.resolve(ExperimentConfig::default()).unwrap_err().exit_code(), EXIT_CONFIG);
    }
}
