//! Experiment orchestration: paired corpora, multi-method detection runs,
//! sweeps, cross-model matrices, length bins and result export.

mod corpus;
mod export;
mod run;
mod sweeps;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::detector::{DetectError, DiscrepancyEstimate, Method};
use crate::metrics::MetricError;
use crate::perturbation::{MaskSpec, PerturbError};
use crate::synthetic::Decoding;

pub use corpus::{build_paired_corpus, Dataset, DatasetEntry, PassagePair};
pub use export::{export_results, read_aggregate, read_rows, ExportPaths, SCHEMA_VERSION};
pub use run::{aggregate, run_detection, score_passage};
pub use sweeps::{
    cross_model_matrix, length_binned_auroc, paraphrase_sweep, perturbation_count_sweep,
    revise_passage, CrossMatrix, KSweepRow, LengthBin, ParaphraseRow, PARAPHRASE_SPAN_LENGTH,
};
pub use synth::{synth_bench, SynthBenchOptions, SynthBenchReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("insufficient data: need {needed} usable entries, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("need at least {needed} pairs, have {available}")]
    TooFewPairs { needed: usize, available: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl HarnessError {
    /// True when the failure came from the model backend or its protocol.
    pub fn is_backend(&self) -> bool {
        matches!(self, HarnessError::Backend(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Machine,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::Machine => "machine",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source_model: String,
    /// Defaults to the source model (white-box setting).
    pub scorer_model: Option<String>,
    pub filler_model: String,
    pub n_examples: usize,
    pub k: usize,
    pub mask_spec: MaskSpec,
    pub decoding: Decoding,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub min_words: usize,
    pub equalize_lengths: bool,
    pub n_prompt_tokens: usize,
    pub max_tokens: usize,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source_model: "gpt2".into(),
            scorer_model: None,
            filler_model: "t5-large".into(),
            n_examples: 200,
            k: 100,
            mask_spec: MaskSpec::default(),
            decoding: Decoding::default(),
            methods: Method::ALL.to_vec(),
            seed: 0,
            min_words: 55,
            equalize_lengths: true,
            n_prompt_tokens: 30,
            max_tokens: 200,
            histogram_bins: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn scorer(&self) -> &str {
        self.scorer_model.as_deref().unwrap_or(&self.source_model)
    }

    pub fn uses_detectgpt(&self) -> bool {
        self.methods.contains(&Method::Detectgpt)
    }

    /// The mask spec actually used: `k` perturbations seeded from the run seed.
    pub fn effective_mask_spec(&self) -> MaskSpec {
        MaskSpec {
            n_perturbations: self.k,
            seed: self.seed,
            ..self.mask_spec
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.n_examples < 2 {
            return bad("n_examples must be >= 2");
        }
        if self.k < 2 {
            return bad("k must be >= 2");
        }
        if self.source_model.is_empty() || self.filler_model.is_empty() {
            return bad("source_model and filler_model are required");
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be >= 1");
        }
        self.effective_mask_spec()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.decoding
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Scores for one passage under every configured method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageScores {
    pub id: String,
    pub label: Label,
    pub n_words: usize,
    pub scores: BTreeMap<Method, f64>,
    pub discrepancy: Option<DiscrepancyEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub auroc: f64,
    pub average_precision: f64,
    pub n_machine: usize,
    pub n_human: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Ordered by id, then label.
    pub rows: Vec<PassageScores>,
    pub aggregate: BTreeMap<Method, MethodSummary>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

impl ExperimentResult {
    pub fn auroc(&self, method: Method) -> Option<f64> {
        self.aggregate.get(&method).map(|s| s.auroc)
    }

    /// Mean of the normalized discrepancy per class.
    pub fn mean_normalized(&self, label: Label) -> Option<f64> {
        mean(self.rows.iter().filter(|r| r.label == label).filter_map(|r| r.discrepancy.map(|d| d.normalized)))
    }

    pub fn mean_raw_discrepancy(&self, label: Label) -> Option<f64> {
        mean(self.rows.iter().filter(|r| r.label == label).filter_map(|r| r.discrepancy.map(|d| d.d_hat)))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

pub(crate) fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
