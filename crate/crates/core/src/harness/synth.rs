use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::corpus::{build_paired_corpus, Dataset, DatasetEntry};
use super::run::run_detection;
use super::{ExperimentConfig, ExperimentResult, HarnessError, Label};
use crate::backend::{BackendClient, SyntheticBackend, FILLER_MODEL, HUMAN_MODEL, SOURCE_MODEL};
use crate::detector::Method;
use crate::seed::{derive_seed, stream};
use crate::synthetic::{ChainFamily, Decoding};

/// Pair counts below this produce AUROC estimates too noisy to read.
pub const SMALL_SAMPLE_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthBenchOptions {
    pub seed: u64,
    pub n_pairs: usize,
    pub k: usize,
    pub length: usize,
    pub family: ChainFamily,
}

impl Default for SynthBenchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n_pairs: 200,
            k: 50,
            length: 80,
            family: ChainFamily::default(),
        }
    }
}

impl SynthBenchOptions {
    /// Source, human and filler chains for this seed.
    pub fn world(&self) -> Result<SyntheticBackend, HarnessError> {
        SyntheticBackend::twin_world(self.seed, &self.family, 0)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// `n_pairs` passages of `length` words sampled from the human chain.
    pub fn human_dataset(&self, world: &SyntheticBackend) -> Result<Dataset, HarnessError> {
        let human = world.model(HUMAN_MODEL).expect("twin world has a human chain");
        let entries = (0..self.n_pairs)
            .map(|i| {
                let id = format!("synth-{i:05}");
                let mut rng = stream(derive_seed(self.seed, &format!("human/{id}")));
                let text = human
                    .sample_sequence(&id, self.length, &mut rng)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
                    .text;
                Ok(DatasetEntry { id, text })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Dataset::new("synthetic-human", entries)
    }

    /// Machine text is sampled unprompted from the source chain, so each pair
    /// compares a full source sample with a full human sample.
    pub fn config(&self) -> ExperimentConfig {
        ExperimentConfig {
            source_model: SOURCE_MODEL.into(),
            scorer_model: None,
            filler_model: FILLER_MODEL.into(),
            n_examples: self.n_pairs,
            k: self.k,
            decoding: Decoding::default(),
            methods: Method::ALL.to_vec(),
            seed: self.seed,
            min_words: self.length,
            equalize_lengths: true,
            n_prompt_tokens: 0,
            max_tokens: self.length,
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBenchReport {
    pub options: SynthBenchOptions,
    pub auroc: BTreeMap<Method, f64>,
    pub mean_normalized: BTreeMap<Label, f64>,
    pub mean_raw_discrepancy: BTreeMap<Label, f64>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub result: Option<ExperimentResult>,
}

impl SynthBenchReport {
    /// Machine-class mean normalized discrepancy minus the human-class mean.
    pub fn normalized_gap(&self) -> f64 {
        self.mean_normalized[&Label::Machine] - self.mean_normalized[&Label::Human]
    }
}

/// Run every method on twin Markov chains through `client`, which must
/// wrap the world from `options.world()` (directly or behind a cache).
pub fn synth_bench(options: &SynthBenchOptions, client: &BackendClient) -> Result<SynthBenchReport, HarnessError> {
    if options.length < options.family.order.max(1) {
        return Err(HarnessError::Config("length must be at least the chain order".into()));
    }
    let world = options.world()?;
    let dataset = options.human_dataset(&world)?;
    let config = options.config();
    config.validate()?;
    let pairs = build_paired_corpus(&dataset, &config, client)?;
    let result = run_detection(&config, &pairs, client)?;

    let mut warnings = Vec::new();
    if options.n_pairs < SMALL_SAMPLE_PAIRS {
        warnings.push(format!(
            "only {} pairs: AUROC is a small-sample estimate",
            options.n_pairs
        ));
    }
    let per_label = |f: &dyn Fn(Label) -> Option<f64>| -> BTreeMap<Label, f64> {
        [Label::Human, Label::Machine]
            .into_iter()
            .map(|l| (l, f(l).unwrap_or(f64::NAN)))
            .collect()
    };
    Ok(SynthBenchReport {
        options: options.clone(),
        auroc: result.aggregate.iter().map(|(m, s)| (*m, s.auroc)).collect(),
        mean_normalized: per_label(&|l| result.mean_normalized(l)),
        mean_raw_discrepancy: per_label(&|l| result.mean_raw_discrepancy(l)),
        warnings,
        result: Some(result),
    })
}
