use std::collections::HashSet;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::backend::{BackendClient, GenerateParams};
use crate::passage::Passage;
use crate::seed::derive_seed;

/// One JSONL line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, entries: Vec<DatasetEntry>) -> Result<Self, HarnessError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(HarnessError::Dataset(format!("duplicate id '{}'", e.id)));
            }
            if e.text.trim().is_empty() {
                return Err(HarnessError::Dataset(format!("entry '{}' has empty text", e.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            entries,
        })
    }

    /// Parse `{"id": ..., "text": ...}` lines; blank lines are skipped.
    pub fn from_jsonl(name: impl Into<String>, reader: impl BufRead) -> Result<Self, HarnessError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: DatasetEntry = serde_json::from_str(&line)
                .map_err(|e| HarnessError::Dataset(format!("line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Self::new(name, entries)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassagePair {
    pub id: String,
    pub human: Passage,
    pub machine: Passage,
}

impl PassagePair {
    pub fn mean_words(&self) -> f64 {
        (self.human.len_words() + self.machine.len_words()) as f64 / 2.0
    }
}

/// Pair each usable human passage with a continuation the source model
/// writes from its opening tokens. Pairs come back ordered by id.
pub fn build_paired_corpus(
    dataset: &Dataset,
    config: &ExperimentConfig,
    client: &BackendClient,
) -> Result<Vec<PassagePair>, HarnessError> {
    let usable: Vec<&DatasetEntry> = dataset
        .entries
        .iter()
        .filter(|e| e.text.split_whitespace().count() >= config.min_words)
        .collect();
    if usable.len() < config.n_examples {
        return Err(HarnessError::InsufficientData {
            needed: config.n_examples,
            available: usable.len(),
        });
    }
    let mut pairs = usable[..config.n_examples]
        .par_iter()
        .map(|e| {
            let human = Passage::new(e.id.clone(), &e.text);
            let params = GenerateParams {
                n_prompt_tokens: config.n_prompt_tokens,
                decoding: config.decoding,
                max_tokens: config.max_tokens,
                seed: derive_seed(config.seed, &format!("generate/{}", e.id)),
            };
            let machine = client.generate(&config.source_model, &human, &params)?;
            Ok(equalize(e.id.clone(), human, machine, config.equalize_lengths))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(pairs)
}

pub(crate) fn equalize(id: String, human: Passage, machine: Passage, on: bool) -> PassagePair {
    let (human, machine) = if on {
        let n = human.len_words().min(machine.len_words());
        (human.truncated(n), machine.truncated(n))
    } else {
        (human, machine)
    };
    PassagePair { id, human, machine }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equalize_truncates_to_shorter() {
        let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let p = equalize("x".into(), Passage::new("x", &words(120)), Passage::new("x", &words(100)), true);
        assert_eq!((p.human.len_words(), p.machine.len_words()), (100, 100));
        let p = equalize("x".into(), Passage::new("x", &words(120)), Passage::new("x", &words(100)), false);
        assert_eq!((p.human.len_words(), p.machine.len_words()), (120, 100));
    }

    #[test]
    fn dataset_validation() {
        let e = |id: &str, text: &str| DatasetEntry { id: id.into(), text: text.into() };
        assert!(Dataset::new("d", vec![e("a", "x"), e("a", "y")]).is_err());
        assert!(Dataset::new("d", vec![e("a", " ")]).is_err());
        let d = Dataset::from_jsonl("d", "{\"id\":\"1\",\"text\":\"hi there\"}\n\n{\"id\":\"2\",\"text\":\"yo\"}\n".as_bytes()).unwrap();
        assert_eq!(d.entries.len(), 2);
        assert_eq!(Dataset::from_jsonl("d", d.to_jsonl().as_bytes()).unwrap(), d);
        assert!(Dataset::from_jsonl("d", "{\"id\":1}".as_bytes()).is_err());
    }
}
