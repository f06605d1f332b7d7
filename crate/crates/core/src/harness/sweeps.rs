use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{build_paired_corpus, Dataset, PassagePair};
use super::run::{aggregate, labeled, run_detection, score_pairs};
use super::{ExperimentConfig, ExperimentResult, HarnessError, Label, PassageScores};
use crate::backend::BackendClient;
use crate::detector::{perturbation_discrepancy, Method};
use crate::metrics::auroc;
use crate::passage::Passage;
use crate::perturbation::{select_for_perturbation, sentinel, substitute_fills, MaskSpec, MaskedPassage};
use crate::seed::derive_seed;

/// Word length of the spans replaced when simulating human revision.
pub const PARAPHRASE_SPAN_LENGTH: usize = 5;
/// Sentinels sent to the filler per request during revision.
const MAX_MASKS_PER_ROUND: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub auroc: f64,
}

/// DetectGPT AUROC for each `k`, computed on prefixes of a single pool of
/// `max(k_values)` perturbations per passage.
pub fn perturbation_count_sweep(
    config: &ExperimentConfig,
    pairs: &[PassagePair],
    k_values: &[usize],
    client: &BackendClient,
) -> Result<Vec<KSweepRow>, HarnessError> {
    if k_values.is_empty() || k_values.windows(2).any(|w| w[0] >= w[1]) || k_values[0] < 2 {
        return Err(HarnessError::Config(
            "k_values must be strictly increasing with minimum >= 2".into(),
        ));
    }
    let k_max = *k_values.last().unwrap();
    let mut methods = config.methods.clone();
    if !methods.contains(&Method::Detectgpt) {
        methods.push(Method::Detectgpt);
    }
    let config = ExperimentConfig {
        methods,
        k: k_max,
        ..config.clone()
    };
    config.validate()?;
    let pooled = score_pairs(&config, pairs, k_max, client)?;
    k_values
        .iter()
        .map(|&k| {
            let rows = pooled
                .iter()
                .map(|(row, pool)| {
                    let logp_x = row.discrepancy.expect("detectgpt configured").logp_x;
                    let est = perturbation_discrepancy(logp_x, &pool[..k])?;
                    Ok(PassageScores {
                        scores: BTreeMap::from([(Method::Detectgpt, est.normalized)]),
                        discrepancy: Some(est),
                        ..row.clone()
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            Ok(KSweepRow {
                k,
                auroc: auroc(&labeled(&rows, Method::Detectgpt))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRow {
    /// Target fraction of machine words replaced.
    pub r: f64,
    /// Realized mean fraction of original machine words that were masked.
    pub masked_fraction: f64,
    pub auroc: BTreeMap<Method, f64>,
}

fn render_round(masked: &MaskedPassage, fills: &[Option<Vec<String>>], active: &[usize]) -> String {
    let words = masked.original.words();
    let mut out: Vec<String> = Vec::new();
    let mut cursor = 0;
    for (i, span) in masked.spans.iter().enumerate() {
        out.extend_from_slice(&words[cursor..span.start]);
        if let Some(pos) = active.iter().position(|&a| a == i) {
            out.push(sentinel(pos));
        } else if let Some(f) = &fills[i] {
            out.extend(f.iter().cloned());
        } else {
            out.extend_from_slice(&words[span.start..span.end()]);
        }
        cursor = span.end();
    }
    out.extend_from_slice(&words[cursor..]);
    out.join(" ")
}

/// Replace `PARAPHRASE_SPAN_LENGTH`-word spans of `passage` with filler samples
/// until at least `r` of its words are masked. Spans are filled in rounds of
/// at most ten sentinels, each round seeing the earlier rounds' fills.
/// Returns the revised passage and the masked fraction.
pub fn revise_passage(
    config: &ExperimentConfig,
    passage: &Passage,
    r: f64,
    client: &BackendClient,
) -> Result<(Passage, f64), HarnessError> {
    if r <= 0.0 {
        return Ok((passage.clone(), 0.0));
    }
    let spec = MaskSpec {
        mask_rate: r,
        span_length: PARAPHRASE_SPAN_LENGTH,
        n_perturbations: 1,
        buffer: config.mask_spec.buffer,
        seed: derive_seed(config.seed, &format!("paraphrase/{r}")),
    };
    let masked = select_for_perturbation(passage, &spec, &passage.id, 0)?;
    let mut fills: Vec<Option<Vec<String>>> = vec![None; masked.span_count()];
    let order: Vec<usize> = (0..masked.span_count()).collect();
    for (round, active) in order.chunks(MAX_MASKS_PER_ROUND).enumerate() {
        let text = render_round(&masked, &fills, active);
        let lengths: Vec<usize> = active.iter().map(|&i| masked.spans[i].len).collect();
        let seed = derive_seed(config.seed, &format!("paraphrase-fill/{r}/{}/{round}", passage.id));
        let mut sample = client.fill_masks(&config.filler_model, &text, active.len(), 1, seed, Some(&lengths))?;
        for (&i, f) in active.iter().zip(sample.remove(0)) {
            fills[i] = Some(f);
        }
    }
    let fills: Vec<Vec<String>> = fills.into_iter().map(|f| f.expect("every round filled")).collect();
    let revised = substitute_fills(&masked, &fills)?;
    Ok((revised, masked.masked_words() as f64 / passage.len_words() as f64))
}

/// Revise machine passages at each replacement fraction `r`, then rerun
/// detection. Human passages are left untouched.
pub fn paraphrase_sweep(
    config: &ExperimentConfig,
    pairs: &[PassagePair],
    r_values: &[f64],
    client: &BackendClient,
) -> Result<Vec<ParaphraseRow>, HarnessError> {
    if let Some(r) = r_values.iter().find(|r| !(0.0..=0.5).contains(*r)) {
        return Err(HarnessError::Config(format!("r = {r} outside [0, 0.5]")));
    }
    r_values
        .iter()
        .map(|&r| {
            let revised = pairs
                .par_iter()
                .map(|p| {
                    let (machine, frac) = revise_passage(config, &p.machine, r, client)?;
                    Ok((PassagePair { machine, ..p.clone() }, frac))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let masked_fraction =
                revised.iter().map(|(_, f)| f).sum::<f64>() / revised.len().max(1) as f64;
            let pairs: Vec<PassagePair> = revised.into_iter().map(|(p, _)| p).collect();
            let result = run_detection(config, &pairs, client)?;
            Ok(ParaphraseRow {
                r,
                masked_fraction,
                auroc: result.aggregate.iter().map(|(m, s)| (*m, s.auroc)).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub method: Method,
    pub sources: Vec<String>,
    pub scorers: Vec<String>,
    /// `cells[i][j]`: AUROC for text from `sources[i]` scored by `scorers[j]`.
    pub cells: Vec<Vec<f64>>,
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
}

/// Generate with each source, score with each scorer (same filler throughout).
pub fn cross_model_matrix(
    sources: &[String],
    scorers: &[String],
    config: &ExperimentConfig,
    dataset: &Dataset,
    client: &BackendClient,
) -> Result<CrossMatrix, HarnessError> {
    if sources.is_empty() || scorers.is_empty() {
        return Err(HarnessError::Config("need at least one source and one scorer".into()));
    }
    let method = if config.uses_detectgpt() {
        Method::Detectgpt
    } else {
        config.methods[0]
    };
    let mut cells = Vec::with_capacity(sources.len());
    for source in sources {
        let cfg = ExperimentConfig {
            source_model: source.clone(),
            ..config.clone()
        };
        let pairs = build_paired_corpus(dataset, &cfg, client)?;
        let row = scorers
            .iter()
            .map(|scorer| {
                let cfg = ExperimentConfig {
                    scorer_model: Some(scorer.clone()),
                    ..cfg.clone()
                };
                let result = run_detection(&cfg, &pairs, client)?;
                Ok(result.auroc(method).expect("method configured"))
            })
            .collect::<Result<Vec<f64>, HarnessError>>()?;
        cells.push(row);
    }
    let row_means = cells.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let col_means = (0..scorers.len())
        .map(|j| cells.iter().map(|r| r[j]).sum::<f64>() / cells.len() as f64)
        .collect();
    Ok(CrossMatrix {
        method,
        sources: sources.to_vec(),
        scorers: scorers.to_vec(),
        cells,
        row_means,
        col_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub n_pairs: usize,
    pub min_mean_words: f64,
    pub max_mean_words: f64,
    pub auroc: BTreeMap<Method, f64>,
}

/// Sort pairs by mean word count and split them into three equal-size bins
/// (remainder to the lower bins), with per-method AUROC inside each bin.
pub fn length_binned_auroc(result: &ExperimentResult) -> Result<Vec<LengthBin>, HarnessError> {
    let mut by_id: BTreeMap<&str, [Option<&PassageScores>; 2]> = BTreeMap::new();
    for row in &result.rows {
        let slot = match row.label {
            Label::Human => 0,
            Label::Machine => 1,
        };
        by_id.entry(row.id.as_str()).or_default()[slot] = Some(row);
    }
    let mut pairs: Vec<(f64, &PassageScores, &PassageScores)> = by_id
        .into_values()
        .filter_map(|[h, m]| Some((h?, m?)))
        .map(|(h, m)| ((h.n_words + m.n_words) as f64 / 2.0, h, m))
        .collect();
    if pairs.len() < 6 {
        return Err(HarnessError::TooFewPairs {
            needed: 6,
            available: pairs.len(),
        });
    }
    // stable: ties keep id order
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let sizes = [n / 3 + usize::from(n % 3 >= 1), n / 3 + usize::from(n % 3 == 2), n / 3];
    let mut start = 0;
    sizes
        .iter()
        .map(|&size| {
            let bin = &pairs[start..start + size];
            start += size;
            let rows: Vec<PassageScores> = bin
                .iter()
                .flat_map(|(_, h, m)| [(*h).clone(), (*m).clone()])
                .collect();
            Ok(LengthBin {
                n_pairs: size,
                min_mean_words: bin.first().map_or(0.0, |b| b.0),
                max_mean_words: bin.last().map_or(0.0, |b| b.0),
                auroc: aggregate(&rows, &result.config.methods)?
                    .into_iter()
                    .map(|(m, s)| (m, s.auroc))
                    .collect(),
            })
        })
        .collect()
}
