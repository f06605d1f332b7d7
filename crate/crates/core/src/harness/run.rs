use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{unix_now, ExperimentConfig, ExperimentResult, HarnessError, Label, MethodSummary, PassagePair, PassageScores};
use crate::backend::BackendClient;
use crate::detector::{baseline, perturbation_discrepancy, Method};
use crate::metrics::{auroc, pr_curve, LabeledScores};
use crate::passage::Passage;
use crate::perturbation::{select_for_perturbation, substitute_fills};
use crate::seed::derive_seed;

/// Log probabilities of the first `k` perturbations of `passage`. Perturbation
/// `j` depends only on `(seed, key, j)`, so any prefix of a larger pool equals
/// a fresh run with a smaller `k`.
pub(crate) fn perturbed_logps(
    config: &ExperimentConfig,
    passage: &Passage,
    key: &str,
    k: usize,
    client: &BackendClient,
) -> Result<Vec<f64>, HarnessError> {
    let spec = config.effective_mask_spec();
    (0..k)
        .into_par_iter()
        .map(|j| {
            let masked = select_for_perturbation(passage, &spec, key, j)?;
            let seed = derive_seed(config.seed, &format!("fill/{key}/{j}"));
            let mut samples = client.fill_masks(
                &config.filler_model,
                &masked.masked_text,
                masked.span_count(),
                1,
                seed,
                Some(&masked.span_lengths()),
            )?;
            let perturbed = substitute_fills(&masked, &samples.remove(0))?;
            Ok(client.score(config.scorer(), &perturbed)?.total_logprob)
        })
        .collect()
}

fn passage_key(id: &str, label: Label) -> String {
    format!("{id}/{label}")
}

/// Score one passage under every configured method, keeping the raw pool of
/// `k` perturbed log probabilities.
pub(crate) fn score_with_pool(
    config: &ExperimentConfig,
    passage: &Passage,
    label: Label,
    k: usize,
    client: &BackendClient,
) -> Result<(PassageScores, Vec<f64>), HarnessError> {
    passage.require_nonempty().map_err(|e| HarnessError::Dataset(format!("{}: {e}", passage.id)))?;
    let scored = client.score(config.scorer(), passage)?;
    let mut scores = BTreeMap::new();
    for &m in config.methods.iter().filter(|m| m.is_baseline()) {
        scores.insert(m, baseline(m, &scored)?);
    }
    let (discrepancy, pool) = if config.uses_detectgpt() {
        let pool = perturbed_logps(config, passage, &passage_key(&passage.id, label), k, client)?;
        let est = perturbation_discrepancy(scored.total_logprob, &pool[..config.k.min(k)])?;
        scores.insert(Method::Detectgpt, est.normalized);
        (Some(est), pool)
    } else {
        (None, Vec::new())
    };
    Ok((
        PassageScores {
            id: passage.id.clone(),
            label,
            n_words: passage.len_words(),
            scores,
            discrepancy,
        },
        pool,
    ))
}

pub fn score_passage(
    config: &ExperimentConfig,
    passage: &Passage,
    label: Label,
    client: &BackendClient,
) -> Result<PassageScores, HarnessError> {
    score_with_pool(config, passage, label, config.k, client).map(|(s, _)| s)
}

pub(crate) fn score_pairs(
    config: &ExperimentConfig,
    pairs: &[PassagePair],
    k: usize,
    client: &BackendClient,
) -> Result<Vec<(PassageScores, Vec<f64>)>, HarnessError> {
    let mut jobs: Vec<(&Passage, Label)> = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        jobs.push((&p.human, Label::Human));
        jobs.push((&p.machine, Label::Machine));
    }
    let mut rows = jobs
        .par_iter()
        .map(|&(passage, label)| score_with_pool(config, passage, label, k, client))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| (&a.0.id, a.0.label).cmp(&(&b.0.id, b.0.label)));
    Ok(rows)
}

/// Score both members of every pair and aggregate per-method AUROC with
/// machine text as the positive class.
pub fn run_detection(
    config: &ExperimentConfig,
    pairs: &[PassagePair],
    client: &BackendClient,
) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(HarnessError::TooFewPairs { needed: 1, available: 0 });
    }
    let started_at = unix_now();
    let rows: Vec<PassageScores> = score_pairs(config, pairs, config.k, client)?
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    let aggregate = aggregate(&rows, &config.methods)?;
    Ok(ExperimentResult {
        config: config.clone(),
        rows,
        aggregate,
        started_at,
        finished_at: unix_now(),
    })
}

pub(crate) fn labeled(rows: &[PassageScores], method: Method) -> LabeledScores {
    let pick = |label| {
        rows.iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.scores.get(&method).copied())
            .collect()
    };
    LabeledScores::new(pick(Label::Machine), pick(Label::Human))
}

pub fn aggregate(
    rows: &[PassageScores],
    methods: &[Method],
) -> Result<BTreeMap<Method, MethodSummary>, HarnessError> {
    methods
        .iter()
        .map(|&m| {
            let s = labeled(rows, m);
            if s.positives.len() != s.negatives.len() {
                return Err(HarnessError::Config(format!(
                    "unequal class sizes for {m}: {} machine vs {} human",
                    s.positives.len(),
                    s.negatives.len()
                )));
            }
            Ok((
                m,
                MethodSummary {
                    auroc: auroc(&s)?,
                    average_precision: pr_curve(&s)?.average_precision,
                    n_machine: s.positives.len(),
                    n_human: s.negatives.len(),
                },
            ))
        })
        .collect()
}
