//! Exact-probability Markov-chain language models.
//!
//! These act as the offline source model, scorer, and mask filler. Every
//! probability is a table lookup, so log probabilities, ranks and entropies
//! are exact and sequences can be enumerated.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::passage::{Passage, ScoredPassage, TokenScoreRecord};
use crate::perturbation::MaskedPassage;
use crate::seed::{derive_seed, stream, Stream};

pub const MAX_VOCAB: usize = 64;
const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("out-of-vocabulary symbol '{0}'")]
    OutOfVocabulary(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("sequence length {length} is shorter than the model order {order}")]
    TooShort { length: usize, order: usize },
    #[error("invalid decoding parameters: {0}")]
    InvalidDecoding(String),
}

/// How to reshape a conditional before sampling from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Decoding {
    Temperature { temperature: f64 },
    TopK { k: usize },
    TopP { p: f64 },
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding::Temperature { temperature: 1.0 }
    }
}

impl Decoding {
    pub const DEFAULT_TOP_K: usize = 40;
    pub const DEFAULT_TOP_P: f64 = 0.96;

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let ok = match *self {
            Decoding::Temperature { temperature } => temperature > 0.0 && temperature.is_finite(),
            Decoding::TopK { k } => k >= 1,
            Decoding::TopP { p } => p > 0.0 && p <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SyntheticError::InvalidDecoding(format!("{self:?}")))
        }
    }

    /// Apply the strategy to a probability row, returning a renormalized row.
    pub fn apply(&self, probs: &[f64]) -> Vec<f64> {
        let mut out = match *self {
            Decoding::Temperature { temperature } => {
                probs.iter().map(|p| p.powf(1.0 / temperature)).collect()
            }
            Decoding::TopK { k } => {
                let keep = ranked(probs).into_iter().take(k).collect::<Vec<_>>();
                mask_to(probs, &keep)
            }
            Decoding::TopP { p } => {
                let mut keep = Vec::new();
                let mut mass = 0.0;
                for i in ranked(probs) {
                    keep.push(i);
                    mass += probs[i];
                    if mass >= p {
                        break;
                    }
                }
                mask_to(probs, &keep)
            }
        };
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        out
    }
}

/// Indices by descending probability, ties by index.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn mask_to(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for &i in keep {
        out[i] = probs[i];
    }
    out
}

fn sample_index(probs: &[f64], rng: &mut Stream) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding at the top end
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Serialized form: `{vocabulary, order, initial, transitions}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSpec {
    pub vocabulary: Vec<String>,
    pub order: usize,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
}

/// An order-1 or order-2 Markov chain over a small vocabulary.
///
/// The first symbol is drawn from `initial`. Row `r` of `transitions` is the
/// next-symbol distribution for the context whose symbols, read as base-V
/// digits (oldest first), spell `r`. Positions that have fewer than `order`
/// predecessors pad the context on the left with the first symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovLM {
    spec: MarkovSpec,
    index: HashMap<String, usize>,
}

impl MarkovLM {
    pub fn new(spec: MarkovSpec) -> Result<Self, SyntheticError> {
        let v = spec.vocabulary.len();
        let invalid = |m: String| Err(SyntheticError::InvalidModel(m));
        if v == 0 || v > MAX_VOCAB {
            return invalid(format!("vocabulary size {v} outside 1..={MAX_VOCAB}"));
        }
        if !(1..=2).contains(&spec.order) {
            return invalid(format!("order {} not in {{1, 2}}", spec.order));
        }
        let rows = v.pow(spec.order as u32);
        if spec.transitions.len() != rows {
            return invalid(format!("expected {rows} transition rows, got {}", spec.transitions.len()));
        }
        for (name, row) in std::iter::once(("initial".to_owned(), &spec.initial))
            .chain(spec.transitions.iter().enumerate().map(|(i, r)| (format!("row {i}"), r)))
        {
            if row.len() != v {
                return invalid(format!("{name} has {} entries, expected {v}", row.len()));
            }
            if row.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return invalid(format!("{name} has a non-positive entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return invalid(format!("{name} sums to {total}"));
            }
        }
        let index: HashMap<String, usize> = spec
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        if index.len() != v || spec.vocabulary.iter().any(|w| w.split_whitespace().count() != 1) {
            return invalid("vocabulary symbols must be unique single words".into());
        }
        Ok(Self { spec, index })
    }

    pub fn from_json(json: &str) -> Result<Self, SyntheticError> {
        let spec: MarkovSpec =
            serde_json::from_str(json).map_err(|e| SyntheticError::InvalidModel(e.to_string()))?;
        Self::new(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("model serializes")
    }

    pub fn spec(&self) -> &MarkovSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.spec.vocabulary.len()
    }

    pub fn order(&self) -> usize {
        self.spec.order
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.spec.vocabulary[i]
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<usize>, SyntheticError> {
        words
            .iter()
            .map(|w| {
                self.index
                    .get(w)
                    .copied()
                    .ok_or_else(|| SyntheticError::OutOfVocabulary(w.clone()))
            })
            .collect()
    }

    /// Next-symbol distribution after `prefix`.
    pub fn conditional(&self, prefix: &[usize]) -> &[f64] {
        let Some(&first) = prefix.first() else {
            return &self.spec.initial;
        };
        let v = self.vocab_size();
        let order = self.spec.order;
        let row = (0..order).fold(0, |acc, back| {
            let pos = prefix.len() as isize - order as isize + back as isize;
            let sym = if pos < 0 { first } else { prefix[pos as usize] };
            acc * v + sym
        });
        &self.spec.transitions[row]
    }

    pub fn sample_indices(
        &self,
        prefix: &[usize],
        n_new: usize,
        decoding: &Decoding,
        rng: &mut Stream,
    ) -> Vec<usize> {
        let mut seq = prefix.to_vec();
        for _ in 0..n_new {
            let row = decoding.apply(self.conditional(&seq));
            seq.push(sample_index(&row, rng));
        }
        seq.split_off(prefix.len())
    }

    /// Exact ancestral sample of `length` symbols.
    pub fn sample_sequence(
        &self,
        id: &str,
        length: usize,
        rng: &mut Stream,
    ) -> Result<Passage, SyntheticError> {
        if length < self.order() {
            return Err(SyntheticError::TooShort {
                length,
                order: self.order(),
            });
        }
        let seq = self.sample_indices(&[], length, &Decoding::default(), rng);
        Ok(self.decode(id, &seq))
    }

    pub fn decode(&self, id: &str, seq: &[usize]) -> Passage {
        Passage::from_words(id, seq.iter().map(|&i| self.symbol(i).to_owned()).collect())
    }

    /// Per-token log probability, rank (ties broken by vocabulary index) and
    /// conditional entropy.
    pub fn score_indices(&self, seq: &[usize]) -> Vec<TokenScoreRecord> {
        (0..seq.len())
            .map(|t| {
                let probs = self.conditional(&seq[..t]);
                let obs = seq[t];
                let p = probs[obs];
                let rank = 1 + probs
                    .iter()
                    .enumerate()
                    .filter(|&(j, &q)| q > p || (q == p && j < obs))
                    .count();
                TokenScoreRecord {
                    logprob: p.ln(),
                    rank: rank as u64,
                    entropy: entropy(probs),
                }
            })
            .collect()
    }

    pub fn sequence_logprob(&self, passage: &Passage) -> Result<ScoredPassage, SyntheticError> {
        let seq = self.encode(passage.words())?;
        ScoredPassage::from_records(passage.clone(), self.score_indices(&seq))
            .map_err(|e| SyntheticError::InvalidModel(e.to_string()))
    }

    /// The most probable next symbol at each step, starting from nothing.
    pub fn greedy_sequence(&self, length: usize) -> Vec<usize> {
        let mut seq = Vec::with_capacity(length);
        for _ in 0..length {
            seq.push(ranked(self.conditional(&seq))[0]);
        }
        seq
    }

    /// Resample every slot marked `None`, left to right, conditioning each
    /// draw on everything to its left (including earlier fills).
    pub fn fill_slots(&self, slots: &[Option<usize>], rng: &mut Stream) -> Vec<usize> {
        let mut seq = Vec::with_capacity(slots.len());
        for slot in slots {
            let sym = match slot {
                Some(s) => *s,
                None => sample_index(self.conditional(&seq), rng),
            };
            seq.push(sym);
        }
        seq
    }
}

/// Resample each masked span from `filler` given its left context, keeping
/// span lengths.
pub fn span_fill(
    filler: &MarkovLM,
    masked: &MaskedPassage,
    rng: &mut Stream,
) -> Result<Vec<Vec<String>>, SyntheticError> {
    let encoded = filler.encode(masked.original.words())?;
    let mut slots: Vec<Option<usize>> = encoded.into_iter().map(Some).collect();
    for s in &masked.spans {
        slots[s.start..s.end()].iter_mut().for_each(|v| *v = None);
    }
    let filled = filler.fill_slots(&slots, rng);
    Ok(masked
        .spans
        .iter()
        .map(|s| {
            filled[s.start..s.end()]
                .iter()
                .map(|&i| filler.symbol(i).to_owned())
                .collect()
        })
        .collect())
}

/// Parameters of a family of related chains sharing one vocabulary.
///
/// The vocabulary is split into `topics` contiguous blocks. Source rows put
/// their Dirichlet mass inside the block of the most recent symbol, so a
/// passage mostly stays within one topic, and each topic has its own
/// peakedness: topic `t` uses concentration `source_alpha * topic_alpha_ratio^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainFamily {
    pub vocab_size: usize,
    pub order: usize,
    pub topics: usize,
    /// Dirichlet concentration of the first topic's rows; small values give peaked rows.
    pub source_alpha: f64,
    pub topic_alpha_ratio: f64,
    /// Concentration of the jitter around the source rows; larger is closer.
    pub jitter_concentration: f64,
    /// Temperature applied to the jittered rows of the human chain; above 1
    /// makes human text less predictable than source samples.
    pub human_temperature: f64,
    /// Uniform mass mixed into every row so that no entry is zero.
    pub floor: f64,
}

impl Default for ChainFamily {
    fn default() -> Self {
        Self {
            vocab_size: 24,
            order: 1,
            topics: 2,
            source_alpha: 0.1,
            topic_alpha_ratio: 10.0,
            jitter_concentration: 20.0,
            human_temperature: 1.5,
            floor: 0.001,
        }
    }
}

fn dirichlet(alphas: &[f64], rng: &mut Stream) -> Vec<f64> {
    let draws: Vec<f64> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.into_iter().map(|d| d / total).collect()
    } else {
        vec![1.0 / alphas.len() as f64; alphas.len()]
    }
}

fn floored(row: Vec<f64>, floor: f64) -> Vec<f64> {
    let v = row.len() as f64;
    let mixed: Vec<f64> = row.iter().map(|p| (1.0 - floor) * p + floor / v).collect();
    let total: f64 = mixed.iter().sum();
    mixed.into_iter().map(|p| p / total).collect()
}

impl ChainFamily {
    pub fn vocabulary(&self) -> Vec<String> {
        (0..self.vocab_size).map(|i| format!("w{i:02}")).collect()
    }

    pub fn topic_of(&self, symbol: usize) -> usize {
        symbol * self.topics / self.vocab_size
    }

    fn topic_row(&self, topic: usize, rng: &mut Stream) -> Vec<f64> {
        let alpha = self.source_alpha * self.topic_alpha_ratio.powi(topic as i32);
        let members: Vec<usize> = (0..self.vocab_size).filter(|&i| self.topic_of(i) == topic).collect();
        let inner = dirichlet(&vec![alpha; members.len()], rng);
        let mut row = vec![0.0; self.vocab_size];
        for (&i, p) in members.iter().zip(inner) {
            row[i] = p;
        }
        floored(row, self.floor)
    }

    /// A fresh source chain with peaked, topic-local Dirichlet rows and a
    /// uniform initial distribution.
    pub fn source(&self, seed: u64) -> Result<MarkovLM, SyntheticError> {
        let v = self.vocab_size;
        if self.topics == 0 || self.topics > v {
            return Err(SyntheticError::InvalidModel(format!(
                "topics must be in 1..={v}, got {}",
                self.topics
            )));
        }
        let mut rng = stream(derive_seed(seed, "chain/source"));
        let transitions = (0..v.pow(self.order as u32))
            .map(|row| self.topic_row(self.topic_of(row % v), &mut rng))
            .collect();
        MarkovLM::new(MarkovSpec {
            vocabulary: self.vocabulary(),
            order: self.order,
            initial: vec![1.0 / v as f64; v],
            transitions,
        })
    }

    /// A Dirichlet-jittered copy of `base`: each row is drawn from
    /// `Dirichlet(jitter_concentration * V * base_row)`.
    pub fn jittered(&self, base: &MarkovLM, seed: u64, tag: &str) -> Result<MarkovLM, SyntheticError> {
        let mut rng = stream(derive_seed(seed, &format!("chain/jitter/{tag}")));
        let scale = self.jitter_concentration * base.vocab_size() as f64;
        let mut jitter = |row: &[f64]| {
            let alphas: Vec<f64> = row.iter().map(|p| p * scale).collect();
            floored(dirichlet(&alphas, &mut rng), self.floor)
        };
        let spec = base.spec();
        MarkovLM::new(MarkovSpec {
            vocabulary: spec.vocabulary.clone(),
            order: spec.order,
            initial: jitter(&spec.initial),
            transitions: spec.transitions.iter().map(|r| jitter(r)).collect(),
        })
    }

    /// `base` with every row raised to `1 / temperature` and renormalized.
    pub fn tempered(base: &MarkovLM, temperature: f64) -> Result<MarkovLM, SyntheticError> {
        let temper = |row: &[f64]| -> Vec<f64> {
            let r: Vec<f64> = row.iter().map(|p| p.powf(1.0 / temperature)).collect();
            let total: f64 = r.iter().sum();
            r.into_iter().map(|p| p / total).collect()
        };
        let spec = base.spec();
        MarkovLM::new(MarkovSpec {
            vocabulary: spec.vocabulary.clone(),
            order: spec.order,
            initial: temper(&spec.initial),
            transitions: spec.transitions.iter().map(|r| temper(r)).collect(),
        })
    }

    /// The human twin of `source`: a jittered copy at `human_temperature`.
    pub fn human(&self, source: &MarkovLM, seed: u64) -> Result<MarkovLM, SyntheticError> {
        Self::tempered(&self.jittered(source, seed, "human")?, self.human_temperature)
    }

    /// Entry-wise mixture `w * a + (1 - w) * b` of two chains on this family's vocabulary.
    pub fn mixture(a: &MarkovLM, b: &MarkovLM, w: f64) -> Result<MarkovLM, SyntheticError> {
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            let m: Vec<f64> = x.iter().zip(y).map(|(p, q)| w * p + (1.0 - w) * q).collect();
            let total: f64 = m.iter().sum();
            m.into_iter().map(|p| p / total).collect()
        };
        let (sa, sb) = (a.spec(), b.spec());
        MarkovLM::new(MarkovSpec {
            vocabulary: sa.vocabulary.clone(),
            order: sa.order,
            initial: mix(&sa.initial, &sb.initial),
            transitions: sa
                .transitions
                .iter()
                .zip(&sb.transitions)
                .map(|(x, y)| mix(x, y))
                .collect(),
        })
    }
}
