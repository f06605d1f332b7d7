//! Random span masking and fill substitution.
//!
//! Spans are chosen uniformly among all legal placements: sorted, disjoint,
//! within bounds, and separated by at least `buffer` unmasked words. Masked
//! spans are rendered as `«MASK_i»` sentinels numbered left to right.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::passage::Passage;
use crate::seed::{derive_seed, stream, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("invalid mask spec: {0}")]
    InvalidSpec(&'static str),
    #[error("passage of {n_words} words is too short for a {span_length}-word span")]
    PassageTooShort { n_words: usize, span_length: usize },
    #[error("expected {expected} fills, got {got}")]
    FillCountMismatch { expected: usize, got: usize },
    #[error("fill {0} is empty")]
    EmptyFill(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    pub mask_rate: f64,
    pub span_length: usize,
    pub n_perturbations: usize,
    pub buffer: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            span_length: 2,
            n_perturbations: 100,
            buffer: 1,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<(), PerturbError> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(PerturbError::InvalidSpec("mask_rate must lie in (0, 1)"));
        }
        if self.span_length == 0 {
            return Err(PerturbError::InvalidSpec("span_length must be >= 1"));
        }
        if self.n_perturbations == 0 {
            return Err(PerturbError::InvalidSpec("n_perturbations must be >= 1"));
        }
        Ok(())
    }

    /// Smallest passage for which the realized mask fraction overshoots
    /// `mask_rate` by at most `mask_rate` (one span is at most that share).
    pub fn min_words(&self) -> usize {
        (self.span_length as f64 / self.mask_rate).ceil() as usize
    }
}

/// A contiguous run of masked words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

pub fn sentinel(i: usize) -> String {
    format!("«MASK_{i}»")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPassage {
    pub original: Passage,
    pub spans: Vec<Span>,
    pub masked_text: String,
}

impl MaskedPassage {
    pub fn new(original: Passage, spans: Vec<Span>) -> Self {
        let masked_text = render(original.words(), &spans);
        Self {
            original,
            spans,
            masked_text,
        }
    }

    pub fn span_count(&self) -> usize {
        self.spans.len()
    }

    pub fn span_lengths(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.len).collect()
    }

    pub fn masked_words(&self) -> usize {
        self.spans.iter().map(|s| s.len).sum()
    }

    /// The original words covered by each span.
    pub fn masked_segments(&self) -> Vec<Vec<String>> {
        let words = self.original.words();
        self.spans
            .iter()
            .map(|s| words[s.start..s.end()].to_vec())
            .collect()
    }
}

/// Number of spans needed to mask at least `mask_rate` of `n_words`,
/// clamped to what fits with buffers between spans.
pub fn required_span_count(n_words: usize, spec: &MaskSpec) -> Result<usize, PerturbError> {
    spec.validate()?;
    let span = spec.span_length;
    if n_words < span {
        return Err(PerturbError::PassageTooShort {
            n_words,
            span_length: span,
        });
    }
    // Guard against 0.15 * 200 landing a hair above 30.
    let target = (spec.mask_rate * n_words as f64 / span as f64 - 1e-9).ceil() as usize;
    let placeable = (n_words + spec.buffer) / (span + spec.buffer);
    Ok(target.clamp(1, placeable))
}

/// Choose spans for one perturbation.
///
/// Placements are sampled exactly uniformly: with `m` spans the slack
/// `n - m*len - (m-1)*buffer` is distributed by drawing `m` distinct sorted
/// offsets from `slack + m` slots, which is a bijection onto legal placements.
pub fn select_mask_spans(
    passage: &Passage,
    spec: &MaskSpec,
    rng: &mut Stream,
) -> Result<MaskedPassage, PerturbError> {
    let n = passage.len_words();
    let m = required_span_count(n, spec)?;
    let (len, buffer) = (spec.span_length, spec.buffer);
    let slack = n - m * len - (m - 1) * buffer;
    let mut offsets = index::sample(rng, slack + m, m).into_vec();
    offsets.sort_unstable();
    let spans = offsets
        .into_iter()
        .enumerate()
        .map(|(i, y)| Span {
            start: y - i + i * (len + buffer),
            len,
        })
        .collect();
    Ok(MaskedPassage::new(passage.clone(), spans))
}

/// Spans for perturbation `j` of a passage identified by `key`; each index
/// gets its own derived sub-seed.
pub fn select_for_perturbation(
    passage: &Passage,
    spec: &MaskSpec,
    key: &str,
    j: usize,
) -> Result<MaskedPassage, PerturbError> {
    let mut rng = stream(derive_seed(spec.seed, &format!("mask/{key}/{j}")));
    select_mask_spans(passage, spec, &mut rng)
}

pub fn render_masked_text(masked: &MaskedPassage) -> String {
    render(masked.original.words(), &masked.spans)
}

fn render(words: &[String], spans: &[Span]) -> String {
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    let mut cursor = 0;
    for (i, span) in spans.iter().enumerate() {
        out.extend_from_slice(&words[cursor..span.start]);
        out.push(sentinel(i));
        cursor = span.end();
    }
    out.extend_from_slice(&words[cursor..]);
    out.join(" ")
}

/// Replace each span with its fill, yielding the perturbed passage.
pub fn substitute_fills(
    masked: &MaskedPassage,
    fills: &[Vec<String>],
) -> Result<Passage, PerturbError> {
    if fills.len() != masked.spans.len() {
        return Err(PerturbError::FillCountMismatch {
            expected: masked.spans.len(),
            got: fills.len(),
        });
    }
    if let Some(i) = fills
        .iter()
        .position(|f| f.iter().all(|w| w.trim().is_empty()))
    {
        return Err(PerturbError::EmptyFill(i));
    }
    let words = masked.original.words();
    let mut out = Vec::with_capacity(words.len());
    let mut cursor = 0;
    for (span, fill) in masked.spans.iter().zip(fills) {
        out.extend_from_slice(&words[cursor..span.start]);
        out.extend(fill.iter().cloned());
        cursor = span.end();
    }
    out.extend_from_slice(&words[cursor..]);
    Ok(Passage::from_words(masked.original.id.clone(), out))
}
