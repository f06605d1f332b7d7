//! Text representation and the per-token scoring records shared by every
//! other module.
//!
//! A "word" is a whitespace-separated string. Model tokenization never leaks
//! out of a backend; all masking offsets are expressed in words.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Relative tolerance for `total_logprob == sum(records.logprob)`.
pub const TOTAL_LOGPROB_RTOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PassageError {
    #[error("passage has no words")]
    Empty,
    #[error("score record list is empty")]
    NoRecords,
    #[error("invalid token record at {index}: {reason}")]
    InvalidRecord { index: usize, reason: &'static str },
    #[error("total logprob {total} disagrees with token sum {sum}")]
    TotalMismatch { total: f64, sum: f64 },
}

/// Split on runs of Unicode whitespace. Punctuation stays attached.
pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Collapse internal whitespace to single spaces and trim the ends.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A candidate passage. `text` is always the canonical normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    #[serde(skip)]
    words: Vec<String>,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: &str) -> Self {
        let words = split_words(text);
        Self {
            id: id.into(),
            text: words.join(" "),
            words,
        }
    }

    pub fn from_words(id: impl Into<String>, words: Vec<String>) -> Self {
        // Re-split so that a "word" containing whitespace can never survive.
        Self::new(id, &words.join(" "))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len_words(&self) -> usize {
        self.words.len()
    }

    /// Passages accepted by detection operations must be non-empty.
    pub fn require_nonempty(&self) -> Result<(), PassageError> {
        if self.words.is_empty() {
            Err(PassageError::Empty)
        } else {
            Ok(())
        }
    }

    /// Keep at most the first `n` words.
    pub fn truncated(&self, n: usize) -> Self {
        Self::from_words(self.id.clone(), self.words.iter().take(n).cloned().collect())
    }
}

/// Deterministic SHA-256 digest over `(context, normalized text)`, as 64 hex
/// characters. The context is length-prefixed so that `("ab", "c")` and
/// `("a", "bc")` never collide.
pub fn passage_hash(text: &str, context: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((context.len() as u64).to_le_bytes());
    hasher.update(context.as_bytes());
    hasher.update(normalize(text).as_bytes());
    hex::encode(hasher.finalize())
}

/// Scoring of one model token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    /// Natural-log probability of the observed token.
    pub logprob: f64,
    /// 1 = most probable token under the conditional.
    pub rank: u64,
    /// Shannon entropy of the conditional, in nats.
    pub entropy: f64,
}

impl TokenScoreRecord {
    fn check(&self) -> Result<(), &'static str> {
        if !self.logprob.is_finite() {
            return Err("logprob is not finite");
        }
        if self.rank < 1 {
            return Err("rank must be >= 1");
        }
        if !(self.entropy.is_finite() && self.entropy >= 0.0) {
            return Err("entropy must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPassage {
    pub passage: Passage,
    pub records: Vec<TokenScoreRecord>,
    pub total_logprob: f64,
}

impl ScoredPassage {
    /// Validates records and checks the supplied total against the token sum.
    pub fn new(
        passage: Passage,
        records: Vec<TokenScoreRecord>,
        total_logprob: f64,
    ) -> Result<Self, PassageError> {
        let sum = validate_records(&records)?;
        if !within_rtol(total_logprob, sum, TOTAL_LOGPROB_RTOL) {
            return Err(PassageError::TotalMismatch {
                total: total_logprob,
                sum,
            });
        }
        Ok(Self {
            passage,
            records,
            total_logprob,
        })
    }

    /// Builds the passage with `total_logprob` set to the exact token sum.
    pub fn from_records(
        passage: Passage,
        records: Vec<TokenScoreRecord>,
    ) -> Result<Self, PassageError> {
        let sum = validate_records(&records)?;
        Ok(Self {
            passage,
            records,
            total_logprob: sum,
        })
    }
}

fn validate_records(records: &[TokenScoreRecord]) -> Result<f64, PassageError> {
    if records.is_empty() {
        return Err(PassageError::NoRecords);
    }
    for (index, r) in records.iter().enumerate() {
        r.check()
            .map_err(|reason| PassageError::InvalidRecord { index, reason })?;
    }
    Ok(records.iter().map(|r| r.logprob).sum())
}

pub(crate) fn within_rtol(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1.0)
}
