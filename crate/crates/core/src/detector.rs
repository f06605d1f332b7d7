//! The perturbation discrepancy, its normalized decision rule, and the four
//! token-statistic baselines.
//!
//! Every score is oriented so that higher means "more likely machine-generated".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::passage::ScoredPassage;

/// Standard deviation used in place of zero when all perturbations score the same.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Default decision threshold on the normalized discrepancy.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("need at least 2 perturbations, got {0}")]
    TooFewPerturbations(usize),
    #[error("non-finite log probability in input")]
    NonFinite,
    #[error("scored passage has no token records")]
    EmptyRecords,
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Logp,
    Rank,
    Logrank,
    Entropy,
    Detectgpt,
}

impl Method {
    /// Table order: the four baselines, then DetectGPT.
    pub const ALL: [Method; 5] = [
        Method::Logp,
        Method::Rank,
        Method::Logrank,
        Method::Entropy,
        Method::Detectgpt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Logp => "logp",
            Method::Rank => "rank",
            Method::Logrank => "logrank",
            Method::Entropy => "entropy",
            Method::Detectgpt => "detectgpt",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Method::Detectgpt
    }

    /// Parse a comma-separated list; `all` expands to every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>, DetectError> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Method::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| DetectError::UnknownMethod(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEstimate {
    pub logp_x: f64,
    pub mu_tilde: f64,
    pub sigma2_tilde: f64,
    pub d_hat: f64,
    pub normalized: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub method: Method,
    pub score: f64,
    pub verdict: Option<bool>,
    pub threshold: Option<f64>,
}

impl DetectionResult {
    pub fn new(method: Method, score: f64, threshold: Option<f64>) -> Self {
        Self {
            method,
            score,
            verdict: threshold.map(|t| score > t),
            threshold,
        }
    }
}

/// `log p(x)` minus the mean perturbed log probability, normalized by the
/// sample standard deviation (k-1 denominator) of the perturbed values.
pub fn perturbation_discrepancy(
    logp_x: f64,
    perturbed_logps: &[f64],
) -> Result<DiscrepancyEstimate, DetectError> {
    let k = perturbed_logps.len();
    if k < 2 {
        return Err(DetectError::TooFewPerturbations(k));
    }
    if !logp_x.is_finite() || perturbed_logps.iter().any(|v| !v.is_finite()) {
        return Err(DetectError::NonFinite);
    }
    let mu_tilde = perturbed_logps.iter().sum::<f64>() / k as f64;
    let sigma2_tilde = perturbed_logps
        .iter()
        .map(|v| (v - mu_tilde).powi(2))
        .sum::<f64>()
        / (k - 1) as f64;
    let d_hat = logp_x - mu_tilde;
    let normalized = if sigma2_tilde > 0.0 {
        d_hat / sigma2_tilde.sqrt()
    } else if d_hat == 0.0 {
        0.0
    } else {
        d_hat / SIGMA_FLOOR
    };
    Ok(DiscrepancyEstimate {
        logp_x,
        mu_tilde,
        sigma2_tilde,
        d_hat,
        normalized,
        k,
    })
}

pub fn decide(estimate: &DiscrepancyEstimate, epsilon: f64) -> bool {
    estimate.normalized > epsilon
}

fn mean_of(scored: &ScoredPassage, f: impl Fn(&crate::passage::TokenScoreRecord) -> f64) -> Result<f64, DetectError> {
    if scored.records.is_empty() {
        return Err(DetectError::EmptyRecords);
    }
    Ok(scored.records.iter().map(f).sum::<f64>() / scored.records.len() as f64)
}

/// Mean token log probability.
pub fn baseline_logp(scored: &ScoredPassage) -> Result<f64, DetectError> {
    mean_of(scored, |r| r.logprob)
}

/// Negated mean rank.
pub fn baseline_rank(scored: &ScoredPassage) -> Result<f64, DetectError> {
    mean_of(scored, |r| r.rank as f64).map(|m| -m)
}

/// Negated mean log-rank.
pub fn baseline_logrank(scored: &ScoredPassage) -> Result<f64, DetectError> {
    mean_of(scored, |r| (r.rank as f64).ln()).map(|m| -m)
}

/// Mean predictive entropy. High entropy correlates positively with
/// machine text more often than not, so it is not negated.
pub fn baseline_entropy(scored: &ScoredPassage) -> Result<f64, DetectError> {
    mean_of(scored, |r| r.entropy)
}

pub fn baseline(method: Method, scored: &ScoredPassage) -> Result<f64, DetectError> {
    match method {
        Method::Logp => baseline_logp(scored),
        Method::Rank => baseline_rank(scored),
        Method::Logrank => baseline_logrank(scored),
        Method::Entropy => baseline_entropy(scored),
        Method::Detectgpt => unreachable!("detectgpt is not a single-pass baseline"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::passage::{Passage, TokenScoreRecord};
    use proptest::prelude::*;

    fn scored(records: &[(f64, u64, f64)]) -> ScoredPassage {
        let recs = records
            .iter()
            .map(|&(logprob, rank, entropy)| TokenScoreRecord { logprob, rank, entropy })
            .collect();
        ScoredPassage::from_records(Passage::new("p", "w"), recs).unwrap()
    }

    /// Two-pass textbook evaluation of the same quantities, kept separate
    /// from the implementation under test.
    fn oracle(logp_x: f64, xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mut total = 0.0;
        for x in xs {
            total += x;
        }
        let mean = total / n;
        let mut ss = 0.0;
        for x in xs {
            ss += (x - mean) * (x - mean);
        }
        let var = ss / (n - 1.0);
        (logp_x - mean, var, (logp_x - mean) / var.sqrt())
    }

    #[test]
    fn hand_cases() {
        let e = perturbation_discrepancy(-10.0, &[-12.0, -11.0, -13.0]).unwrap();
        assert_eq!((e.d_hat, e.mu_tilde, e.sigma2_tilde, e.normalized, e.k), (2.0, -12.0, 1.0, 2.0, 3));
        assert_eq!(oracle(-10.0, &[-12.0, -11.0, -13.0]), (2.0, 1.0, 2.0));

        let e = perturbation_discrepancy(-10.0, &[-10.0; 3]).unwrap();
        assert_eq!((e.d_hat, e.normalized), (0.0, 0.0));

        let e = perturbation_discrepancy(-5.0, &[-4.0, -6.0]).unwrap();
        assert_eq!((e.d_hat, e.mu_tilde, e.sigma2_tilde, e.normalized), (0.0, -5.0, 2.0, 0.0));
    }

    #[test]
    fn zero_variance_keeps_sign() {
        let e = perturbation_discrepancy(-9.0, &[-10.0, -10.0]).unwrap();
        assert_eq!(e.normalized, 1.0 / SIGMA_FLOOR);
        let e = perturbation_discrepancy(-11.0, &[-10.0, -10.0]).unwrap();
        assert_eq!(e.normalized, -1.0 / SIGMA_FLOOR);
    }

    #[test]
    fn errors() {
        assert_eq!(perturbation_discrepancy(-1.0, &[-1.0]), Err(DetectError::TooFewPerturbations(1)));
        assert_eq!(perturbation_discrepancy(f64::NAN, &[-1.0, -2.0]), Err(DetectError::NonFinite));
        assert_eq!(
            perturbation_discrepancy(-1.0, &[-1.0, f64::NEG_INFINITY]),
            Err(DetectError::NonFinite)
        );
    }

    #[test]
    fn decision_rule() {
        let at = |normalized| DiscrepancyEstimate {
            logp_x: 0.0,
            mu_tilde: 0.0,
            sigma2_tilde: 1.0,
            d_hat: normalized,
            normalized,
            k: 2,
        };
        assert!(decide(&at(2.0), 0.1));
        assert!(!decide(&at(0.1), 0.1));
        assert!(!decide(&at(-1.0), 0.0));
        let r = DetectionResult::new(Method::Detectgpt, 2.0, Some(0.1));
        assert_eq!(r.verdict, Some(true));
        assert_eq!(DetectionResult::new(Method::Logp, 2.0, None).verdict, None);
    }

    #[test]
    fn baselines() {
        let s = scored(&[(-1.0, 1, 0.0), (-2.0, 1, 0.0), (-3.0, 1, 0.0)]);
        assert_eq!(baseline_logp(&s).unwrap(), -2.0);
        assert_eq!(baseline_logp(&scored(&[(-0.5, 1, 0.0)])).unwrap(), -0.5);
        assert_eq!(baseline_rank(&s).unwrap(), -1.0);
        assert_eq!(baseline_rank(&scored(&[(-1.0, 2, 0.0), (-1.0, 4, 0.0)])).unwrap(), -3.0);
        assert_eq!(baseline_logrank(&scored(&[(-1.0, 1, 0.0), (-1.0, 1, 0.0)])).unwrap(), 0.0);
        let lr = baseline_logrank(&scored(&[(-1.0, 3, 0.0)])).unwrap();
        assert!((lr + 3f64.ln()).abs() < 1e-15 && (lr + 1.0986).abs() < 1e-4);
        assert_eq!(baseline_entropy(&scored(&[(-1.0, 1, 0.0), (-1.0, 1, 0.0)])).unwrap(), 0.0);

        // -sum p ln p for (0.5, 0.25, 0.25)
        let h = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((h - 1.0397).abs() < 1e-4);
        let s = scored(&[(-1.0, 1, h), (-1.0, 1, h)]);
        assert!((baseline_entropy(&s).unwrap() - h).abs() < 1e-15);
        let v = 50.0f64;
        assert!((baseline_entropy(&scored(&[(-1.0, 1, v.ln())])).unwrap() - v.ln()).abs() < 1e-15);

        let top = scored(&[(-1.0, 1, 0.0); 4]);
        let low = scored(&[(-1.0, 100, 0.0); 4]);
        assert!(baseline_rank(&top).unwrap() > baseline_rank(&low).unwrap());
        assert!(baseline_logrank(&top).unwrap() > baseline_logrank(&low).unwrap());
    }

    #[test]
    fn logp_mean_matches_independent_summation() {
        use rand::Rng;
        let mut rng = crate::seed::stream(42);
        let lps: Vec<f64> = (0..1000).map(|_| -rng.random::<f64>() * 10.0).collect();
        let recs: Vec<_> = lps.iter().map(|&l| (l, 1, 0.0)).collect();
        // Kahan-compensated oracle
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for &x in &lps {
            let y = x - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        assert!((baseline_logp(&scored(&recs)).unwrap() - sum / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse_list("all").unwrap(), Method::ALL.to_vec());
        assert_eq!(Method::parse_list("logp, detectgpt").unwrap(), vec![Method::Logp, Method::Detectgpt]);
        assert!(Method::parse_list("bogus").is_err());
        assert_eq!(serde_json::to_string(&Method::Logrank).unwrap(), "\"logrank\"");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_oracle_and_invariances(
            logp_x in -500.0f64..0.0,
            xs in proptest::collection::vec(-500.0f64..0.0, 2..40),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
            rot in 0usize..40,
        ) {
            let e = perturbation_discrepancy(logp_x, &xs).unwrap();
            let (d, var, _) = oracle(logp_x, &xs);
            prop_assert!((e.d_hat - d).abs() <= 1e-9 * (1.0 + d.abs()));
            prop_assert!((e.sigma2_tilde - var).abs() <= 1e-9 * (1.0 + var));
            prop_assert_eq!(e.d_hat, e.logp_x - e.mu_tilde);
            prop_assume!(var > 1e-6);

            let tol = |a: f64| 1e-7 * (1.0 + a.abs());
            let mut perm = xs.clone();
            perm.rotate_left(rot % xs.len());
            perm.reverse();
            let p = perturbation_discrepancy(logp_x, &perm).unwrap();
            prop_assert!((p.normalized - e.normalized).abs() <= tol(e.normalized));
            prop_assert!((p.d_hat - e.d_hat).abs() <= tol(e.d_hat));

            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let t = perturbation_discrepancy(logp_x + shift, &shifted).unwrap();
            prop_assert!((t.d_hat - e.d_hat).abs() <= 1e-7 * (1.0 + shift.abs() + e.d_hat.abs()));
            prop_assert!((t.normalized - e.normalized).abs() <= 1e-6 * (1.0 + e.normalized.abs()));

            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let s = perturbation_discrepancy(logp_x * scale, &scaled).unwrap();
            prop_assert!((s.d_hat - scale * e.d_hat).abs() <= tol(scale * e.d_hat) * 10.0);
            prop_assert!((s.normalized - e.normalized).abs() <= tol(e.normalized));
        }

        #[test]
        fn baseline_orientation(base in proptest::collection::vec((-10.0f64..-0.1, 2u64..50, 0.0f64..3.0), 1..30)) {
            // componentwise more machine-like: higher logprob, lower rank, higher entropy
            let better: Vec<_> = base.iter().map(|&(l, r, h)| (l + 0.05, r - 1, h + 0.1)).collect();
            let (a, b) = (scored(&base), scored(&better));
            prop_assert!(baseline_logp(&b).unwrap() > baseline_logp(&a).unwrap());
            prop_assert!(baseline_rank(&b).unwrap() > baseline_rank(&a).unwrap());
            prop_assert!(baseline_logrank(&b).unwrap() > baseline_logrank(&a).unwrap());
            prop_assert!(baseline_entropy(&b).unwrap() > baseline_entropy(&a).unwrap());
        }
    }
}
