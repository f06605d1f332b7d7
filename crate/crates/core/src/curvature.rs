//! Hutchinson trace estimation with finite differences on explicit scalar
//! fields.
//!
//! With Rademacher probes `z`, `z'Hz` is approximated by the central second
//! difference `(f(x+hz) + f(x-hz) - 2f(x)) / h^2`, whose mean over probes
//! estimates `tr H`. For a symmetric probe distribution the one-sided
//! `f(x) - E f(x+hz)` estimates `-h^2 tr(H) / 2`, which is the shape of the
//! perturbation discrepancy.

use rand::Rng;
use thiserror::Error;

use crate::seed::Stream;

#[derive(Debug, Error, PartialEq)]
pub enum CurvatureError {
    #[error("field evaluated to a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: field has {field}, vector has {vector}")]
    DimensionMismatch { field: usize, vector: usize },
    #[error("step h must be positive and finite")]
    BadStep,
    #[error("need at least 2 probes, got {0}")]
    TooFewProbes(usize),
    #[error("unknown field '{0}' (expected quadratic or sinusoid)")]
    UnknownField(String),
}

/// A deterministic real function on R^n.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> f64;

    /// Analytic Hessian trace at `x`, when known.
    fn hessian_trace(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// `f(x) = sum_i d_i x_i^2`, so `H = 2 diag(d)`.
#[derive(Debug, Clone)]
pub struct DiagonalQuadratic {
    pub diag: Vec<f64>,
}

impl DiagonalQuadratic {
    /// `diag(1, 2, ..., n)`.
    pub fn ascending(n: usize) -> Self {
        Self {
            diag: (1..=n).map(|i| i as f64).collect(),
        }
    }
}

impl ScalarField for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        self.diag.iter().zip(x).map(|(d, v)| d * v * v).sum()
    }

    fn hessian_trace(&self, _x: &[f64]) -> Option<f64> {
        Some(2.0 * self.diag.iter().sum::<f64>())
    }
}

/// `f(x) = sum_i sin(x_i)`, so `tr H = -sum_i sin(x_i)`.
#[derive(Debug, Clone)]
pub struct Sinusoid {
    pub n: usize,
}

impl ScalarField for Sinusoid {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.sin()).sum()
    }

    fn hessian_trace(&self, x: &[f64]) -> Option<f64> {
        Some(-x.iter().map(|v| v.sin()).sum::<f64>())
    }
}

/// Wraps a closure as a field.
pub struct FnField<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Build one of the named fields used by the CLI checker.
pub fn builtin_field(name: &str, dim: usize) -> Result<Box<dyn ScalarField>, CurvatureError> {
    match name {
        "quadratic" => Ok(Box::new(DiagonalQuadratic::ascending(dim))),
        "sinusoid" => Ok(Box::new(Sinusoid { n: dim })),
        other => Err(CurvatureError::UnknownField(other.to_owned())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub value: f64,
    pub n_probes: usize,
    pub h: f64,
    pub standard_error: f64,
}

impl TraceEstimate {
    fn from_samples(samples: &[f64], h: f64) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            value: mean,
            n_probes: samples.len(),
            h,
            standard_error: (var / n).sqrt(),
        }
    }

    /// `(value - truth) / standard_error`; 0 when both numerator and error vanish.
    pub fn z_score(&self, truth: f64) -> f64 {
        let diff = self.value - truth;
        if self.standard_error > 0.0 {
            diff / self.standard_error
        } else if diff.abs() <= 1e-12 * truth.abs().max(1.0) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

pub fn rademacher_probe(n: usize, rng: &mut Stream) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

fn eval(f: &dyn ScalarField, x: &[f64]) -> Result<f64, CurvatureError> {
    let v = f.evaluate(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CurvatureError::NonFinite)
    }
}

fn check_dims(f: &dyn ScalarField, x: &[f64], z: &[f64]) -> Result<(), CurvatureError> {
    for v in [x.len(), z.len()] {
        if v != f.dim() {
            return Err(CurvatureError::DimensionMismatch {
                field: f.dim(),
                vector: v,
            });
        }
    }
    Ok(())
}

fn check_step(h: f64) -> Result<(), CurvatureError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(CurvatureError::BadStep)
    }
}

fn offset(x: &[f64], z: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a + t * b).collect()
}

/// Central second difference along `z`: approximates `z'H z`.
pub fn directional_second_difference(
    f: &dyn ScalarField,
    x: &[f64],
    z: &[f64],
    h: f64,
) -> Result<f64, CurvatureError> {
    check_step(h)?;
    check_dims(f, x, z)?;
    second_difference(f, x, eval(f, x)?, z, h)
}

fn second_difference(
    f: &dyn ScalarField,
    x: &[f64],
    fx: f64,
    z: &[f64],
    h: f64,
) -> Result<f64, CurvatureError> {
    let plus = eval(f, &offset(x, z, h))?;
    let minus = eval(f, &offset(x, z, -h))?;
    Ok((plus + minus - 2.0 * fx) / (h * h))
}

/// Monte-Carlo estimate of `-tr(H_f(x))` with Rademacher probes.
pub fn neg_hessian_trace(
    f: &dyn ScalarField,
    x: &[f64],
    n_probes: usize,
    h: f64,
    rng: &mut Stream,
) -> Result<TraceEstimate, CurvatureError> {
    if n_probes < 2 {
        return Err(CurvatureError::TooFewProbes(n_probes));
    }
    check_step(h)?;
    check_dims(f, x, x)?;
    let fx = eval(f, x)?;
    let samples = (0..n_probes)
        .map(|_| {
            let z = rademacher_probe(f.dim(), rng);
            second_difference(f, x, fx, &z, h).map(|v| -v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TraceEstimate::from_samples(&samples, h))
}

/// One-sided discrepancy `f(x) - mean_z f(x + h z)`. For symmetric probes its
/// expectation on a quadratic is `-h^2 tr(H) / 2`.
pub fn symmetric_discrepancy(
    f: &dyn ScalarField,
    x: &[f64],
    n_probes: usize,
    h: f64,
    rng: &mut Stream,
) -> Result<TraceEstimate, CurvatureError> {
    if n_probes < 2 {
        return Err(CurvatureError::TooFewProbes(n_probes));
    }
    check_step(h)?;
    check_dims(f, x, x)?;
    let fx = eval(f, x)?;
    let samples = (0..n_probes)
        .map(|_| {
            let z = rademacher_probe(f.dim(), rng);
            eval(f, &offset(x, &z, h)).map(|v| fx - v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TraceEstimate::from_samples(&samples, h))
}
