//! Embeddings, class probability vectors, softmax and entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(p) == 1` when ingesting probabilities.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Image embedding `psi(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding must have d >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// A probability vector over `|Y| >= 2` classes, optionally with the logits it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
}

impl ClassProbabilities {
    /// Validate a probability vector. Sums within [`PROB_SUM_TOLERANCE`] of one are
    /// renormalised; anything further off is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidProbabilities(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < -PROB_SUM_TOLERANCE || **p > 1.0 + PROB_SUM_TOLERANCE)
        {
            return Err(Error::InvalidProbabilities(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidProbabilities(format!("sum {sum} is not 1")));
        }
        let probs = probs.into_iter().map(|p| p.max(0.0)).collect::<Vec<_>>();
        let sum: f64 = probs.iter().sum();
        Ok(Self {
            probs: probs.into_iter().map(|p| p / sum).collect(),
            logits: None,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Element-wise mean of several distributions over the same class set.
    pub fn mean(members: &[ClassProbabilities]) -> Result<ClassProbabilities> {
        let first = members.first().ok_or_else(|| {
            Error::InvalidInput("cannot average an empty list of distributions".into())
        })?;
        if members.len() == 1 {
            return Ok(first.clone());
        }
        let k = first.num_classes();
        let mut acc = vec![0.0; k];
        for m in members {
            if m.num_classes() != k {
                return Err(Error::InvalidInput(format!(
                    "class count mismatch: {} vs {}",
                    k,
                    m.num_classes()
                )));
            }
            for (a, p) in acc.iter_mut().zip(&m.probs) {
                *a += p;
            }
        }
        let n = members.len() as f64;
        Ok(ClassProbabilities {
            probs: acc.into_iter().map(|a| a / n).collect(),
            logits: None,
        })
    }
}

/// Lowest index of the maximum; NaN entries never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<ClassProbabilities> {
    if logits.len() < 2 {
        return Err(Error::InvalidProbabilities(format!(
            "need at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProbabilities("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ClassProbabilities {
        probs: exps.into_iter().map(|e| e / sum).collect(),
        logits: Some(logits.to_vec()),
    })
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ClassProbabilities) -> f64 {
    -p.probs
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}
