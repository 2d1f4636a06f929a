//! Energy and max-softmax scores, energy propagation, thresholding and
//! evaluation metrics. Every score is oriented so that higher means more
//! OOD-like.

mod export;
mod metrics;

pub use export::{histogram, write_scores_csv, Histogram, ScoreRow};
pub use metrics::{aupr, auroc, evaluate, fpr_at_95_tpr, DetectionReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{log_sum_exp_rows, softmax_rows, Tensor};
use crate::graph::{Graph, SparseMatrix};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("no in-distribution nodes to evaluate")]
    NoId,
    #[error("no out-of-distribution nodes to evaluate")]
    NoOod,
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("score {0} is not finite")]
    NonFinite(usize),
    #[error("propagation weight {0} outside [0, 1]")]
    Alpha(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyScores {
    pub e: Vec<f64>,
    pub propagated: bool,
    pub k: usize,
    pub alpha: f64,
}

/// `e_i = -log sum_c exp(logit_ic)`.
pub fn energy_score(logits: &Tensor) -> EnergyScores {
    EnergyScores {
        e: log_sum_exp_rows(logits).data().iter().map(|v| -v).collect(),
        propagated: false,
        k: 0,
        alpha: 1.0,
    }
}

/// `k` rounds of `e <- alpha e + (1 - alpha) D^{-1} A e` over `g`.
/// Isolated nodes keep their own value.
pub fn propagate_energy(
    scores: &EnergyScores,
    g: &Graph,
    alpha: f64,
    k: usize,
) -> Result<EnergyScores, DetectionError> {
    propagate_with(scores, &g.row_stochastic_adjacency(), alpha, k)
}

/// [`propagate_energy`] with a precomputed `D^{-1} A`.
pub fn propagate_with(
    scores: &EnergyScores,
    walk: &SparseMatrix,
    alpha: f64,
    k: usize,
) -> Result<EnergyScores, DetectionError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DetectionError::Alpha(alpha));
    }
    if walk.n() != scores.e.len() {
        return Err(DetectionError::Length {
            what: "energy vector",
            expected: walk.n(),
            got: scores.e.len(),
        });
    }
    let mut e = scores.e.clone();
    for _ in 0..k {
        let mixed = walk.mul_vec(&e);
        e = (0..e.len())
            .map(|i| {
                let neighbor = if walk.row(i).next().is_some() {
                    mixed[i]
                } else {
                    e[i]
                };
                alpha * e[i] + (1.0 - alpha) * neighbor
            })
            .collect();
    }
    Ok(EnergyScores {
        e,
        propagated: true,
        k: scores.k + k,
        alpha,
    })
}

/// `-max_c softmax(logits_i)_c`.
pub fn msp_score(logits: &Tensor) -> Vec<f64> {
    softmax_rows(logits)
        .iter_rows()
        .map(|r| -r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Shannon entropy (nats) of each row's softmax.
pub fn predictive_entropy(logits: &Tensor) -> Vec<f64> {
    softmax_rows(logits)
        .iter_rows()
        .map(|r| {
            -r.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

/// OOD iff `score >= tau`.
pub fn classify_ood(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= tau).collect()
}
