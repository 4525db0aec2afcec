//! Per-sample selection scores for a forward-passed candidate pool.
//!
//! The minimal margin score of sample `k` is the length of the smallest
//! feature-space displacement that makes its two highest class scores equal:
//!
//! ```text
//! d_k = (s_k[i1] - s_k[i2]) / ||w[i1] - w[i2]||
//! ```
//!
//! where `i1`, `i2` are the best and runner-up classes. Biases enter through
//! the scores `s` but cancel out of the boundary normal, so only weight rows
//! appear in the denominator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_labels, cross_entropy, ForwardResult, LinearHead};
use crate::numerics::{self, softmax_unchecked, Vector};

/// Which end of the score range a strategy trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Smallest,
    Largest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPool {
    pub scores: Vector,
    pub predicted: Vec<usize>,
    /// Best and runner-up class per sample.
    pub top2: Vec<(usize, usize)>,
    pub direction: Direction,
}

impl ScoredPool {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Best and runner-up indices of `logits`; the lower index wins ties.
///
/// Panics on fewer than two entries.
pub fn top_two(logits: &[f64]) -> (usize, usize) {
    assert!(logits.len() >= 2, "top_two needs at least two scores");
    let (mut first, mut second) = if logits[1] > logits[0] { (1, 0) } else { (0, 1) };
    for (j, &v) in logits.iter().enumerate().skip(2) {
        if v > logits[first] {
            second = first;
            first = j;
        } else if v > logits[second] {
            second = j;
        }
    }
    (first, second)
}

fn check_pool(fr: &ForwardResult) -> Result<()> {
    if fr.n_classes() < 2 {
        return Err(Error::shape("scoring", "need at least two classes"));
    }
    if !fr.logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

fn top2_all(fr: &ForwardResult) -> Vec<(usize, usize)> {
    fr.logits.row_iter().map(top_two).collect()
}

/// Minimal margin score of every pool sample. Smaller means less confident.
///
/// When the two top weight rows coincide the boundary is degenerate: the
/// score is `0` if their logits are also equal (the sample sits on a boundary
/// that is everywhere) and `+inf` otherwise (no feature displacement can make
/// the scores meet).
pub fn mms_scores(fr: &ForwardResult, head: &LinearHead) -> Result<ScoredPool> {
    check_pool(fr)?;
    if fr.n_classes() != head.n_classes() || fr.features.cols() != head.feat_dim() {
        return Err(Error::shape(
            "mms_scores",
            format!(
                "pool has {} classes / {} features, head has {} / {}",
                fr.n_classes(),
                fr.features.cols(),
                head.n_classes(),
                head.feat_dim()
            ),
        ));
    }

    let top2 = top2_all(fr);
    let mut degenerate = 0usize;
    let scores = fr
        .logits
        .row_iter()
        .zip(&top2)
        .map(|(logits, &(i1, i2))| {
            let gap = logits[i1] - logits[i2];
            let normal = weight_gap_norm(head, i1, i2);
            if normal == 0.0 {
                degenerate += 1;
                if gap == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                gap / normal
            }
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} pool samples have identical top-two weight rows");
    }

    Ok(ScoredPool {
        scores,
        predicted: top2.iter().map(|&(i1, _)| i1).collect(),
        top2,
        direction: Direction::Smallest,
    })
}

fn weight_gap_norm(head: &LinearHead, i1: usize, i2: usize) -> f64 {
    let w1 = head.weights.row(i1);
    let w2 = head.weights.row(i2);
    w1.iter()
        .zip(w2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Least-norm displacement `dy` with `f_i1(y + dy) = f_i2(y + dy)`:
///
/// ```text
/// dy = -(s[i1] - s[i2]) (w[i1] - w[i2]) / ||w[i1] - w[i2]||^2
/// ```
pub fn boundary_displacement(y: &[f64], head: &LinearHead, i1: usize, i2: usize) -> Result<Vector> {
    if y.len() != head.feat_dim() {
        return Err(Error::shape(
            "boundary_displacement",
            format!("feature length {} vs head width {}", y.len(), head.feat_dim()),
        ));
    }
    if i1 >= head.n_classes() || i2 >= head.n_classes() {
        return Err(Error::shape("boundary_displacement", "class index out of range"));
    }
    let diff: Vec<f64> = head
        .weights
        .row(i1)
        .iter()
        .zip(head.weights.row(i2))
        .map(|(a, b)| a - b)
        .collect();
    let sq_norm = numerics::dot(&diff, &diff);
    if sq_norm == 0.0 {
        return Err(Error::DegenerateBoundary { i1, i2 });
    }
    let gap = numerics::dot(&diff, y) + head.biases[i1] - head.biases[i2];
    Ok(diff.iter().map(|d| -gap * d / sq_norm).collect())
}

/// Per-sample cross-entropy against the true label; the hard-negative
/// baseline trains on the largest.
pub fn hnm_scores(fr: &ForwardResult, labels: &[usize]) -> Result<ScoredPool> {
    check_pool(fr)?;
    if labels.len() != fr.len() {
        return Err(Error::shape(
            "hnm_scores",
            format!("{} labels for {} samples", labels.len(), fr.len()),
        ));
    }
    check_labels(labels, fr.n_classes())?;
    let scores = fr
        .logits
        .row_iter()
        .zip(labels)
        .map(|(row, &label)| cross_entropy(row, label))
        .collect();
    Ok(with_top2(fr, scores, Direction::Largest))
}

/// Entropy of the predicted posterior, in nats; larger is less certain.
pub fn entropy_scores(fr: &ForwardResult) -> Result<ScoredPool> {
    check_pool(fr)?;
    let scores = fr.logits.row_iter().map(posterior_entropy).collect();
    Ok(with_top2(fr, scores, Direction::Largest))
}

fn posterior_entropy(logits: &[f64]) -> f64 {
    let h: f64 = softmax_unchecked(logits)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.clamp(0.0, (logits.len() as f64).ln())
}

fn with_top2(fr: &ForwardResult, scores: Vector, direction: Direction) -> ScoredPool {
    let top2 = top2_all(fr);
    ScoredPool {
        scores,
        predicted: top2.iter().map(|&(i1, _)| i1).collect(),
        top2,
        direction,
    }
}
