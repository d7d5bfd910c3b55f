use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMixture;
use crate::error::{config_err, dim_err, domain_err, Result};
use crate::model::Matrix;

/// Sum over off-diagonal couplings (every condition) of the log marginal
/// posterior density at the true value.
pub fn coverage_log_density(post: &CouplingMixture, truth: &[Matrix]) -> Result<f64> {
    let m = post.nodes;
    if truth.len() != post.conditions || truth.iter().any(|a| a.shape() != (m, m)) {
        return Err(dim_err("ground truth does not match the posterior shape"));
    }
    let mut total = 0.0;
    for (c, a) in truth.iter().enumerate() {
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    total += post.entry_log_density(post.index(c, i, j), a[(i, j)]);
                }
            }
        }
    }
    if !total.is_finite() {
        return Err(domain_err(format!(
            "coverage log-density is not finite ({total})"
        )));
    }
    Ok(total)
}

/// Per-edge detection scores, labels and the ROC curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    /// `(false positive rate, true positive rate)` from the highest threshold down.
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-sample t statistic against zero; zero spread gives `+-inf` (or 0 for
/// an all-zero edge).
pub fn t_score(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(mean)
        };
    }
    mean / (var / n).sqrt()
}

/// Area under the ROC curve by the Mann-Whitney statistic with midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(dim_err("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(config_err("AUC needs both present and absent edges"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|l| **l).count().max(1) as f64;
    let neg = labels.iter().filter(|l| !**l).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp / neg, tp / pos));
    }
    pts
}

/// `subject_means[s][e]` is subject `s`'s posterior mean of edge `e`. Edges
/// are scored by the t statistic of the subject means; a logistic map of a
/// single score would not change the ranking, so the AUC is taken directly.
pub fn tscore_auc(subject_means: &[Vec<f64>], labels: &[bool]) -> Result<DetectionReport> {
    if subject_means.len() < 2 {
        return Err(config_err("t-scores need at least two subjects"));
    }
    if subject_means.iter().any(|s| s.len() != labels.len()) {
        return Err(dim_err("every subject needs one mean per labelled edge"));
    }
    let scores: Vec<f64> = (0..labels.len())
        .map(|e| t_score(&subject_means.iter().map(|s| s[e]).collect::<Vec<_>>()))
        .collect();
    let value = auc(&scores, labels)?;
    Ok(DetectionReport {
        roc: roc_points(&scores, labels),
        scores,
        labels: labels.to_vec(),
        auc: value,
    })
}

/// Outflow per node: outgoing minus incoming off-diagonal coefficients, with
/// `a[(target, source)]` the coupling from `source` to `target`.
pub fn directed_outflow(a: &Matrix) -> Result<Vec<f64>> {
    let (r, c) = a.shape();
    if r != c {
        return Err(domain_err(format!(
            "outflow needs a square matrix, got {r}x{c}"
        )));
    }
    Ok((0..r)
        .map(|m1| {
            let out: f64 = (0..r).filter(|&m2| m2 != m1).map(|m2| a[(m2, m1)]).sum();
            let inc: f64 = (0..r).filter(|&m2| m2 != m1).map(|m2| a[(m1, m2)]).sum();
            out - inc
        })
        .collect())
}

/// Exact binomial sign test: probability of at least `wins` successes out of
/// `n` fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for k in wins..=n {
        total += binomial(n, k);
    }
    total / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
