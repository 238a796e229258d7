//! Scalar quantities that feed the selection objectives and the evaluation tables.

use ndarray::{Array1, Array2, ArrayView1};

use crate::ensemble::margin_confidence;
use crate::error::{Error, Result};
use crate::feature_store::{FeatureMatrix, ShotSet};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-6;
pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.2;

/// `d_ki = 1 - m_ki`, elementwise.
pub fn learner_sample_distance(margins: &Array2<f64>) -> Array2<f64> {
    margins.mapv(|m| 1.0 - m)
}

/// Margins of the given learners restricted to a sample subset (K×|samples|).
pub fn margins_on(per_learner: &[Array2<f64>], samples: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((per_learner.len(), samples.len()));
    for (k, pred) in per_learner.iter().enumerate() {
        for (col, &i) in samples.iter().enumerate() {
            out[[k, col]] = margin_confidence(pred.row(i));
        }
    }
    out
}

/// Mean negative log-likelihood of each learner on the shots, probabilities floored at 1e-6.
pub fn learner_fitness(per_learner: &[Array2<f64>], shots: &ShotSet) -> Result<Array1<f64>> {
    if shots.is_empty() {
        return Err(Error::EmptyShots);
    }
    let m = shots.len() as f64;
    Ok(per_learner
        .iter()
        .map(|pred| {
            let nll: f64 = shots
                .iter()
                .map(|(s, c)| -pred[[s, c]].max(PROB_FLOOR).ln())
                .sum();
            nll / m
        })
        .collect())
}

fn floored(p: ArrayView1<'_, f64>, out: &mut Vec<f64>) {
    out.clear();
    out.extend(p.iter().map(|&v| v.max(PROB_FLOOR)));
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// Symmetric KL divergence averaged over `samples`:
/// `mu_kl = sum_i (KL(y_ki || y_li) + KL(y_li || y_ki)) / (2 n)`.
pub fn pairwise_cooperation(per_learner: &[Array2<f64>], samples: &[usize]) -> Array2<f64> {
    let k = per_learner.len();
    let mut mu = Array2::<f64>::zeros((k, k));
    if samples.is_empty() {
        return mu;
    }
    // Floor once per (learner, sample).
    let mut buf = Vec::new();
    let floored_preds: Vec<Vec<Vec<f64>>> = per_learner
        .iter()
        .map(|pred| {
            samples
                .iter()
                .map(|&i| {
                    floored(pred.row(i), &mut buf);
                    buf.clone()
                })
                .collect()
        })
        .collect();
    let n = samples.len() as f64;
    for a in 0..k {
        for b in (a + 1)..k {
            let total: f64 = floored_preds[a]
                .iter()
                .zip(&floored_preds[b])
                .map(|(p, q)| kl(p, q) + kl(q, p))
                .sum();
            let v = (total / (2.0 * n)).max(0.0);
            mu[[a, b]] = v;
            mu[[b, a]] = v;
        }
    }
    mu
}

/// Average cosine distance across the given learners' feature spaces, over `samples`.
pub fn sample_pairwise_distance(
    learners: &[&FeatureMatrix],
    samples: &[usize],
) -> Result<Array2<f64>> {
    if learners.is_empty() {
        return Err(Error::NoSelectedLearners);
    }
    let n = samples.len();
    let mut d = Array2::<f64>::zeros((n, n));
    let scale = 1.0 / learners.len() as f64;
    for f in learners {
        for a in 0..n {
            let xa = f.row(samples[a]);
            for b in (a + 1)..n {
                let v = (1.0 - xa.dot(&f.row(samples[b]))) * scale;
                d[[a, b]] += v;
            }
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let v = d[[a, b]].clamp(0.0, 2.0);
            d[[a, b]] = v;
            d[[b, a]] = v;
        }
    }
    Ok(d)
}

/// Jaccard index between learners' high-confidence sets `{i : m_ki > threshold}`.
/// Defined as 0 when both sets are empty.
pub fn jaccard_diversity(margins: &Array2<f64>, threshold: f64) -> Array2<f64> {
    let k = margins.nrows();
    let sets: Vec<Vec<bool>> = margins
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&m| m > threshold).collect())
        .collect();
    let mut out = Array2::<f64>::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&x, &y) in sets[a].iter().zip(&sets[b]) {
                inter += (x && y) as usize;
                union += (x || y) as usize;
            }
            let v = if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            };
            out[[a, b]] = v;
            out[[b, a]] = v;
        }
    }
    out
}

/// Mean over unordered member pairs; `None` with fewer than two members.
pub fn mean_pairwise(matrix: &Array2<f64>, members: &[usize]) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, &a) in members.iter().enumerate() {
        for &b in &members[x + 1..] {
            total += matrix[[a, b]];
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}
