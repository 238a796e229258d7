//! Exact t-SNE with PCA initialization.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplePlan;
use crate::session::Session;

pub const TSNE_METHOD: &str = "tsne-exact";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    /// Upper bound; the effective perplexity is `min(max_perplexity, (n - 1) / 3)`.
    pub max_perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            max_perplexity: 30.0,
            iterations: 500,
            exaggeration: 12.0,
            exaggeration_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection2D {
    pub sample_indices: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub seed: u64,
    pub method: &'static str,
    pub perplexity: f64,
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in (a + 1)..n {
            let diff = &x.row(a) - &x.row(b);
            let v = diff.dot(&diff);
            d[[a, b]] = v;
            d[[b, a]] = v;
        }
    }
    d
}

/// Conditional affinities with a per-row bandwidth matched to the perplexity by bisection.
fn conditional_affinities(d2: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        // Shift by the nearest neighbor so exp() cannot underflow the whole row.
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[[i, j]])
            .fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d2[[i, j]] - dmin) * beta).exp() };
                sum += row[j];
                dot += row[j] * (d2[[i, j]] - dmin);
            }
            let entropy = sum.ln() + beta * dot / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[[i, j]] = row[j] / sum;
        }
    }
    p
}

/// Top-two principal components by power iteration with deflation; each component's sign is
/// fixed so its largest-magnitude loading is positive.
fn pca2(x: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let centered = x - &x.mean_axis(Axis(0)).expect("nonempty");
    let cov = centered.t().dot(&centered);
    let dim = cov.nrows();
    let mut comps: Vec<Array1<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v = Array1::from_iter((0..dim).map(|_| rng.random::<f64>() - 0.5));
        for _ in 0..300 {
            let mut next = cov.dot(&v);
            for c in &comps {
                let proj = next.dot(c);
                next.scaled_add(-proj, c);
            }
            let norm = next.dot(&next).sqrt();
            if norm < 1e-300 {
                break;
            }
            next /= norm;
            let delta = (&next - &v).mapv(f64::abs).sum();
            v = next;
            if delta < 1e-12 {
                break;
            }
        }
        let pivot = v.iter().cloned().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.mapv_inplace(|e| -e);
        }
        comps.push(v);
    }
    let mut y = Array2::<f64>::zeros((x.nrows(), 2));
    for (c, comp) in comps.iter().enumerate() {
        y.column_mut(c).assign(&centered.dot(comp));
    }
    y
}

/// Embeds the rows of `x` in 2-D. Deterministic for a fixed seed.
pub fn tsne(x: &Array2<f64>, config: &TsneConfig, seed: u64) -> Result<(Array2<f64>, f64)> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "projection needs at least 4 samples, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    let perplexity = config.max_perplexity.min((n as f64 - 1.0) / 3.0);
    let cond = conditional_affinities(&squared_distances(x), perplexity);
    let mut p = &cond + &cond.t();
    let total = p.sum();
    p.mapv_inplace(|v| (v / total).max(1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = pca2(x, &mut rng);
    let std0 = y.column(0).std(0.0);
    let scale = if std0 > 0.0 { 1e-4 / std0 } else { 1.0 };
    y.mapv_inplace(|v| v * scale);
    if std0 == 0.0 {
        // Degenerate input: start from a tiny seeded jitter instead.
        y.mapv_inplace(|_| (rng.random::<f64>() - 0.5) * 1e-4);
    }

    let learning_rate = (n as f64 / config.exaggeration / 4.0).max(50.0);
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, 2));
    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut qsum = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                let dy0 = y[[a, 0]] - y[[b, 0]];
                let dy1 = y[[a, 1]] - y[[b, 1]];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[a, b]] = v;
                num[[b, a]] = v;
                qsum += 2.0 * v;
            }
        }
        grad.fill(0.0);
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let q = (num[[a, b]] / qsum).max(1e-12);
                let coef = 4.0 * (exag * p[[a, b]] - q) * num[[a, b]];
                grad[[a, 0]] += coef * (y[[a, 0]] - y[[b, 0]]);
                grad[[a, 1]] += coef * (y[[a, 1]] - y[[b, 1]]);
            }
        }
        for idx in 0..n * 2 {
            let (a, c) = (idx / 2, idx % 2);
            let g = grad[[a, c]];
            let same_sign = (g > 0.0) == (update[[a, c]] > 0.0);
            gains[[a, c]] = if same_sign { gains[[a, c]] * 0.8 } else { gains[[a, c]] + 0.2 };
            gains[[a, c]] = gains[[a, c]].max(0.01);
            update[[a, c]] = momentum * update[[a, c]] - learning_rate * gains[[a, c]] * g;
            y[[a, c]] += update[[a, c]];
        }
        let mean = y.mean_axis(Axis(0)).expect("nonempty");
        y -= &mean;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection output"));
    }
    Ok((y, perplexity))
}

/// t-SNE over the plan's samples in the concatenated selected-learner feature space.
pub fn project_samples(session: &Session, plan: &SamplePlan, config: &TsneConfig) -> Result<Projection2D> {
    let features = session.selected_features();
    if features.is_empty() {
        return Err(Error::NoSelectedLearners);
    }
    let dim: usize = features.iter().map(|f| f.cols()).sum();
    let mut x = Array2::<f64>::zeros((plan.indices.len(), dim));
    for (r, &i) in plan.indices.iter().enumerate() {
        let mut offset = 0;
        for f in &features {
            x.row_mut(r)
                .slice_mut(ndarray::s![offset..offset + f.cols()])
                .assign(&f.row(i));
            offset += f.cols();
        }
    }
    let (y, perplexity) = tsne(&x, config, plan.seed)?;
    Ok(Projection2D {
        sample_indices: plan.indices.clone(),
        coords: y.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        seed: plan.seed,
        method: TSNE_METHOD,
        perplexity,
    })
}
