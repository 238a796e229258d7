#![allow(dead_code)]

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use fsdiag_core::feature_store::{Dataset, FeatureMatrix, ShotSet};
use fsdiag_core::session::Session;
use fsdiag_core::solver::SelectionProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform distances and weights in [0, 1); optional symmetric zero-diagonal penalty.
pub fn random_problem(seed: u64, rows: usize, cols: usize, pairwise: bool) -> SelectionProblem {
    let mut r = rng(seed);
    let d = Array2::from_shape_fn((rows, cols), |_| r.random::<f64>());
    let w = Array1::from_shape_fn(rows, |_| r.random::<f64>());
    let p = pairwise.then(|| {
        let mut p = Array2::zeros((rows, rows));
        for a in 0..rows {
            for b in a + 1..rows {
                let v = 0.2 * r.random::<f64>();
                p[[a, b]] = v;
                p[[b, a]] = v;
            }
        }
        p
    });
    SelectionProblem::new(d, w, p).unwrap()
}

pub fn gaussian_rows(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(r))
}

pub fn unit_rows(mut x: Array2<f64>) -> FeatureMatrix {
    for mut row in x.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    FeatureMatrix::from_rows(x).unwrap()
}

/// Small random session: `learners` random feature spaces over `n` samples, one shot per class.
pub fn random_session(seed: u64, n: usize, classes: usize, learners: usize, dim: usize) -> Session {
    let mut r = rng(seed);
    let features = (0..learners).map(|_| unit_rows(gaussian_rows(&mut r, n, dim))).collect();
    let shots = ShotSet::from_entries((0..classes).map(|c| (c, c))).unwrap();
    let data = Dataset::from_parts(
        (0..classes).map(|c| format!("c{c}")).collect(),
        (0..learners).map(|k| format!("l{k}")).collect(),
        features,
        shots,
        None,
    )
    .unwrap();
    Session::new(Arc::new(data), seed).unwrap()
}

/// Random row-stochastic matrix.
pub fn random_distributions(r: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    let mut y = Array2::from_shape_fn((n, c), |_| r.random::<f64>() + 1e-3);
    for mut row in y.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

fn scalar_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..row.len() {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

/// Per-sample argmax of the weighted mean, by plain loops. `None` when all weights are zero.
pub fn scalar_ensemble_argmax(members: &[(Array2<f64>, f64)]) -> Option<Vec<usize>> {
    let total: f64 = members.iter().map(|m| m.1).sum();
    if total <= 0.0 {
        return None;
    }
    let (n, c) = members[0].0.dim();
    Some(
        (0..n)
            .map(|i| {
                let row: Vec<f64> = (0..c)
                    .map(|j| members.iter().map(|(y, w)| w * y[[i, j]]).sum::<f64>() / total)
                    .collect();
                scalar_argmax(&row)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy)]
pub struct GridChoice {
    pub weight: f64,
    pub before: f64,
    pub after: f64,
}

/// Enumerates every grid weight for member `k` and scores the adjustment objective.
pub fn adjust_oracle(
    members: &[(Array2<f64>, f64)],
    k: usize,
    increase: bool,
    selection: &[usize],
    grid: &[f64],
) -> Option<GridChoice> {
    let current = members[k].1;
    let n = members[0].0.nrows();
    let with = |w: f64| {
        let mut m = members.to_vec();
        m[k].1 = w;
        scalar_ensemble_argmax(&m)
    };
    let previous = with(current)?;
    let targets: Vec<usize> = if increase {
        scalar_ensemble_argmax(&[(members[k].0.clone(), 1.0)])?
    } else {
        let rest: Vec<_> = members.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, m)| m.clone()).collect();
        if rest.is_empty() {
            return None;
        }
        scalar_ensemble_argmax(&rest)?
    };
    let s2: Vec<usize> = (0..n).filter(|j| !selection.contains(j)).collect();
    let score = |pred: &[usize]| {
        let t1 = selection.iter().filter(|&&j| pred[j] == targets[j]).count() as f64 / selection.len() as f64;
        let t2 = if s2.is_empty() {
            0.0
        } else {
            s2.iter().filter(|&&j| pred[j] == previous[j]).count() as f64 / s2.len() as f64
        };
        t1 + t2
    };
    let before = score(&previous);
    let mut scored: Vec<(f64, f64)> = grid
        .iter()
        .filter(|&&w| if increase { w > current } else { w < current })
        .filter_map(|&w| with(w).map(|p| (w, score(&p))))
        .collect();
    if scored.is_empty() {
        return None;
    }
    let top = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scored.retain(|s| s.1 == top);
    scored.sort_by(|a, b| (a.0 - current).abs().partial_cmp(&(b.0 - current).abs()).unwrap());
    let best = scored[0].0;
    Some(if top >= before {
        GridChoice { weight: best, before, after: top }
    } else {
        GridChoice { weight: current, before, after: before }
    })
}

/// Lloyd's k-means with k-means++ seeding; returns labels.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let n = x.nrows();
    let dist2 = |a: usize, c: &Array1<f64>| {
        let d = &x.row(a) - c;
        d.dot(&d)
    };
    let mut centers = vec![x.row(r.random_range(0..n)).to_owned()];
    while centers.len() < k {
        let d: Vec<f64> = (0..n)
            .map(|i| centers.iter().map(|c| dist2(i, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let mut pick = r.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, v) in d.iter().enumerate() {
            if pick < *v {
                chosen = i;
                break;
            }
            pick -= v;
        }
        centers.push(x.row(chosen).to_owned());
    }
    let mut labels = vec![0; n];
    for _ in 0..100 {
        let next: Vec<usize> = (0..n)
            .map(|i| {
                (0..k)
                    .min_by(|&a, &b| dist2(i, &centers[a]).partial_cmp(&dist2(i, &centers[b])).unwrap())
                    .unwrap()
            })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if !members.is_empty() {
                let mut m = Array1::zeros(x.ncols());
                for &i in &members {
                    m += &x.row(i);
                }
                *center = m / members.len() as f64;
            }
        }
    }
    labels
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(clusters: &[usize], truth: &[usize]) -> f64 {
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let t = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; t]; k];
    for (&c, &l) in clusters.iter().zip(truth) {
        counts[c][l] += 1;
    }
    counts.iter().map(|row| row.iter().max().copied().unwrap_or(0)).sum::<usize>() as f64 / truth.len() as f64
}
