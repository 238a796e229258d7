use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::session::Session;

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge `t` is `n + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterTree {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
    pub target_count: usize,
    /// Cluster of each item after the cut, numbered by first appearance.
    pub assignment: Vec<usize>,
}

impl ClusterTree {
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.target_count];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Average-linkage agglomeration of a symmetric distance matrix, cut at `target_count`.
/// Among equal linkage distances the pair with the smallest cluster ids merges first.
pub fn average_linkage(distances: &Array2<f64>, labels: Vec<String>, target_count: usize) -> Result<ClusterTree> {
    let n = distances.nrows();
    if distances.ncols() != n || labels.len() != n {
        return Err(Error::InvalidArgument("distance matrix must be square and labeled".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("nothing to cluster".into()));
    }
    if target_count == 0 || target_count > n {
        return Err(Error::InvalidArgument(format!(
            "target count must be in 1..={n}, got {target_count}"
        )));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("distance matrix"));
    }

    // Active clusters: id, members. Linkage between active clusters is kept in `link`.
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut link: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| distances[[a, b]]).collect())
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut assignment_at_cut = None;
    let mut last_height = f64::NEG_INFINITY;

    while active.len() > 1 {
        if active.len() == target_count {
            assignment_at_cut = Some(active.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>());
        }
        let mut best = (0, 1);
        for a in 0..active.len() {
            for b in (a + 1)..active.len() {
                if link[a][b] < link[best.0][best.1] {
                    best = (a, b);
                }
            }
        }
        let (a, b) = best;
        // Average linkage has no inversions; the max only absorbs one-ulp rounding.
        let height = link[a][b].max(last_height);
        last_height = height;
        let (na, nb) = (active[a].1.len() as f64, active[b].1.len() as f64);
        let merged_row: Vec<f64> = (0..active.len())
            .map(|c| (na * link[a][c] + nb * link[b][c]) / (na + nb))
            .collect();
        let mut members = active[a].1.clone();
        members.extend(&active[b].1);
        merges.push(Merge {
            left: active[a].0.min(active[b].0),
            right: active[a].0.max(active[b].0),
            height,
            size: members.len(),
        });
        let new_id = n + merges.len() - 1;

        // Replace a with the merged cluster, drop b.
        active[a] = (new_id, members);
        for c in 0..active.len() {
            link[a][c] = merged_row[c];
            link[c][a] = merged_row[c];
        }
        link[a][a] = 0.0;
        active.remove(b);
        link.remove(b);
        for row in link.iter_mut() {
            row.remove(b);
        }
    }
    let groups = assignment_at_cut.unwrap_or_else(|| vec![(0..n).collect()]);

    let mut assignment = vec![usize::MAX; n];
    let mut order: Vec<&Vec<usize>> = groups.iter().collect();
    order.sort_by_key(|g| g.iter().min().copied());
    for (c, g) in order.into_iter().enumerate() {
        for &i in g {
            assignment[i] = c;
        }
    }
    Ok(ClusterTree {
        labels,
        merges,
        target_count,
        assignment,
    })
}

/// Clusters learners with the cooperation matrix as the distance.
pub fn cluster_learners(cooperation: &Array2<f64>, labels: Vec<String>, target_count: usize) -> Result<ClusterTree> {
    average_linkage(cooperation, labels, target_count)
}

/// Class descriptors: the normalized shot mean in the concatenated selected-learner space,
/// followed by the normalized label embedding when present. A class with an embedding but
/// no shots gets a zero shot block.
pub fn class_features(session: &Session) -> Result<Array2<f64>> {
    let features = session.selected_features();
    if features.is_empty() {
        return Err(Error::NoSelectedLearners);
    }
    let data = session.dataset();
    let shot_dim: usize = features.iter().map(|f| f.cols()).sum();
    let emb_dim = data.label_embeddings.as_ref().map_or(0, |e| e.cols());
    let c = session.num_classes();
    let mut out = Array2::<f64>::zeros((c, shot_dim + emb_dim));
    for class in 0..c {
        let samples = session.shots().samples_of(class);
        if samples.is_empty() && data.label_embeddings.is_none() {
            return Err(Error::InvalidArgument(format!(
                "class {class} has neither shots nor a label embedding"
            )));
        }
        let mut mean = Array1::<f64>::zeros(shot_dim);
        for &s in samples {
            let mut offset = 0;
            for f in &features {
                let mut block = mean.slice_mut(ndarray::s![offset..offset + f.cols()]);
                block += &f.row(s);
                offset += f.cols();
            }
        }
        let norm = mean.dot(&mean).sqrt();
        if norm > 0.0 {
            mean /= norm;
        }
        out.row_mut(class).slice_mut(ndarray::s![..shot_dim]).assign(&mean);
        if let Some(emb) = &data.label_embeddings {
            // Rows are already unit length.
            out.row_mut(class).slice_mut(ndarray::s![shot_dim..]).assign(&emb.row(class));
        }
    }
    Ok(out)
}

fn euclidean_matrix(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in (a + 1)..n {
            let diff = &x.row(a) - &x.row(b);
            let v = diff.dot(&diff).sqrt();
            d[[a, b]] = v;
            d[[b, a]] = v;
        }
    }
    d
}

/// Clusters class descriptors (see [`class_features`]) by Euclidean distance.
pub fn cluster_classes(class_features: &Array2<f64>, labels: Vec<String>, target_count: usize) -> Result<ClusterTree> {
    average_linkage(&euclidean_matrix(class_features), labels, target_count)
}
