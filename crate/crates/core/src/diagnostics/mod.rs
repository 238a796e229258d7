//! Analytics behind the learner and sample views: agreement, confidence histograms,
//! influence, shot coverage, clustering, projection and weight adjustment.

mod cluster;
mod tsne;

pub use cluster::{average_linkage, cluster_classes, cluster_learners, class_features, ClusterTree, Merge};
pub use tsne::{project_samples, tsne, Projection2D, TsneConfig};

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ensemble::{argmax, argmaxes, ensemble_predict, margins};
use crate::error::{Error, Result};
use crate::session::{EditCommand, Session};

pub const INFLUENCE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_COVERAGE_K: usize = 20;
pub const HISTOGRAM_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassAgreement {
    pub learner_only: usize,
    pub both: usize,
    pub ensemble_only: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub overall_diff: usize,
    pub per_class: Vec<ClassAgreement>,
}

/// Per-class counts of samples assigned to each class by the learner only, by both, or by the
/// ensemble only. Argmax ties go to the lowest class.
pub fn agreement(learner: &Array2<f64>, ensemble: &Array2<f64>) -> Result<Agreement> {
    if learner.dim() != ensemble.dim() {
        return Err(Error::InvalidArgument("prediction shapes differ".into()));
    }
    let mut per_class = vec![ClassAgreement::default(); learner.ncols()];
    let mut overall_diff = 0;
    for (a, b) in argmaxes(learner).into_iter().zip(argmaxes(ensemble)) {
        if a == b {
            per_class[a].both += 1;
        } else {
            overall_diff += 1;
            per_class[a].learner_only += 1;
            per_class[b].ensemble_only += 1;
        }
    }
    Ok(Agreement {
        overall_diff,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerAgreement {
    pub learner: String,
    #[serde(flatten)]
    pub agreement: Agreement,
}

/// Agreement of every selected learner with the current ensemble.
pub fn agreement_breakdown(session: &Session) -> Result<Vec<LearnerAgreement>> {
    let table = session.predictions()?;
    session
        .selected_indices()
        .into_iter()
        .map(|k| {
            Ok(LearnerAgreement {
                learner: session.learners()[k].id.clone(),
                agreement: agreement(&table.per_learner[k], &table.ensemble)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    /// Bins `[0, .25)`, `[.25, .5)`, `[.5, .75)`, `[.75, 1]` over margins.
    pub counts: [usize; HISTOGRAM_BINS],
}

fn margin_bin(m: f64) -> usize {
    ((m * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Margin histogram of the samples a predictor assigns to `class`.
pub fn confidence_histogram(pred: &Array2<f64>, class: usize) -> ConfidenceHistogram {
    let mut counts = [0; HISTOGRAM_BINS];
    for (row, m) in pred.rows().into_iter().zip(margins(pred)) {
        if argmax(row) == class {
            counts[margin_bin(m)] += 1;
        }
    }
    ConfidenceHistogram { counts }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramPair {
    pub learner: ConfidenceHistogram,
    pub ensemble: ConfidenceHistogram,
}

pub fn histogram_pair(session: &Session, learner_id: &str, class: usize) -> Result<HistogramPair> {
    let k = session.learner_index(learner_id)?;
    if class >= session.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "class",
            index: class,
            limit: session.num_classes(),
        });
    }
    let table = session.predictions()?;
    Ok(HistogramPair {
        learner: confidence_histogram(&table.per_learner[k], class),
        ensemble: confidence_histogram(&table.ensemble, class),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMode {
    /// The learner is selected; the comparison removes it.
    LeaveOneOut,
    /// The learner is not selected; the comparison adds it at weight 1.
    AddOneIn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceReport {
    pub learner: String,
    pub mode: InfluenceMode,
    /// `margin(with learner) - margin(without learner)` per sample.
    pub deltas: Vec<f64>,
    pub up: Vec<usize>,
    pub down: Vec<usize>,
}

impl InfluenceReport {
    fn from_margins(learner: String, mode: InfluenceMode, with: Array1<f64>, without: Array1<f64>) -> Self {
        let deltas: Vec<f64> = with.iter().zip(&without).map(|(a, b)| a - b).collect();
        let up = (0..deltas.len()).filter(|&i| deltas[i] >= INFLUENCE_THRESHOLD).collect();
        let down = (0..deltas.len()).filter(|&i| deltas[i] <= -INFLUENCE_THRESHOLD).collect();
        InfluenceReport {
            learner,
            mode,
            deltas,
            up,
            down,
        }
    }
}

/// Ensemble over the selected learners other than `skip`, with the current weights.
fn ensemble_without(session: &Session, per_learner: &[Array2<f64>], skip: usize) -> Result<Array2<f64>> {
    ensemble_predict(
        session
            .selected_indices()
            .into_iter()
            .filter(|&k| k != skip)
            .map(|k| (per_learner[k].view(), session.learners()[k].weight)),
    )
}

pub fn learner_influence(session: &Session, learner_id: &str) -> Result<InfluenceReport> {
    let k = session.learner_index(learner_id)?;
    let table = session.predictions()?;
    let selected = session.selected_indices();
    if session.learners()[k].selected {
        if selected.len() == 1 {
            return Err(Error::SoleLearner(learner_id.to_string()));
        }
        let without = ensemble_without(session, &table.per_learner, k)?;
        Ok(InfluenceReport::from_margins(
            learner_id.to_string(),
            InfluenceMode::LeaveOneOut,
            table.ensemble_margins.clone(),
            margins(&without),
        ))
    } else {
        let with = ensemble_predict(
            selected
                .iter()
                .map(|&j| (table.per_learner[j].view(), session.learners()[j].weight))
                .chain(std::iter::once((table.per_learner[k].view(), 1.0))),
        )?;
        Ok(InfluenceReport::from_margins(
            learner_id.to_string(),
            InfluenceMode::AddOneIn,
            margins(&with),
            table.ensemble_margins.clone(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub sample: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub shot: usize,
    /// Most similar unlabeled samples, descending; ties by ascending index.
    pub neighbors: Vec<Neighbor>,
}

/// Unlabeled samples most similar to a shot, where similarity is one minus the cosine
/// distance averaged over the selected learners.
pub fn shot_coverage(session: &Session, shot: usize, k: usize) -> Result<CoverageReport> {
    if !session.shots().contains(shot) {
        return Err(Error::InvalidArgument(format!("sample {shot} is not a shot")));
    }
    let features = session.selected_features();
    if features.is_empty() {
        return Err(Error::NoSelectedLearners);
    }
    let scale = 1.0 / features.len() as f64;
    let mut neighbors: Vec<Neighbor> = (0..session.num_samples())
        .filter(|&j| !session.shots().contains(j))
        .map(|j| {
            let d: f64 = features
                .iter()
                .map(|f| (1.0 - f.row(shot).dot(&f.row(j))) * scale)
                .sum();
            Neighbor {
                sample: j,
                similarity: 1.0 - d.clamp(0.0, 2.0),
            }
        })
        .collect();
    neighbors.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.sample.cmp(&b.sample)));
    neighbors.truncate(k);
    Ok(CoverageReport { shot, neighbors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    fn as_str(self) -> &'static str {
        match self {
            Direction::Increase => "up",
            Direction::Decrease => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightGrid {
    pub max: f64,
    pub step: f64,
}

impl Default for WeightGrid {
    fn default() -> Self {
        WeightGrid { max: 5.0, step: 0.1 }
    }
}

impl WeightGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.max >= 0.0 && self.max.is_finite()) {
            return Err(Error::InvalidArgument("weight grid needs step > 0 and max >= 0".into()));
        }
        let n = (self.max / self.step + 1e-9).floor() as usize;
        // Round to kill 0.30000000000000004 style drift.
        Ok((0..=n)
            .map(|t| (t as f64 * self.step * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSearch {
    pub previous_weight: f64,
    pub new_weight: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    /// False when no candidate in the direction beat the current weight. The weight moves on
    /// a tie and stays put when every candidate scores lower.
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightAdjustment {
    pub learner: String,
    pub direction: Direction,
    #[serde(flatten)]
    pub search: WeightSearch,
}

/// Fraction of S1 matching the targets plus fraction of S2 keeping its previous prediction.
/// An empty S2 contributes 0.
fn adjust_objective(
    pred: &[usize],
    targets: &[usize],
    previous: &[usize],
    s1: &[usize],
    s2: &[usize],
) -> f64 {
    let hit1 = s1.iter().filter(|&&j| pred[j] == targets[j]).count();
    let hit2 = s2.iter().filter(|&&j| pred[j] == previous[j]).count();
    let t2 = if s2.is_empty() {
        0.0
    } else {
        hit2 as f64 / s2.len() as f64
    };
    hit1 as f64 / s1.len() as f64 + t2
}

/// Grid search over member `k`'s weight in an ensemble of `members` (prediction, weight).
pub fn weight_search(
    members: &[(ArrayView2<'_, f64>, f64)],
    k: usize,
    direction: Direction,
    selection: &[usize],
    grid: &WeightGrid,
) -> Result<WeightSearch> {
    let Some(&(own, current)) = members.get(k) else {
        return Err(Error::IndexOutOfRange {
            what: "ensemble member",
            index: k,
            limit: members.len(),
        });
    };
    let n = own.nrows();
    let s1: BTreeSet<usize> = selection.iter().copied().collect();
    if s1.is_empty() {
        return Err(Error::InvalidArgument("selection is empty".into()));
    }
    if let Some(&bad) = s1.iter().find(|&&j| j >= n) {
        return Err(Error::IndexOutOfRange {
            what: "sample",
            index: bad,
            limit: n,
        });
    }
    let candidates: Vec<f64> = grid
        .values()?
        .into_iter()
        .filter(|&w| match direction {
            Direction::Increase => w > current,
            Direction::Decrease => w < current,
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::InfeasibleDirection {
            direction: direction.as_str(),
            weight: current,
        });
    }

    let with_weight = |w: f64| {
        ensemble_predict(
            members
                .iter()
                .enumerate()
                .map(|(j, &(p, wj))| (p, if j == k { w } else { wj })),
        )
    };
    let previous = argmaxes(&with_weight(current)?);
    let targets = match direction {
        Direction::Increase => argmaxes(&own.to_owned()),
        Direction::Decrease => {
            if members.len() == 1 {
                return Err(Error::SoleLearner(format!("member {k}")));
            }
            argmaxes(&ensemble_predict(
                members
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &m)| m),
            )?)
        }
    };
    let s1: Vec<usize> = s1.into_iter().collect();
    let s2: Vec<usize> = (0..n).filter(|j| s1.binary_search(j).is_err()).collect();
    let before = adjust_objective(&previous, &targets, &previous, &s1, &s2);

    let mut best: Option<(f64, f64)> = None;
    for &w in &candidates {
        let pred = match with_weight(w) {
            Ok(p) => p,
            // Every weight zero: this candidate has no ensemble to score.
            Err(Error::ZeroWeights) => continue,
            Err(e) => return Err(e),
        };
        let score = adjust_objective(&argmaxes(&pred), &targets, &previous, &s1, &s2);
        let closer = |b: f64| (w - current).abs() < (b - current).abs();
        best = match best {
            Some((bs, bw)) if bs > score || (bs == score && !closer(bw)) => Some((bs, bw)),
            _ => Some((score, w)),
        };
    }
    let Some((score, w)) = best else {
        return Err(Error::InfeasibleDirection {
            direction: direction.as_str(),
            weight: current,
        });
    };
    let (new_weight, after) = if score >= before { (w, score) } else { (current, before) };
    Ok(WeightSearch {
        previous_weight: current,
        new_weight,
        objective_before: before,
        objective_after: after,
        improved: score > before,
    })
}

/// Searches the weight grid in `direction` without touching the session.
pub fn evaluate_weight_adjustment(
    session: &Session,
    learner_id: &str,
    direction: Direction,
    selection: &[usize],
    grid: &WeightGrid,
) -> Result<WeightAdjustment> {
    let k = session.learner_index(learner_id)?;
    if !session.learners()[k].selected {
        return Err(Error::InvalidArgument(format!(
            "learner `{learner_id}` is not selected"
        )));
    }
    let table = session.predictions()?;
    let selected = session.selected_indices();
    let members: Vec<_> = selected
        .iter()
        .map(|&j| (table.per_learner[j].view(), session.learners()[j].weight))
        .collect();
    let pos = selected.iter().position(|&j| j == k).expect("selected");
    let search = weight_search(&members, pos, direction, selection, grid).map_err(|e| match e {
        Error::SoleLearner(_) => Error::SoleLearner(learner_id.to_string()),
        e => e,
    })?;
    Ok(WeightAdjustment {
        learner: learner_id.to_string(),
        direction,
        search,
    })
}

/// Runs [`evaluate_weight_adjustment`] and applies the result as a `set_weight` edit when the
/// weight changes.
pub fn adjust_weight(
    session: &mut Session,
    learner_id: &str,
    direction: Direction,
    selection: &[usize],
    grid: &WeightGrid,
) -> Result<WeightAdjustment> {
    let adj = evaluate_weight_adjustment(session, learner_id, direction, selection, grid)?;
    if adj.search.new_weight != adj.search.previous_weight {
        session.apply_edit(EditCommand::SetWeight {
            id: learner_id.to_string(),
            weight: adj.search.new_weight,
        })?;
    }
    Ok(adj)
}

#[cfg(test)]
mod tests;
