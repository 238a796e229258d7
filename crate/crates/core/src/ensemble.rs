//! Prototype classifiers per learner and their weighted ensemble.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureMatrix, GroundTruth, ShotSet};

pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// Class prototypes of one learner: the normalized mean of each class's shot features.
/// Classes without shots have no prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    by_class: Vec<Option<Array1<f64>>>,
}

impl Prototypes {
    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn get(&self, class: usize) -> Option<&Array1<f64>> {
        self.by_class.get(class).and_then(Option::as_ref)
    }

    pub fn is_empty(&self) -> bool {
        self.by_class.iter().all(Option::is_none)
    }
}

pub fn class_prototypes(
    features: &FeatureMatrix,
    shots: &ShotSet,
    num_classes: usize,
) -> Result<Prototypes> {
    if shots.is_empty() {
        return Err(Error::EmptyShots);
    }
    let mut by_class = vec![None; num_classes];
    for class in shots.shotted_classes() {
        if class >= num_classes {
            return Err(Error::IndexOutOfRange {
                what: "shot class",
                index: class,
                limit: num_classes,
            });
        }
        let mut sum = Array1::<f64>::zeros(features.cols());
        for &s in shots.samples_of(class) {
            sum += &features.row(s);
        }
        let norm = sum.dot(&sum).sqrt();
        // Antipodal shots cancel out; fall back to the raw (zero) mean, which scores 0 everywhere.
        if norm > 0.0 {
            sum.mapv_inplace(|v| v / norm);
        }
        by_class[class] = Some(sum);
    }
    Ok(Prototypes { by_class })
}

/// Softmax over `temperature * cosine(sample, prototype)`, restricted to classes with prototypes.
pub fn learner_predict(
    features: &FeatureMatrix,
    prototypes: &Prototypes,
    temperature: f64,
) -> Result<Array2<f64>> {
    if prototypes.is_empty() {
        return Err(Error::EmptyShots);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = features.rows();
    let c = prototypes.num_classes();
    let mut out = Array2::<f64>::zeros((n, c));
    let active: Vec<(usize, &Array1<f64>)> = prototypes
        .by_class
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.as_ref().map(|p| (k, p)))
        .collect();
    let mut logits = vec![0.0; active.len()];
    for i in 0..n {
        let x = features.row(i);
        for (slot, (_, p)) in logits.iter_mut().zip(&active) {
            *slot = temperature * x.dot(*p);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for (l, (class, _)) in logits.iter().zip(&active) {
            out[[i, *class]] = l / total;
        }
    }
    Ok(out)
}

/// Normalized weighted mean `Σ w_k y_k / Σ w_k` of per-learner predictions.
pub fn ensemble_predict<'a, I>(members: I) -> Result<Array2<f64>>
where
    I: IntoIterator<Item = (ArrayView2<'a, f64>, f64)>,
{
    let mut acc: Option<Array2<f64>> = None;
    let mut total = 0.0;
    for (pred, w) in members {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid weight {w}")));
        }
        match acc.as_mut() {
            Some(a) => {
                if a.dim() != pred.dim() {
                    return Err(Error::InvalidArgument(
                        "prediction shapes differ across learners".into(),
                    ));
                }
                a.scaled_add(w, &pred);
            }
            None => acc = Some(pred.mapv(|v| v * w)),
        }
        total += w;
    }
    let mut acc = acc.ok_or(Error::NoSelectedLearners)?;
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    acc.mapv_inplace(|v| v / total);
    Ok(acc)
}

/// Index of the largest probability; ties go to the lowest class index.
pub fn argmax(dist: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in dist.iter().enumerate() {
        if v > dist[best] {
            best = k;
        }
    }
    best
}

/// Top-1 minus top-2 probability.
pub fn margin_confidence(dist: ArrayView1<'_, f64>) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in dist {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    if dist.len() < 2 {
        return 1.0;
    }
    (first - second).clamp(0.0, 1.0)
}

pub fn margins(pred: &Array2<f64>) -> Array1<f64> {
    pred.rows().into_iter().map(margin_confidence).collect()
}

pub fn argmaxes(pred: &Array2<f64>) -> Vec<usize> {
    pred.rows().into_iter().map(argmax).collect()
}

/// Fraction of labeled, non-excluded samples whose argmax equals the label.
pub fn accuracy_eval(
    predictions: &Array2<f64>,
    ground_truth: &GroundTruth,
    exclude: &ShotSet,
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (i, row) in predictions.rows().into_iter().enumerate() {
        if exclude.contains(i) {
            continue;
        }
        if let Some(label) = ground_truth.label(i) {
            total += 1;
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument(
            "no labeled non-shot samples to evaluate".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Every learner's predictions (selected or not) plus the current ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub per_learner: Vec<Array2<f64>>,
    /// K×N
    pub learner_margins: Array2<f64>,
    pub ensemble: Array2<f64>,
    pub ensemble_margins: Array1<f64>,
}

impl PredictionTable {
    pub fn new(per_learner: Vec<Array2<f64>>, ensemble: Array2<f64>) -> Self {
        let learner_margins = margin_matrix(&per_learner);
        let ensemble_margins = margins(&ensemble);
        PredictionTable {
            per_learner,
            learner_margins,
            ensemble,
            ensemble_margins,
        }
    }
}

/// K×N matrix of per-learner margins.
pub fn margin_matrix(per_learner: &[Array2<f64>]) -> Array2<f64> {
    let k = per_learner.len();
    let n = per_learner.first().map(|p| p.nrows()).unwrap_or(0);
    let mut m = Array2::<f64>::zeros((k, n));
    for (row, pred) in m.rows_mut().into_iter().zip(per_learner) {
        let mut row = row;
        row.assign(&margins(pred));
    }
    m
}
