//! Seeded synthetic learner pools with known good/bad learners and known bad shots.
//!
//! Samples are drawn from Gaussian clusters (one per class). Every learner is a random linear
//! projection of the true features; corrupted learners additionally have their rows permuted
//! across samples, so their features carry no information about the sample. The shot set holds
//! a few correctly labeled samples per class plus some deliberately mislabeled ones.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{
    Dataset, FeatureMatrix, GroundTruth, LearnerEntry, Manifest, RawFeatures, ShotEntry, ShotSet,
    MANIFEST_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_samples: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub learner_dim: usize,
    pub num_learners: usize,
    pub num_corrupted: usize,
    pub shots_per_class: usize,
    pub num_mislabeled: usize,
    /// Standard deviation of cluster centers per coordinate.
    pub center_scale: f64,
    /// Standard deviation of samples around their center per coordinate.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_samples: 500,
            num_classes: 5,
            input_dim: 32,
            learner_dim: 16,
            num_learners: 24,
            num_corrupted: 6,
            shots_per_class: 3,
            num_mislabeled: 2,
            center_scale: 1.0,
            noise: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPool {
    pub dataset: Dataset,
    pub labels: Vec<usize>,
    /// Indices of the corrupted learners, ascending.
    pub corrupted: Vec<usize>,
    /// Sample indices of the mislabeled shots, ascending.
    pub mislabeled: Vec<usize>,
    /// Feature matrices before normalization, as they would be written to disk.
    pub raw_features: Vec<RawFeatures>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticPool> {
    let c = config.num_classes;
    let n = config.num_samples;
    if c == 0 || n < c * (config.shots_per_class + 1) + config.num_mislabeled {
        return Err(Error::InvalidArgument("synthetic pool too small".into()));
    }
    if config.num_corrupted > config.num_learners || (config.num_mislabeled > 0 && c < 2) {
        return Err(Error::InvalidArgument("inconsistent synthetic config".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centers = Array2::from_shape_simple_fn((c, config.input_dim), || {
        config.center_scale * gaussian(&mut rng)
    });
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut x = Array2::<f64>::zeros((n, config.input_dim));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        for (d, v) in row.iter_mut().enumerate() {
            *v = centers[[labels[i], d]] + config.noise * gaussian(&mut rng);
        }
    }

    let mut learner_order: Vec<usize> = (0..config.num_learners).collect();
    learner_order.shuffle(&mut rng);
    let mut corrupted: Vec<usize> = learner_order[..config.num_corrupted].to_vec();
    corrupted.sort_unstable();

    let mut features = Vec::with_capacity(config.num_learners);
    let mut raw_features = Vec::with_capacity(config.num_learners);
    for k in 0..config.num_learners {
        let w = Array2::from_shape_simple_fn((config.input_dim, config.learner_dim), || {
            gaussian(&mut rng) / (config.input_dim as f64).sqrt()
        });
        let mut f = x.dot(&w);
        if corrupted.binary_search(&k).is_ok() {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            f = f.select(ndarray::Axis(0), &perm);
        }
        let raw = RawFeatures {
            rows: n,
            cols: config.learner_dim,
            data: f.iter().map(|&v| v as f32).collect(),
        };
        features.push(raw.normalize(Path::new("<synthetic>"))?);
        raw_features.push(raw);
    }

    let mut shots = ShotSet::new();
    for class in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for &s in members.iter().take(config.shots_per_class) {
            shots.insert(s, class)?;
        }
    }
    let mut mislabeled = Vec::new();
    while mislabeled.len() < config.num_mislabeled {
        let s = rng.random_range(0..n);
        if shots.contains(s) {
            continue;
        }
        let wrong = (labels[s] + rng.random_range(1..c)) % c;
        shots.insert(s, wrong)?;
        mislabeled.push(s);
    }
    mislabeled.sort_unstable();

    let dataset = Dataset::from_parts(
        (0..c).map(|k| format!("class-{k}")).collect(),
        (0..config.num_learners).map(|k| format!("learner-{k:02}")).collect(),
        features,
        shots,
        Some(GroundTruth::new(labels.iter().map(|&l| Some(l)).collect())),
    )?;
    Ok(SyntheticPool {
        dataset,
        labels,
        corrupted,
        mislabeled,
        raw_features,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SyntheticPool {
    /// Feature matrices re-normalized from the raw rows (identical to `dataset.features`).
    pub fn feature(&self, k: usize) -> &FeatureMatrix {
        &self.dataset.features[k]
    }

    /// Writes a manifest, feature files and ground truth into `dir`; returns the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut learners = Vec::new();
        for (k, raw) in self.raw_features.iter().enumerate() {
            let name = format!("{}.f32", self.dataset.learner_ids[k]);
            raw.write(dir.join(&name))?;
            learners.push(LearnerEntry {
                id: self.dataset.learner_ids[k].clone(),
                features: name,
                dim: raw.cols,
            });
        }
        let gt_path = dir.join("ground_truth.csv");
        GroundTruth::new(self.labels.iter().map(|&l| Some(l)).collect()).write_csv(&gt_path)?;
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            num_samples: self.dataset.num_samples,
            classes: self.dataset.class_names.clone(),
            learners,
            shots: self
                .dataset
                .initial_shots
                .iter()
                .map(|(sample, class)| ShotEntry { sample, class })
                .collect(),
            label_embeddings: None,
            ground_truth: Some("ground_truth.csv".into()),
            images: None,
            base_dir: dir.to_path_buf(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(io_err(&path))?;
        Ok(path)
    }
}
