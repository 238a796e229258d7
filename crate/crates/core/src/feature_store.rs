//! Loading and validation of the on-disk inputs: the JSON manifest, the `FSD1` feature files,
//! optional label embeddings and optional ground-truth labels.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FSD1";
const HEADER_LEN: usize = 12;
pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerEntry {
    pub id: String,
    pub features: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotEntry {
    pub sample: usize,
    pub class: usize,
}

/// The session manifest. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u64,
    pub num_samples: usize,
    pub classes: Vec<String>,
    pub learners: Vec<LearnerEntry>,
    pub shots: Vec<ShotEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_embeddings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks the structural invariants that do not need the filesystem.
    pub fn validate_structure(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        let mut seen = HashSet::new();
        for name in &self.classes {
            if !seen.insert(name.as_str()) {
                return Err(Error::Duplicate {
                    kind: "class name",
                    id: name.clone(),
                });
            }
        }
        let mut seen = HashSet::new();
        for l in &self.learners {
            if !seen.insert(l.id.as_str()) {
                return Err(Error::Duplicate {
                    kind: "learner id",
                    id: l.id.clone(),
                });
            }
            if l.dim == 0 {
                return Err(Error::InvalidArgument(format!(
                    "learner {} declares dim 0",
                    l.id
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.shots {
            if s.sample >= self.num_samples {
                return Err(Error::IndexOutOfRange {
                    what: "shot sample",
                    index: s.sample,
                    limit: self.num_samples,
                });
            }
            if s.class >= self.classes.len() {
                return Err(Error::IndexOutOfRange {
                    what: "shot class",
                    index: s.class,
                    limit: self.classes.len(),
                });
            }
            if !seen.insert(s.sample) {
                return Err(Error::Duplicate {
                    kind: "shot sample",
                    id: s.sample.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Parses and validates a manifest, including the headers of every referenced feature file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate_structure()?;

    for entry in &manifest.learners {
        let fpath = manifest.resolve(&entry.features);
        if !fpath.is_file() {
            return Err(Error::MissingFile {
                entry: format!("learner {}", entry.id),
                path: fpath,
            });
        }
        let (rows, cols) = read_header(&fpath)?;
        if cols != entry.dim {
            return Err(Error::DimMismatch {
                learner: entry.id.clone(),
                declared: entry.dim,
                found: cols,
            });
        }
        if rows != manifest.num_samples {
            return Err(Error::RowMismatch {
                what: format!("learner {}", entry.id),
                expected: manifest.num_samples,
                found: rows,
            });
        }
    }
    if let Some(rel) = &manifest.label_embeddings {
        let fpath = manifest.resolve(rel);
        if !fpath.is_file() {
            return Err(Error::MissingFile {
                entry: "label_embeddings".into(),
                path: fpath,
            });
        }
        let (rows, _) = read_header(&fpath)?;
        if rows != manifest.num_classes() {
            return Err(Error::RowMismatch {
                what: "label_embeddings".into(),
                expected: manifest.num_classes(),
                found: rows,
            });
        }
    }
    if let Some(rel) = &manifest.ground_truth {
        let fpath = manifest.resolve(rel);
        if !fpath.is_file() {
            return Err(Error::MissingFile {
                entry: "ground_truth".into(),
                path: fpath,
            });
        }
    }
    Ok(manifest)
}

fn read_header(path: &Path) -> Result<(usize, usize)> {
    let mut f = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        let n = f.read(&mut header[filled..]).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    if filled < 4 || &header[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if filled < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: filled,
        });
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

/// A feature file exactly as stored on disk, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl RawFeatures {
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        let expected = rows * cols * 4;
        if payload.len() < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: payload.len(),
            });
        }
        let data = payload[..expected]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RawFeatures { rows, cols, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Converts to an in-memory matrix with every row scaled to unit L2 norm.
    pub fn normalize(&self, path: &Path) -> Result<FeatureMatrix> {
        let mut data = Array2::<f64>::zeros((self.rows, self.cols));
        for (r, mut row) in data.rows_mut().into_iter().enumerate() {
            let src = &self.data[r * self.cols..(r + 1) * self.cols];
            let norm = src
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite("feature row"));
            }
            if norm == 0.0 {
                return Err(Error::ZeroRow {
                    path: path.to_path_buf(),
                    row: r,
                });
            }
            for (dst, &v) in row.iter_mut().zip(src) {
                *dst = v as f64 / norm;
            }
        }
        Ok(FeatureMatrix { data })
    }
}

/// Per-learner sample features; every row has unit L2 norm so dot products are cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from arbitrary (non-zero) rows, normalizing them.
    pub fn from_rows(data: Array2<f64>) -> Result<Self> {
        let mut data = data;
        for (r, mut row) in data.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite("feature row"));
            }
            if norm == 0.0 {
                return Err(Error::ZeroRow {
                    path: PathBuf::from("<memory>"),
                    row: r,
                });
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(FeatureMatrix { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Cosine similarity between two samples.
    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        self.data.row(i).dot(&self.data.row(j))
    }
}

pub fn load_feature_matrix(manifest: &Manifest, entry: &LearnerEntry) -> Result<FeatureMatrix> {
    let path = manifest.resolve(&entry.features);
    let raw = RawFeatures::read(&path)?;
    if raw.cols != entry.dim {
        return Err(Error::DimMismatch {
            learner: entry.id.clone(),
            declared: entry.dim,
            found: raw.cols,
        });
    }
    if raw.rows != manifest.num_samples {
        return Err(Error::RowMismatch {
            what: format!("learner {}", entry.id),
            expected: manifest.num_samples,
            found: raw.rows,
        });
    }
    raw.normalize(&path)
}

/// Labeled samples. Keyed by sample index, so iteration order is ascending sample index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShotSet {
    by_sample: BTreeMap<usize, usize>,
    #[serde(skip)]
    by_class: BTreeMap<usize, Vec<usize>>,
}

impl ShotSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = ShotSet::new();
        for (sample, class) in entries {
            set.insert(sample, class)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, sample: usize, class: usize) -> Result<()> {
        if self.by_sample.contains_key(&sample) {
            return Err(Error::Duplicate {
                kind: "shot sample",
                id: sample.to_string(),
            });
        }
        self.by_sample.insert(sample, class);
        let list = self.by_class.entry(class).or_default();
        let pos = list.partition_point(|&s| s < sample);
        list.insert(pos, sample);
        Ok(())
    }

    pub fn remove(&mut self, sample: usize) -> Option<usize> {
        let class = self.by_sample.remove(&sample)?;
        if let Some(list) = self.by_class.get_mut(&class) {
            list.retain(|&s| s != sample);
            if list.is_empty() {
                self.by_class.remove(&class);
            }
        }
        Some(class)
    }

    pub fn len(&self) -> usize {
        self.by_sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sample.is_empty()
    }

    pub fn contains(&self, sample: usize) -> bool {
        self.by_sample.contains_key(&sample)
    }

    pub fn class_of(&self, sample: usize) -> Option<usize> {
        self.by_sample.get(&sample).copied()
    }

    /// Shot samples of one class, ascending.
    pub fn samples_of(&self, class: usize) -> &[usize] {
        self.by_class.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Classes that have at least one shot, ascending.
    pub fn shotted_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_class.keys().copied()
    }

    /// `(sample, class)` pairs in ascending sample order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.by_sample.iter().map(|(&s, &c)| (s, c))
    }

    pub fn samples(&self) -> Vec<usize> {
        self.by_sample.keys().copied().collect()
    }
}

/// Ground-truth labels, one optional class per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    labels: Vec<Option<usize>>,
}

impl GroundTruth {
    pub fn new(labels: Vec<Option<usize>>) -> Self {
        GroundTruth { labels }
    }

    pub fn label(&self, sample: usize) -> Option<usize> {
        self.labels.get(sample).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn read_csv(path: &Path, num_samples: usize, num_classes: usize) -> Result<Self> {
        let gt_err = |message: String| Error::GroundTruth {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| gt_err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| gt_err(e.to_string()))?;
        if headers.len() != 2 || &headers[0] != "sample" || &headers[1] != "class" {
            return Err(gt_err("header must be `sample,class`".into()));
        }
        let mut labels = vec![None; num_samples];
        for record in reader.deserialize::<(usize, usize)>() {
            let (sample, class) = record.map_err(|e| gt_err(e.to_string()))?;
            if sample >= num_samples {
                return Err(gt_err(format!("sample {sample} out of range")));
            }
            if class >= num_classes {
                return Err(gt_err(format!("class {class} out of range")));
            }
            if labels[sample].replace(class).is_some() {
                return Err(gt_err(format!("sample {sample} labeled twice")));
            }
        }
        Ok(GroundTruth { labels })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let gt_err = |message: String| Error::GroundTruth {
            path: path.to_path_buf(),
            message,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| gt_err(e.to_string()))?;
        w.write_record(["sample", "class"])
            .map_err(|e| gt_err(e.to_string()))?;
        for (s, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                w.serialize((s, c)).map_err(|e| gt_err(e.to_string()))?;
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// All immutable inputs of a session. Ground truth is kept private to the crate: only the
/// evaluation paths read it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_samples: usize,
    pub class_names: Vec<String>,
    pub learner_ids: Vec<String>,
    pub features: Vec<FeatureMatrix>,
    pub label_embeddings: Option<FeatureMatrix>,
    pub image_dir: Option<PathBuf>,
    pub initial_shots: ShotSet,
    pub(crate) ground_truth: Option<GroundTruth>,
}

impl Dataset {
    /// Loads every matrix referenced by a validated manifest.
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let features = manifest
            .learners
            .iter()
            .map(|entry| load_feature_matrix(manifest, entry))
            .collect::<Result<Vec<_>>>()?;
        let label_embeddings = match &manifest.label_embeddings {
            Some(rel) => {
                let path = manifest.resolve(rel);
                let raw = RawFeatures::read(&path)?;
                if raw.rows != manifest.num_classes() {
                    return Err(Error::RowMismatch {
                        what: "label_embeddings".into(),
                        expected: manifest.num_classes(),
                        found: raw.rows,
                    });
                }
                Some(raw.normalize(&path)?)
            }
            None => None,
        };
        let ground_truth = match &manifest.ground_truth {
            Some(rel) => Some(GroundTruth::read_csv(
                &manifest.resolve(rel),
                manifest.num_samples,
                manifest.num_classes(),
            )?),
            None => None,
        };
        let initial_shots = ShotSet::from_entries(manifest.shots.iter().map(|s| (s.sample, s.class)))?;
        Ok(Dataset {
            num_samples: manifest.num_samples,
            class_names: manifest.classes.clone(),
            learner_ids: manifest.learners.iter().map(|l| l.id.clone()).collect(),
            features,
            label_embeddings,
            image_dir: manifest.images.as_ref().map(|p| manifest.resolve(p)),
            initial_shots,
            ground_truth,
        })
    }

    /// In-memory construction, used by the synthetic pool and tests.
    pub fn from_parts(
        class_names: Vec<String>,
        learner_ids: Vec<String>,
        features: Vec<FeatureMatrix>,
        initial_shots: ShotSet,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self> {
        if learner_ids.len() != features.len() {
            return Err(Error::InvalidArgument(
                "one feature matrix per learner id is required".into(),
            ));
        }
        let num_samples = features.first().map(FeatureMatrix::rows).unwrap_or(0);
        for (id, f) in learner_ids.iter().zip(&features) {
            if f.rows() != num_samples {
                return Err(Error::RowMismatch {
                    what: format!("learner {id}"),
                    expected: num_samples,
                    found: f.rows(),
                });
            }
        }
        let mut seen = HashSet::new();
        for id in &learner_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Duplicate {
                    kind: "learner id",
                    id: id.clone(),
                });
            }
        }
        for (s, c) in initial_shots.iter() {
            if s >= num_samples {
                return Err(Error::IndexOutOfRange {
                    what: "shot sample",
                    index: s,
                    limit: num_samples,
                });
            }
            if c >= class_names.len() {
                return Err(Error::IndexOutOfRange {
                    what: "shot class",
                    index: c,
                    limit: class_names.len(),
                });
            }
        }
        Ok(Dataset {
            num_samples,
            class_names,
            learner_ids,
            features,
            label_embeddings: None,
            image_dir: None,
            initial_shots,
            ground_truth,
        })
    }

    pub fn with_label_embeddings(mut self, embeddings: FeatureMatrix) -> Result<Self> {
        if embeddings.rows() != self.num_classes() {
            return Err(Error::RowMismatch {
                what: "label_embeddings".into(),
                expected: self.num_classes(),
                found: embeddings.rows(),
            });
        }
        self.label_embeddings = Some(embeddings);
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_learners(&self) -> usize {
        self.features.len()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.is_some()
    }

    pub fn learner_index(&self, id: &str) -> Option<usize> {
        self.learner_ids.iter().position(|l| l == id)
    }

    pub fn image_path(&self, sample: usize) -> Option<PathBuf> {
        self.image_dir
            .as_ref()
            .map(|d| d.join(format!("{sample}.png")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(rows: usize, cols: usize, data: Vec<f32>) -> RawFeatures {
        RawFeatures { rows, cols, data }
    }

    #[test]
    fn normalizes_rows() {
        let m = raw(2, 2, vec![3.0, 4.0, 0.0, 5.0])
            .normalize(Path::new("x"))
            .unwrap();
        assert!((m.data()[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((m.data()[[0, 1]] - 0.8).abs() < 1e-12);
        assert_eq!(m.data()[[1, 0]], 0.0);
        assert_eq!(m.data()[[1, 1]], 1.0);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = raw(1, 1, vec![1.0]).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = RawFeatures::from_bytes(&bytes, Path::new("f")).unwrap_err();
        assert_eq!(err.code(), "bad_magic");
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = raw(2, 2, vec![1.0; 4]).to_bytes();
        let err = RawFeatures::from_bytes(&bytes[..bytes.len() - 1], Path::new("f")).unwrap_err();
        assert_eq!(err.code(), "truncated");
    }

    #[test]
    fn rejects_zero_row() {
        let err = raw(2, 2, vec![1.0, 0.0, 0.0, 0.0])
            .normalize(Path::new("f"))
            .unwrap_err();
        assert!(matches!(err, Error::ZeroRow { row: 1, .. }));
    }

    #[test]
    fn shot_set_indexes_by_class() {
        let mut s = ShotSet::from_entries([(5, 1), (2, 1), (7, 0)]).unwrap();
        assert_eq!(s.samples_of(1), &[2, 5]);
        assert_eq!(s.shotted_classes().collect::<Vec<_>>(), vec![0, 1]);
        assert!(s.insert(2, 0).is_err());
        assert_eq!(s.remove(7), Some(0));
        assert_eq!(s.shotted_classes().collect::<Vec<_>>(), vec![1]);
        assert_eq!(s.remove(7), None);
    }

    #[test]
    fn manifest_structure_checks() {
        let base = Manifest {
            version: 1,
            num_samples: 10,
            classes: vec!["a".into(), "b".into()],
            learners: vec![LearnerEntry {
                id: "l0".into(),
                features: "l0.f32".into(),
                dim: 4,
            }],
            shots: vec![ShotEntry {
                sample: 0,
                class: 1,
            }],
            label_embeddings: None,
            ground_truth: None,
            images: None,
            base_dir: PathBuf::new(),
        };
        assert!(base.validate_structure().is_ok());

        let mut m = base.clone();
        m.shots.push(ShotEntry {
            sample: 10,
            class: 0,
        });
        assert_eq!(m.validate_structure().unwrap_err().code(), "index_out_of_range");

        let mut m = base.clone();
        m.shots.push(ShotEntry {
            sample: 1,
            class: 2,
        });
        assert_eq!(m.validate_structure().unwrap_err().code(), "index_out_of_range");

        let mut m = base.clone();
        m.learners.push(m.learners[0].clone());
        assert_eq!(m.validate_structure().unwrap_err().code(), "duplicate_id");

        let mut m = base;
        m.classes.push("a".into());
        assert_eq!(m.validate_structure().unwrap_err().code(), "duplicate_id");
    }
}
