//! Mutable tuning state: learner selection and weights, the shot set, an append-only edit log
//! with undo, and a prediction cache tagged by the state it was computed for.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{
    accuracy_eval, class_prototypes, ensemble_predict, learner_predict, PredictionTable,
    DEFAULT_TEMPERATURE,
};
use crate::error::{Error, Result};
use crate::feature_store::{load_manifest, Dataset, FeatureMatrix, ShotSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub id: String,
    pub selected: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditCommand {
    AddShot { sample: usize, class: usize },
    RemoveShot { sample: usize },
    SetLearner { id: String, selected: bool },
    SetWeight { id: String, weight: f64 },
    Undo,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    learners: Vec<LearnerState>,
    shots: ShotSet,
}

#[derive(Debug, Clone)]
pub struct Session {
    data: Arc<Dataset>,
    temperature: f64,
    base_seed: u64,
    learners: Vec<LearnerState>,
    shots: ShotSet,
    edit_log: Vec<EditCommand>,
    undo_stack: Vec<Snapshot>,
    learner_cache: OnceLock<(String, Arc<Vec<Array2<f64>>>)>,
    table_cache: OnceLock<(String, Arc<PredictionTable>)>,
}

impl Session {
    /// Initial state: every learner unselected with weight 1, shots from the dataset.
    pub fn new(data: Arc<Dataset>, base_seed: u64) -> Result<Self> {
        if data.initial_shots.is_empty() {
            return Err(Error::EmptyShots);
        }
        if data.num_learners() == 0 {
            return Err(Error::InvalidArgument("no learners in dataset".into()));
        }
        let learners = data
            .learner_ids
            .iter()
            .map(|id| LearnerState {
                id: id.clone(),
                selected: false,
                weight: 1.0,
            })
            .collect();
        Ok(Session {
            shots: data.initial_shots.clone(),
            data,
            temperature: DEFAULT_TEMPERATURE,
            base_seed,
            learners,
            edit_log: Vec::new(),
            undo_stack: Vec::new(),
            learner_cache: OnceLock::new(),
            table_cache: OnceLock::new(),
        })
    }

    pub fn from_manifest(path: impl AsRef<Path>, base_seed: u64) -> Result<Self> {
        let manifest = load_manifest(path)?;
        let data = Dataset::load(&manifest)?;
        Session::new(Arc::new(data), base_seed)
    }

    /// Rebuilds a session from its initial inputs and an edit log.
    pub fn replay(data: Arc<Dataset>, base_seed: u64, log: &[EditCommand]) -> Result<Self> {
        let mut s = Session::new(data, base_seed)?;
        for cmd in log {
            s.apply_edit(cmd.clone())?;
        }
        Ok(s)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        self.temperature = temperature;
        self.invalidate(true);
        Ok(self)
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn learners(&self) -> &[LearnerState] {
        &self.learners
    }

    pub fn shots(&self) -> &ShotSet {
        &self.shots
    }

    pub fn edit_log(&self) -> &[EditCommand] {
        &self.edit_log
    }

    pub fn num_samples(&self) -> usize {
        self.data.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn learner_index(&self, id: &str) -> Result<usize> {
        self.data
            .learner_index(id)
            .ok_or_else(|| Error::UnknownLearner(id.to_string()))
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.learners
            .iter()
            .enumerate()
            .filter(|(_, l)| l.selected)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn selected_features(&self) -> Vec<&FeatureMatrix> {
        self.selected_indices()
            .into_iter()
            .map(|k| &self.data.features[k])
            .collect()
    }

    /// Per-call seed derived from the base seed and the number of edits so far.
    pub fn derived_seed(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.base_seed.to_le_bytes());
        h.update((self.edit_log.len() as u64).to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn shots_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.temperature.to_le_bytes());
        for (s, c) in self.shots.iter() {
            h.update((s as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Hash of everything that determines predictions and recommendations.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.shots_hash().as_bytes());
        for l in &self.learners {
            h.update(l.id.as_bytes());
            h.update([0u8, l.selected as u8]);
            h.update(l.weight.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Predictions of every learner (selected or not) under the current shots.
    pub fn learner_predictions(&self) -> Result<Arc<Vec<Array2<f64>>>> {
        let tag = self.shots_hash();
        if let Some((t, v)) = self.learner_cache.get() {
            if *t == tag {
                return Ok(v.clone());
            }
        }
        let preds = self
            .data
            .features
            .iter()
            .map(|f| {
                let protos = class_prototypes(f, &self.shots, self.num_classes())?;
                learner_predict(f, &protos, self.temperature)
            })
            .collect::<Result<Vec<_>>>()?;
        let preds = Arc::new(preds);
        let _ = self.learner_cache.set((tag, preds.clone()));
        Ok(preds)
    }

    /// Ensemble of the selected learners, computed lazily.
    pub fn predictions(&self) -> Result<Arc<PredictionTable>> {
        let tag = self.state_hash();
        if let Some((t, v)) = self.table_cache.get() {
            if *t == tag {
                return Ok(v.clone());
            }
        }
        let per_learner = self.learner_predictions()?;
        let ensemble = self.ensemble_with(&per_learner, |_, w| w)?;
        let table = Arc::new(PredictionTable::new(per_learner.as_ref().clone(), ensemble));
        let _ = self.table_cache.set((tag, table.clone()));
        Ok(table)
    }

    /// Ensemble over the selected learners with each weight remapped by `weight(k, w_k)`.
    pub fn ensemble_with<F>(&self, per_learner: &[Array2<f64>], weight: F) -> Result<Array2<f64>>
    where
        F: Fn(usize, f64) -> f64,
    {
        ensemble_predict(
            self.selected_indices()
                .into_iter()
                .map(|k| (per_learner[k].view(), weight(k, self.learners[k].weight))),
        )
    }

    /// Ensemble accuracy on non-shot samples, when ground truth is available.
    pub fn accuracy(&self) -> Result<Option<f64>> {
        let Some(gt) = &self.data.ground_truth else {
            return Ok(None);
        };
        if self.selected_indices().is_empty() {
            return Ok(None);
        }
        let table = self.predictions()?;
        accuracy_eval(&table.ensemble, gt, &self.shots).map(Some)
    }

    fn invalidate(&mut self, shots_changed: bool) {
        if shots_changed {
            self.learner_cache = OnceLock::new();
        }
        self.table_cache = OnceLock::new();
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            learners: self.learners.clone(),
            shots: self.shots.clone(),
        }
    }

    /// Validates and applies one edit, appending it to the log.
    pub fn apply_edit(&mut self, cmd: EditCommand) -> Result<()> {
        let before = self.snapshot();
        let mut shots_changed = false;
        match &cmd {
            EditCommand::AddShot { sample, class } => {
                if *sample >= self.num_samples() {
                    return Err(Error::EditRejected(format!(
                        "sample {sample} out of range"
                    )));
                }
                if *class >= self.num_classes() {
                    return Err(Error::EditRejected(format!("class {class} out of range")));
                }
                if self.shots.contains(*sample) {
                    return Err(Error::EditRejected(format!(
                        "sample {sample} is already a shot"
                    )));
                }
                self.shots.insert(*sample, *class)?;
                shots_changed = true;
            }
            EditCommand::RemoveShot { sample } => {
                if !self.shots.contains(*sample) {
                    return Err(Error::EditRejected(format!("sample {sample} is not a shot")));
                }
                if self.shots.len() == 1 {
                    return Err(Error::EditRejected(
                        "cannot remove the last remaining shot".into(),
                    ));
                }
                self.shots.remove(*sample);
                shots_changed = true;
            }
            EditCommand::SetLearner { id, selected } => {
                let k = self
                    .data
                    .learner_index(id)
                    .ok_or_else(|| Error::EditRejected(format!("unknown learner `{id}`")))?;
                self.learners[k].selected = *selected;
            }
            EditCommand::SetWeight { id, weight } => {
                if !(weight.is_finite() && *weight >= 0.0) {
                    return Err(Error::EditRejected(format!("invalid weight {weight}")));
                }
                let k = self
                    .data
                    .learner_index(id)
                    .ok_or_else(|| Error::EditRejected(format!("unknown learner `{id}`")))?;
                self.learners[k].weight = *weight;
            }
            EditCommand::Undo => {
                let prev = self
                    .undo_stack
                    .pop()
                    .ok_or_else(|| Error::EditRejected("nothing to undo".into()))?;
                shots_changed = prev.shots != self.shots;
                self.learners = prev.learners;
                self.shots = prev.shots;
                self.edit_log.push(cmd);
                self.invalidate(shots_changed);
                return Ok(());
            }
        }
        self.undo_stack.push(before);
        self.edit_log.push(cmd);
        self.invalidate(shots_changed);
        Ok(())
    }

    /// Applies a batch atomically: either every command succeeds or the session is unchanged.
    pub fn apply_edits(&mut self, cmds: &[EditCommand]) -> Result<()> {
        let mut staged = self.clone();
        for cmd in cmds {
            staged.apply_edit(cmd.clone())?;
        }
        *self = staged;
        Ok(())
    }

    /// Fails with `StaleState` unless the current state hash equals `expected`.
    pub fn check_state(&self, expected: &str) -> Result<()> {
        let current = self.state_hash();
        if current != expected {
            return Err(Error::StaleState {
                expected: expected.to_string(),
                current,
            });
        }
        Ok(())
    }

    /// Convenience used by harnesses: select exactly `ids` with the given weight each.
    pub fn select_only(&mut self, indices: &[usize]) -> Result<()> {
        let cmds: Vec<EditCommand> = self
            .learners
            .iter()
            .enumerate()
            .filter(|(k, l)| l.selected != indices.contains(k))
            .map(|(k, l)| EditCommand::SetLearner {
                id: l.id.clone(),
                selected: indices.contains(&k),
            })
            .collect();
        self.apply_edits(&cmds)
    }
}

/// Writes an edit log as JSON lines, one command per line.
pub fn write_edit_log(path: impl AsRef<Path>, log: &[EditCommand]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for cmd in log {
        text.push_str(&serde_json::to_string(cmd).expect("edit commands serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_edit_log(path: impl AsRef<Path>) -> Result<Vec<EditCommand>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1))
            })
        })
        .collect()
}
