//! Batch evaluation comparing four arms per trial: the all-learner baseline, recommended
//! learners only, recommended shots only, and both. This is the only place outside
//! [`Session::accuracy`] that reads ground truth: it labels recommended shots the way a
//! human annotator would.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{load_manifest, Dataset};
use crate::learner_recommender::{recommend_learners, LearnerRecommendConfig, LearnerRecommendation};
use crate::session::{EditCommand, Session};
use crate::shot_recommender::{recommend_shots, ShotRecommendConfig, ShotRecommendation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub trials: usize,
    pub seed: u64,
    pub learners: LearnerRecommendConfig,
    pub shots: ShotRecommendConfig,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            trials: 10,
            seed: 0,
            learners: LearnerRecommendConfig::default(),
            shots: ShotRecommendConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub baseline: f64,
    pub rec_learners: f64,
    pub rec_shots: f64,
    pub both: f64,
    pub recommended_learners: Vec<usize>,
    /// Initial shots the shot recommender (on all learners) asked to remove.
    pub removed_shots: Vec<usize>,
    pub recommended_shot_count: usize,
    pub diversity_all: Option<f64>,
    pub diversity_recommended: Option<f64>,
    pub cooperation_all: Option<f64>,
    pub cooperation_recommended: Option<f64>,
    pub learner_seconds: f64,
    pub shot_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub trials: Vec<TrialRecord>,
    pub mean_baseline: f64,
    pub mean_rec_learners: f64,
    pub mean_rec_shots: f64,
    pub mean_both: f64,
    pub mean_recommended_learners: f64,
    pub mean_diversity_all: Option<f64>,
    pub mean_diversity_recommended: Option<f64>,
    pub mean_cooperation_all: Option<f64>,
    pub mean_cooperation_recommended: Option<f64>,
}

impl EvalReport {
    pub fn from_trials(trials: Vec<TrialRecord>) -> Self {
        let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
            if trials.is_empty() {
                0.0
            } else {
                trials.iter().map(f).sum::<f64>() / trials.len() as f64
            }
        };
        EvalReport {
            mean_baseline: mean(&|t| t.baseline),
            mean_rec_learners: mean(&|t| t.rec_learners),
            mean_rec_shots: mean(&|t| t.rec_shots),
            mean_both: mean(&|t| t.both),
            mean_recommended_learners: mean(&|t| t.recommended_learners.len() as f64),
            mean_diversity_all: mean_defined(&trials, |t| t.diversity_all),
            mean_diversity_recommended: mean_defined(&trials, |t| t.diversity_recommended),
            mean_cooperation_all: mean_defined(&trials, |t| t.cooperation_all),
            mean_cooperation_recommended: mean_defined(&trials, |t| t.cooperation_recommended),
            trials,
        }
    }
}

/// Mean over the trials where the value is defined.
fn mean_defined(trials: &[TrialRecord], f: impl Fn(&TrialRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = trials.iter().filter_map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn accuracy(session: &Session) -> Result<f64> {
    session.accuracy()?.ok_or(Error::NoGroundTruth)
}

/// Applies a shot recommendation, labeling additions from ground truth.
pub fn apply_shot_recommendation_with_truth(
    session: &mut Session,
    rec: &ShotRecommendation,
) -> Result<()> {
    let gt = session
        .dataset()
        .ground_truth
        .clone()
        .ok_or(Error::NoGroundTruth)?;
    let mut cmds = Vec::new();
    for &s in &rec.to_add {
        let class = gt
            .label(s)
            .ok_or_else(|| Error::InvalidArgument(format!("sample {s} has no ground truth")))?;
        cmds.push(EditCommand::AddShot { sample: s, class });
    }
    cmds.extend(
        rec.to_remove
            .iter()
            .map(|&s| EditCommand::RemoveShot { sample: s }),
    );
    session.apply_edits(&cmds)
}

/// Selects exactly the recommended learners.
pub fn apply_learner_recommendation(session: &mut Session, rec: &LearnerRecommendation) -> Result<()> {
    session.select_only(&rec.selected_indices)
}

/// One trial of the four-arm comparison on a dataset, with all randomness derived from `seed`.
pub fn run_trial(data: Arc<Dataset>, seed: u64, protocol: &EvalProtocol) -> Result<TrialRecord> {
    if !data.has_ground_truth() {
        return Err(Error::NoGroundTruth);
    }
    let mut base = Session::new(data, seed)?;
    let all: Vec<usize> = (0..base.learners().len()).collect();
    base.select_only(&all)?;
    let baseline = accuracy(&base)?;

    let learner_cfg = LearnerRecommendConfig {
        seed: Some(seed),
        ..protocol.learners.clone()
    };
    let started = Instant::now();
    let lrec = recommend_learners(&base, &learner_cfg)?;
    let learner_seconds = started.elapsed().as_secs_f64();
    let mut learners_arm = base.clone();
    apply_learner_recommendation(&mut learners_arm, &lrec)?;
    let rec_learners = accuracy(&learners_arm)?;

    let shot_cfg = ShotRecommendConfig {
        seed: Some(seed),
        budget: Some(protocol.shots.budget.unwrap_or(base.shots().len())),
        ..protocol.shots.clone()
    };
    let started = Instant::now();
    let srec = recommend_shots(&base, &shot_cfg)?;
    let shot_seconds = started.elapsed().as_secs_f64();
    let mut shots_arm = base.clone();
    apply_shot_recommendation_with_truth(&mut shots_arm, &srec)?;
    let rec_shots = accuracy(&shots_arm)?;

    let mut both_arm = learners_arm.clone();
    let srec_both = recommend_shots(&both_arm, &shot_cfg)?;
    apply_shot_recommendation_with_truth(&mut both_arm, &srec_both)?;
    let both = accuracy(&both_arm)?;

    Ok(TrialRecord {
        seed,
        baseline,
        rec_learners,
        rec_shots,
        both,
        recommended_learners: lrec.selected_indices.clone(),
        removed_shots: srec.to_remove.clone(),
        recommended_shot_count: srec.recommended_sample_indices.len(),
        diversity_all: lrec.diversity_before,
        diversity_recommended: lrec.diversity_after,
        cooperation_all: lrec.cooperation_before,
        cooperation_recommended: lrec.cooperation_after,
        learner_seconds,
        shot_seconds,
    })
}

/// Runs `protocol.trials` trials on one dataset; trial `t` uses seed `protocol.seed + t`.
pub fn run_eval_dataset(data: Arc<Dataset>, protocol: &EvalProtocol) -> Result<EvalReport> {
    if protocol.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let trials = (0..protocol.trials as u64)
        .map(|t| run_trial(data.clone(), protocol.seed + t, protocol))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_trials(trials))
}

pub fn run_eval(manifest_path: impl AsRef<Path>, protocol: &EvalProtocol) -> Result<EvalReport> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.ground_truth.is_none() {
        return Err(Error::NoGroundTruth);
    }
    let data = Arc::new(Dataset::load(&manifest)?);
    run_eval_dataset(data, protocol)
}
