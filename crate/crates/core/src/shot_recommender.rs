//! Shot selection: samples are both rows and columns.
//!
//! Distances are cosine distances averaged over the selected learners. Each candidate's
//! sparsity weight is `alpha * beta_i * gamma_i` with `alpha = alpha_max / budget`,
//! `gamma_i` the mean margin of the selected learners on the sample and `beta_i = 0.1` for
//! current shots (1 otherwise), so confident samples are expensive and existing shots cheap.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{margins_on, sample_pairwise_distance};
use crate::sampling::{config_hash, sample_subset, SamplePlan, DEFAULT_SAMPLING_RATIO};
use crate::session::Session;
use crate::solver::{solve, SelectionProblem, SolverConfig};

pub const SHOT_STABILITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotRecommendConfig {
    pub solver: SolverConfig,
    pub ratio: f64,
    pub seed: Option<u64>,
    /// Desired number of shots; defaults to the current shot count.
    pub budget: Option<usize>,
}

impl Default for ShotRecommendConfig {
    fn default() -> Self {
        ShotRecommendConfig {
            solver: SolverConfig::default(),
            ratio: DEFAULT_SAMPLING_RATIO,
            seed: None,
            budget: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShotProblem {
    pub problem: SelectionProblem,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub alpha_max: f64,
}

pub fn build_shot_problem(session: &Session, plan: &SamplePlan, budget: usize) -> Result<ShotProblem> {
    if budget == 0 {
        return Err(Error::InvalidArgument("shot budget must be at least 1".into()));
    }
    let selected = session.selected_indices();
    if selected.is_empty() {
        return Err(Error::NoSelectedLearners);
    }
    let features = session.selected_features();
    let distances = sample_pairwise_distance(&features, &plan.indices)?;
    let alpha_max = distances.iter().cloned().fold(0.0, f64::max);
    let alpha = alpha_max / budget as f64;

    let preds = session.learner_predictions()?;
    let chosen: Vec<_> = selected.iter().map(|&k| preds[k].clone()).collect();
    let margins = margins_on(&chosen, &plan.indices);
    let gamma: Vec<f64> = margins.columns().into_iter().map(|c| c.mean().unwrap_or(0.0)).collect();
    let beta: Vec<f64> = plan
        .indices
        .iter()
        .map(|&i| if session.shots().contains(i) { SHOT_STABILITY } else { 1.0 })
        .collect();
    let weights = Array1::from_iter(gamma.iter().zip(&beta).map(|(g, b)| alpha * b * g));
    let problem = SelectionProblem::new(distances, weights, None)?;
    Ok(ShotProblem {
        problem,
        gamma,
        beta,
        alpha,
        alpha_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub sample: usize,
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotRecommendation {
    /// Ascending sample indices.
    pub recommended_sample_indices: Vec<usize>,
    pub to_add: Vec<usize>,
    pub to_remove: Vec<usize>,
    pub objective: f64,
    pub alpha: f64,
    pub per_sample: Vec<SampleScore>,
    pub budget: usize,
    pub seed: u64,
    pub ratio: f64,
    pub config_hash: String,
    pub state_hash: String,
}

/// Recommends a shot set. Advisory: labels for `to_add` must come from the user.
pub fn recommend_shots(session: &Session, config: &ShotRecommendConfig) -> Result<ShotRecommendation> {
    config.solver.validate()?;
    let budget = config.budget.unwrap_or_else(|| session.shots().len());
    let seed = config.seed.unwrap_or_else(|| session.derived_seed());
    let plan = sample_subset(session.num_samples(), session.shots(), config.ratio, seed)?;
    let built = build_shot_problem(session, &plan, budget)?;
    let result = solve(&built.problem, &config.solver)?;

    let recommended: Vec<usize> = result.selected.iter().map(|&r| plan.indices[r]).collect();
    let shots = session.shots();
    let to_add = recommended.iter().copied().filter(|&s| !shots.contains(s)).collect();
    let to_remove = shots
        .samples()
        .into_iter()
        .filter(|s| recommended.binary_search(s).is_err())
        .collect();
    Ok(ShotRecommendation {
        per_sample: plan
            .indices
            .iter()
            .enumerate()
            .map(|(r, &sample)| SampleScore {
                sample,
                gamma: built.gamma[r],
                beta: built.beta[r],
            })
            .collect(),
        recommended_sample_indices: recommended,
        to_add,
        to_remove,
        objective: result.objective,
        alpha: built.alpha,
        budget,
        seed,
        ratio: config.ratio,
        config_hash: config_hash(config),
        state_hash: session.state_hash(),
    })
}
