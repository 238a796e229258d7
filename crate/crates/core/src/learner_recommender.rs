//! Learner selection: learners are the rows, sampled samples the columns.
//!
//! Distances are `1 - margin`, each learner's sparsity weight is `alpha_1 * lambda_k` (its
//! negative log-likelihood on the shots) and jointly selected learners pay `alpha_2 * mu_kl`
//! (symmetric KL between their predictions), with `alpha_1 = alpha_2 = alpha_max / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    jaccard_diversity, learner_fitness, learner_sample_distance, margins_on, mean_pairwise,
    pairwise_cooperation, DEFAULT_JACCARD_THRESHOLD,
};
use crate::sampling::{config_hash, sample_subset, SamplePlan, DEFAULT_SAMPLING_RATIO};
use crate::session::Session;
use crate::solver::{solve, SelectionProblem, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMaxSource {
    /// Largest learner-to-sample distance.
    #[default]
    DMatrix,
    /// Largest pairwise cooperation value.
    MuMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerRecommendConfig {
    pub solver: SolverConfig,
    pub ratio: f64,
    pub seed: Option<u64>,
    pub alpha_max_source: AlphaMaxSource,
}

impl Default for LearnerRecommendConfig {
    fn default() -> Self {
        LearnerRecommendConfig {
            solver: SolverConfig::default(),
            ratio: DEFAULT_SAMPLING_RATIO,
            seed: None,
            alpha_max_source: AlphaMaxSource::default(),
        }
    }
}

/// The assembled selection problem plus the terms it was built from.
#[derive(Debug, Clone)]
pub struct LearnerProblem {
    pub problem: SelectionProblem,
    pub fitness: Vec<f64>,
    pub alpha_max: f64,
}

pub fn build_learner_problem(
    session: &Session,
    sampled: &[usize],
    source: AlphaMaxSource,
) -> Result<LearnerProblem> {
    let preds = session.learner_predictions()?;
    let distances = learner_sample_distance(&margins_on(&preds, sampled));
    let fitness = learner_fitness(&preds, session.shots())?;
    let mu = pairwise_cooperation(&preds, sampled);
    let alpha_max = match source {
        AlphaMaxSource::DMatrix => distances.iter().cloned().fold(0.0, f64::max),
        AlphaMaxSource::MuMatrix => mu.iter().cloned().fold(0.0, f64::max),
    };
    let alpha = 0.5 * alpha_max;
    let weights = fitness.mapv(|l| alpha * l);
    let penalty = mu.mapv(|m| alpha * m);
    let problem = SelectionProblem::new(distances, weights, Some(penalty))?;
    Ok(LearnerProblem {
        problem,
        fitness: fitness.to_vec(),
        alpha_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerScore {
    pub id: String,
    pub fitness: f64,
    pub row_max: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerRecommendation {
    pub selected_learner_ids: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub objective: f64,
    pub alpha_max: f64,
    pub per_learner: Vec<LearnerScore>,
    /// Mean pairwise Jaccard / cooperation over the whole learner pool ("before") and over the
    /// recommendation ("after"), both on all samples. `None` for fewer than two learners.
    pub diversity_before: Option<f64>,
    pub diversity_after: Option<f64>,
    pub cooperation_before: Option<f64>,
    pub cooperation_after: Option<f64>,
    pub seed: u64,
    pub ratio: f64,
    pub num_sampled: usize,
    pub config_hash: String,
    pub state_hash: String,
}

/// Recommends a learner subset. Advisory: the session is not modified.
pub fn recommend_learners(
    session: &Session,
    config: &LearnerRecommendConfig,
) -> Result<LearnerRecommendation> {
    config.solver.validate()?;
    let seed = config.seed.unwrap_or_else(|| session.derived_seed());
    let plan: SamplePlan = sample_subset(session.num_samples(), session.shots(), config.ratio, seed)?;
    let built = build_learner_problem(session, &plan.indices, config.alpha_max_source)?;
    let result = solve(&built.problem, &config.solver)?;
    if result.selected.is_empty() {
        return Err(Error::InvalidArgument("solver selected no learner".into()));
    }
    let row_max = result
        .relaxed
        .as_ref()
        .map(|r| r.row_max())
        .unwrap_or_else(|| vec![0.0; built.problem.rows()]);

    let preds = session.learner_predictions()?;
    let all: Vec<usize> = (0..session.num_samples()).collect();
    let margins = margins_on(&preds, &all);
    let jaccard = jaccard_diversity(&margins, DEFAULT_JACCARD_THRESHOLD);
    let mu = pairwise_cooperation(&preds, &all);
    let pool: Vec<usize> = (0..preds.len()).collect();

    let ids = &session.dataset().learner_ids;
    Ok(LearnerRecommendation {
        selected_learner_ids: result.selected.iter().map(|&k| ids[k].clone()).collect(),
        per_learner: ids
            .iter()
            .enumerate()
            .map(|(k, id)| LearnerScore {
                id: id.clone(),
                fitness: built.fitness[k],
                row_max: row_max[k],
                selected: result.selected.contains(&k),
            })
            .collect(),
        diversity_before: mean_pairwise(&jaccard, &pool),
        diversity_after: mean_pairwise(&jaccard, &result.selected),
        cooperation_before: mean_pairwise(&mu, &pool),
        cooperation_after: mean_pairwise(&mu, &result.selected),
        objective: result.objective,
        alpha_max: built.alpha_max,
        selected_indices: result.selected,
        seed,
        ratio: config.ratio,
        num_sampled: plan.len(),
        config_hash: config_hash(config),
        state_hash: session.state_hash(),
    })
}
