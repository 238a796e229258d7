//! Relaxed sparse subset selection.
//!
//! Given an `I x J` distance matrix `D`, per-row sparsity weights `w` and an optional symmetric
//! pairwise penalty `P`, the discrete problem picks a subset `S` of rows minimizing
//!
//! ```text
//! sum_j min_{i in S} d_ij  +  sum_{i in S} w_i  +  sum_{i<l in S} P_il
//! ```
//!
//! The relaxation replaces the 0/1 assignment with a column-stochastic `Z >= 0` and the subset
//! size with row maxima, `sum_ij d_ij z_ij + sum_i w_i max_j z_ij`, which is convex and solved by
//! ADMM ([`solve_relaxed`]). [`round_selection`] turns the relaxed solution into a subset and
//! [`brute_force_oracle`] solves small instances exactly.

mod admm;
mod oracle;
pub mod prox;
mod round;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admm::{solve_relaxed, solve_relaxed_observed};
pub use oracle::{brute_force_oracle, DEFAULT_ORACLE_MAX_ROWS};
pub use round::round_selection;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    distances: Array2<f64>,
    sparsity_weights: Array1<f64>,
    pairwise_penalty: Option<Array2<f64>>,
}

impl SelectionProblem {
    pub fn new(
        distances: Array2<f64>,
        sparsity_weights: Array1<f64>,
        pairwise_penalty: Option<Array2<f64>>,
    ) -> Result<Self> {
        let rows = distances.nrows();
        if rows == 0 {
            return Err(Error::InvalidArgument("problem has no rows".into()));
        }
        if sparsity_weights.len() != rows {
            return Err(Error::InvalidArgument(format!(
                "{} sparsity weights for {} rows",
                sparsity_weights.len(),
                rows
            )));
        }
        if distances.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        if distances.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidArgument("negative distance".into()));
        }
        if sparsity_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("sparsity weights"));
        }
        if sparsity_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("negative sparsity weight".into()));
        }
        if let Some(p) = &pairwise_penalty {
            if p.dim() != (rows, rows) {
                return Err(Error::InvalidArgument(
                    "pairwise penalty must be I x I".into(),
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("pairwise penalty"));
            }
            for a in 0..rows {
                if p[[a, a]] != 0.0 {
                    return Err(Error::InvalidArgument(
                        "pairwise penalty diagonal must be zero".into(),
                    ));
                }
                for b in (a + 1)..rows {
                    if p[[a, b]] != p[[b, a]] || p[[a, b]] < 0.0 {
                        return Err(Error::InvalidArgument(
                            "pairwise penalty must be symmetric and nonnegative".into(),
                        ));
                    }
                }
            }
        }
        Ok(SelectionProblem {
            distances,
            sparsity_weights,
            pairwise_penalty,
        })
    }

    pub fn rows(&self) -> usize {
        self.distances.nrows()
    }

    pub fn cols(&self) -> usize {
        self.distances.ncols()
    }

    pub fn distances(&self) -> &Array2<f64> {
        &self.distances
    }

    pub fn sparsity_weights(&self) -> &Array1<f64> {
        &self.sparsity_weights
    }

    pub fn pairwise_penalty(&self) -> Option<&Array2<f64>> {
        self.pairwise_penalty.as_ref()
    }

    /// Same distances with different sparsity weights and no pairwise term.
    pub(crate) fn with_weights(&self, weights: Array1<f64>) -> SelectionProblem {
        SelectionProblem {
            distances: self.distances.clone(),
            sparsity_weights: weights,
            pairwise_penalty: None,
        }
    }

    /// Discrete objective of a subset with its nearest-row assignment.
    pub fn subset_objective(&self, selected: &[usize], assignment: &[usize]) -> f64 {
        let mut total = 0.0;
        for (j, &i) in assignment.iter().enumerate() {
            total += self.distances[[i, j]];
        }
        for &i in selected {
            total += self.sparsity_weights[i];
        }
        if let Some(p) = &self.pairwise_penalty {
            for (x, &a) in selected.iter().enumerate() {
                for &b in &selected[x + 1..] {
                    total += p[[a, b]];
                }
            }
        }
        total
    }

    /// Relaxed objective `sum d_ij z_ij + sum w_i max_j z_ij` (pairwise term excluded).
    pub fn relaxed_objective(&self, z: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for (i, row) in z.rows().into_iter().enumerate() {
            let mut rmax = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                total += self.distances[[i, j]] * v;
                rmax = rmax.max(v);
            }
            total += self.sparsity_weights[i] * rmax;
        }
        total
    }

    /// Assigns each column to its nearest row among `selected` (ties to the lowest row index).
    pub fn nearest_assignment(&self, selected: &[usize]) -> Vec<usize> {
        (0..self.cols())
            .map(|j| {
                let mut best = selected[0];
                for &i in &selected[1..] {
                    if self.distances[[i, j]] < self.distances[[best, j]] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Tuning knobs for the ADMM solve and rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rho: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub round_threshold: f64,
    pub outer_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            tol: 1e-5,
            max_iters: 2000,
            round_threshold: 0.1,
            outer_iters: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument("rho must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.max_iters == 0 || self.outer_iters == 0 {
            return Err(Error::InvalidArgument(
                "max_iters and outer_iters must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.round_threshold) {
            return Err(Error::InvalidArgument(
                "round_threshold must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedSolution {
    /// I×J, every column on the probability simplex.
    #[serde(skip)]
    pub z: Array2<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    /// Relaxed objective of `z` under the weights that were optimized.
    pub objective: f64,
}

impl RelaxedSolution {
    pub fn row_max(&self) -> Vec<f64> {
        self.z
            .rows()
            .into_iter()
            .map(|r| r.iter().cloned().fold(0.0, f64::max))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    /// Ascending row indices.
    pub selected: Vec<usize>,
    /// Row chosen for each column.
    pub assignment: Vec<usize>,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed: Option<RelaxedSolution>,
}

impl SelectionResult {
    fn empty() -> Self {
        SelectionResult {
            selected: Vec::new(),
            assignment: Vec::new(),
            objective: 0.0,
            relaxed: None,
        }
    }
}

/// Recomputes the discrete objective of a selection.
pub fn objective_value(selection: &SelectionResult, problem: &SelectionProblem) -> Result<f64> {
    if selection.assignment.len() != problem.cols() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} columns, problem has {}",
            selection.assignment.len(),
            problem.cols()
        )));
    }
    for &i in &selection.selected {
        if i >= problem.rows() {
            return Err(Error::IndexOutOfRange {
                what: "selected row",
                index: i,
                limit: problem.rows(),
            });
        }
    }
    for (j, &i) in selection.assignment.iter().enumerate() {
        if selection.selected.binary_search(&i).is_err() {
            return Err(Error::UnselectedAssignment { column: j, row: i });
        }
    }
    Ok(problem.subset_objective(&selection.selected, &selection.assignment))
}

/// Full pipeline: relaxed solve plus rounding. A pairwise penalty is handled by an outer
/// linearization loop that folds `sum_l P_kl s_l` into each row's weight, where `s` holds the
/// previous iterate's row maxima (initially all ones). Each round warm-starts ADMM from the last. The loop stops once the rounded subset
/// repeats or after `outer_iters` rounds; the best subset seen (by true discrete objective) wins.
pub fn solve(problem: &SelectionProblem, config: &SolverConfig) -> Result<SelectionResult> {
    config.validate()?;
    if problem.cols() == 0 {
        return Ok(SelectionResult::empty());
    }
    let Some(penalty) = problem.pairwise_penalty() else {
        let relaxed = solve_relaxed(problem, config)?;
        return round_selection(relaxed, problem, config.round_threshold);
    };

    let mut s = Array1::<f64>::ones(problem.rows());
    let mut best: Option<SelectionResult> = None;
    let mut previous: Option<Vec<usize>> = None;
    let mut warm = None;
    for _ in 0..config.outer_iters {
        let folded = problem.sparsity_weights() + &penalty.dot(&s);
        let surrogate = problem.with_weights(folded);
        let (relaxed, state) = admm::solve_relaxed_warm(&surrogate, config, warm)?;
        warm = state;
        s = Array1::from(relaxed.row_max());
        let rounded = round_selection(relaxed, problem, config.round_threshold)?;
        let done = previous.as_ref() == Some(&rounded.selected);
        previous = Some(rounded.selected.clone());
        if best
            .as_ref()
            .is_none_or(|b| rounded.objective < b.objective)
        {
            best = Some(rounded);
        }
        if done {
            break;
        }
    }
    Ok(best.expect("outer_iters >= 1"))
}
