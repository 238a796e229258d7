use super::{RelaxedSolution, SelectionProblem, SelectionResult};
use crate::error::Result;

/// Discretizes a relaxed solution.
///
/// Rows whose maximum entry reaches `threshold` are kept (if none does, the row with the
/// largest maximum). Every column then goes to its nearest kept row, rows left without columns
/// are dropped, and the objective is recomputed on the final subset, pairwise term included.
pub fn round_selection(
    relaxed: RelaxedSolution,
    problem: &SelectionProblem,
    threshold: f64,
) -> Result<SelectionResult> {
    if problem.cols() == 0 {
        return Ok(SelectionResult {
            selected: Vec::new(),
            assignment: Vec::new(),
            objective: 0.0,
            relaxed: Some(relaxed),
        });
    }
    let row_max = relaxed.row_max();
    let mut selected: Vec<usize> = (0..row_max.len())
        .filter(|&i| row_max[i] >= threshold)
        .collect();
    if selected.is_empty() {
        let mut best = 0;
        for (i, &m) in row_max.iter().enumerate() {
            if m > row_max[best] {
                best = i;
            }
        }
        selected.push(best);
    }
    let assignment = problem.nearest_assignment(&selected);
    selected.retain(|i| assignment.contains(i));
    let objective = problem.subset_objective(&selected, &assignment);
    Ok(SelectionResult {
        selected,
        assignment,
        objective,
        relaxed: Some(relaxed),
    })
}
