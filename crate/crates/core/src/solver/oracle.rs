use super::{SelectionProblem, SelectionResult};
use crate::error::{Error, Result};

pub const DEFAULT_ORACLE_MAX_ROWS: usize = 16;

const TIE_EPS: f64 = 1e-12;

/// Exact discrete optimum by enumerating every nonempty row subset. Ties go to the
/// lexicographically smallest ascending index list.
pub fn brute_force_oracle(problem: &SelectionProblem, max_rows: usize) -> Result<SelectionResult> {
    let rows = problem.rows();
    if rows > max_rows || rows >= usize::BITS as usize {
        return Err(Error::TooManyRows { rows, max_rows });
    }
    if problem.cols() == 0 {
        return Ok(SelectionResult::empty());
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut subset = Vec::with_capacity(rows);
    for mask in 1usize..(1 << rows) {
        subset.clear();
        subset.extend((0..rows).filter(|i| mask & (1 << i) != 0));
        let assignment = problem.nearest_assignment(&subset);
        let obj = problem.subset_objective(&subset, &assignment);
        let better = match &best {
            None => true,
            Some((b, s)) => obj < b - TIE_EPS || ((obj - b).abs() <= TIE_EPS && subset < *s),
        };
        if better {
            best = Some((obj, subset.clone()));
        }
    }
    let (objective, selected) = best.expect("at least one subset");
    let assignment = problem.nearest_assignment(&selected);
    Ok(SelectionResult {
        selected,
        assignment,
        objective,
        relaxed: None,
    })
}
