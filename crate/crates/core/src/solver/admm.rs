use ndarray::Array2;

use super::prox::{project_simplex, prox_linf};
use super::{RelaxedSolution, SelectionProblem, SolverConfig};
use crate::error::{Error, Result};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const BALANCE_RATIO: f64 = 10.0;

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Solves the convex relaxation (pairwise term ignored) by consensus ADMM.
pub fn solve_relaxed(problem: &SelectionProblem, config: &SolverConfig) -> Result<RelaxedSolution> {
    solve_relaxed_observed(problem, config, |_, _| {})
}

/// As [`solve_relaxed`], calling `observe(iteration, z)` after every simplex projection step.
///
/// Splitting: `Z` carries the linear cost and the column-simplex constraint, `C` carries the
/// weighted row-wise L-infinity norm, with consensus `Z = C` and scaled dual `U`.
///
/// ```text
/// Z <- proj_simplex_cols(C - U - D / rho)
/// C <- prox_{(w_i / rho) ||.||_inf}(Z + U)   row by row
/// U <- U + Z - C
/// ```
///
/// Residuals are Frobenius norms: primal `||Z - C||`, dual `rho ||C - C_prev||`. `rho` is doubled or halved (with `U` rescaled)
/// whenever one residual exceeds the other tenfold.
pub fn solve_relaxed_observed<F>(
    problem: &SelectionProblem,
    config: &SolverConfig,
    observe: F,
) -> Result<RelaxedSolution>
where
    F: FnMut(usize, &Array2<f64>),
{
    run(problem, config, None, observe).map(|(solution, _)| solution)
}

/// ADMM state carried between related solves: consensus copy, scaled dual and penalty.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    c: Array2<f64>,
    u: Array2<f64>,
    rho: f64,
}

/// Solves starting from `warm` (the state of an earlier solve on the same shape), returning the
/// final state for the next solve.
pub(crate) fn solve_relaxed_warm(
    problem: &SelectionProblem,
    config: &SolverConfig,
    warm: Option<WarmStart>,
) -> Result<(RelaxedSolution, Option<WarmStart>)> {
    run(problem, config, warm, |_, _| {})
}

fn run<F>(
    problem: &SelectionProblem,
    config: &SolverConfig,
    warm: Option<WarmStart>,
    mut observe: F,
) -> Result<(RelaxedSolution, Option<WarmStart>)>
where
    F: FnMut(usize, &Array2<f64>),
{
    config.validate()?;
    let (rows, cols) = problem.distances().dim();
    if cols == 0 {
        let empty = RelaxedSolution {
            z: Array2::zeros((rows, 0)),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            objective: 0.0,
        };
        return Ok((empty, None));
    }
    let d = problem.distances();
    let w = problem.sparsity_weights();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distance matrix"));
    }

    let mut z = Array2::<f64>::from_elem((rows, cols), 1.0 / rows as f64);
    let (mut c, mut u, mut rho) = match warm {
        Some(w) if w.c.dim() == (rows, cols) => (w.c, w.u, w.rho),
        _ => (z.clone(), Array2::<f64>::zeros((rows, cols)), config.rho),
    };
    let mut c_prev = c.clone();
    let mut col = vec![0.0; rows];
    let mut row = vec![0.0; cols];
    let mut scratch = Vec::with_capacity(rows.max(cols));

    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=config.max_iters {
        iterations = it;
        let inv_rho = 1.0 / rho;
        {
            let (cs, us, ds) = (slice(&c), slice(&u), slice(d));
            let zs = z.as_slice_mut().expect("standard layout");
            for j in 0..cols {
                for (i, v) in col.iter_mut().enumerate() {
                    let at = i * cols + j;
                    *v = cs[at] - us[at] - ds[at] * inv_rho;
                }
                project_simplex(&mut col, &mut scratch);
                for (i, &v) in col.iter().enumerate() {
                    zs[i * cols + j] = v;
                }
            }
        }
        observe(it, &z);

        c_prev.assign(&c);
        for ((mut c_row, z_row), (u_row, &wi)) in c
            .rows_mut()
            .into_iter()
            .zip(z.rows())
            .zip(u.rows().into_iter().zip(w.iter()))
        {
            for ((dst, &zv), &uv) in row.iter_mut().zip(z_row).zip(u_row) {
                *dst = zv + uv;
            }
            prox_linf(&mut row, wi * inv_rho, &mut scratch);
            c_row.assign(&ndarray::ArrayView1::from(&row[..]));
        }

        let mut r2 = 0.0;
        let mut s2 = 0.0;
        for ((uv, &zv), (&cv, &cp)) in u
            .iter_mut()
            .zip(z.iter())
            .zip(c.iter().zip(c_prev.iter()))
        {
            let diff = zv - cv;
            *uv += diff;
            r2 += diff * diff;
            s2 += (cv - cp) * (cv - cp);
        }
        primal = r2.sqrt();
        dual = rho * s2.sqrt();
        if primal < config.tol && dual < config.tol {
            converged = true;
            break;
        }
        if primal > BALANCE_RATIO * dual && rho * 2.0 <= RHO_MAX {
            rho *= 2.0;
            u.mapv_inplace(|v| v / 2.0);
        } else if dual > BALANCE_RATIO * primal && rho / 2.0 >= RHO_MIN {
            rho /= 2.0;
            u.mapv_inplace(|v| v * 2.0);
        }
    }

    let objective = problem.relaxed_objective(&z);
    let solution = RelaxedSolution {
        z,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        converged,
        objective,
    };
    Ok((solution, Some(WarmStart { c, u, rho })))
}
