//! Euclidean projections and proximal operators used by the ADMM iterations.

/// Projects `v` in place onto the probability simplex `{x >= 0, sum x = 1}`.
pub fn project_simplex(v: &mut [f64], scratch: &mut Vec<f64>) {
    if v.is_empty() {
        return;
    }
    let theta = simplex_threshold(v, 1.0, scratch);
    if scratch.len() == 1 {
        // A lone survivor gets exactly 1; `x - (x - 1)` can be off by an ulp.
        let top = v.iter().position(|&x| x == scratch[0]).expect("survivor comes from v");
        v.fill(0.0);
        v[top] = 1.0;
        return;
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Threshold `theta` with `sum max(v - theta, 0) = radius`.
///
/// Michelot's method: the mean-shift threshold of the active set only grows, so entries at or
/// below it can be dropped for good. The final active entries are left in `active`.
fn simplex_threshold(v: &[f64], radius: f64, active: &mut Vec<f64>) -> f64 {
    active.clear();
    active.extend_from_slice(v);
    let mut theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
    loop {
        let before = active.len();
        active.retain(|&x| x > theta);
        if active.len() == before {
            return theta;
        }
        theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
    }
}

/// [`simplex_threshold`] of `|v|` without materializing every magnitude.
fn magnitude_threshold(v: &[f64], radius: f64, active: &mut Vec<f64>) -> f64 {
    active.clear();
    let mut theta = (v.iter().map(|x| x.abs()).sum::<f64>() - radius) / v.len() as f64;
    active.extend(v.iter().map(|x| x.abs()).filter(|&x| x > theta));
    theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
    loop {
        let before = active.len();
        active.retain(|&x| x > theta);
        if active.len() == before {
            return theta;
        }
        theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
    }
}

/// Proximal operator of `t * ||x||_inf`, in place.
///
/// By Moreau decomposition this is `v - P(v)` where `P` projects onto the L1 ball of radius `t`.
pub fn prox_linf(v: &mut [f64], t: f64, scratch: &mut Vec<f64>) {
    if t <= 0.0 {
        return;
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let theta = magnitude_threshold(v, t, scratch);
    // v minus its L1-ball projection clips every magnitude at theta.
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().min(theta);
    }
}
