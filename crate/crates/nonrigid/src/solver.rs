//! Damped Gauss–Newton (Levenberg–Marquardt) for square or overdetermined
//! polynomial systems, with deterministic parallel multi-start.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// A residual map `F: ℝⁿ → ℝᵐ` with its Jacobian.
pub trait System: Sync {
    fn dim(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Iterates failing this test are rejected (e.g. a localized variable
    /// approaching zero).
    fn admissible(&self, _x: &DVector<f64>) -> bool {
        true
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Success when the max-norm residual falls below this value.
    pub residual_tol: f64,
    /// Stop when the relative step falls below this value.
    pub step_tol: f64,
    pub initial_damping: f64,
    /// On stall, try one round of random-direction line search and resume.
    pub line_search_fallback: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            residual_tol: 1e-12,
            step_tol: 1e-15,
            initial_damping: 1e-3,
            line_search_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    /// Max-norm of the residual at `x`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost(r: &DVector<f64>) -> f64 {
    let c = r.norm_squared();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn max_abs(r: &DVector<f64>) -> f64 {
    r.iter().fold(0.0, |m, v| {
        if v.is_finite() {
            m.max(v.abs())
        } else {
            f64::INFINITY
        }
    })
}

/// Marquardt-scaled damped step from the augmented least-squares problem
/// `[J; √μ D] δ = [-r; 0]`, solved by QR (the damping block keeps `R`
/// nonsingular), with an SVD fallback for steps that come out non-finite.
fn damped_step(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    diag: &DVector<f64>,
    mu: f64,
) -> Option<DVector<f64>> {
    let (m, n) = j.shape();
    let mut a = DMatrix::zeros(m + n, n);
    a.view_mut((0, 0), (m, n)).copy_from(j);
    let s = mu.sqrt();
    for k in 0..n {
        a[(m + k, k)] = s * diag[k];
    }
    let mut b = DVector::zeros(m + n);
    b.rows_mut(0, m).copy_from(&(-r));
    let qr = a.clone().qr();
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r_upper = qr.r();
    if let Some(step) = r_upper.solve_upper_triangular(&qtb.rows(0, n).into_owned()) {
        if step.iter().all(|v| v.is_finite()) {
            return Some(step);
        }
    }
    let step = a.svd(true, true).solve(&b, 1e-300).ok()?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Runs Levenberg–Marquardt from `x0`.
pub fn levenberg_marquardt<S: System + ?Sized>(
    sys: &S,
    x0: DVector<f64>,
    opts: &LmOptions,
    rng: &mut ChaCha8Rng,
) -> LmOutcome {
    let mut x = x0;
    let mut r = sys.residuals(&x);
    let mut c = cost(&r);
    let mut mu = opts.initial_damping;
    let mut iterations = 0;
    let mut fallback_used = !opts.line_search_fallback;
    while iterations < opts.max_iterations && c.is_finite() {
        if max_abs(&r) < opts.residual_tol {
            break;
        }
        iterations += 1;
        let j = sys.jacobian(&x);
        let diag =
            DVector::from_iterator(x.len(), j.column_iter().map(|col| col.norm().max(1e-12)));
        let mut improved = false;
        let mut step_small = false;
        while mu < 1e16 {
            let Some(dx) = damped_step(&j, &r, &diag, mu) else {
                mu *= 10.0;
                continue;
            };
            let xn = &x + &dx;
            if dx.norm() <= opts.step_tol * (1.0 + x.norm()) {
                step_small = true;
                break;
            }
            if sys.admissible(&xn) {
                let rn = sys.residuals(&xn);
                let cn = cost(&rn);
                if cn < c {
                    x = xn;
                    r = rn;
                    c = cn;
                    mu = (mu / 3.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            if step_small && max_abs(&r) < opts.residual_tol.sqrt() {
                break;
            }
            if fallback_used {
                break;
            }
            fallback_used = true;
            match random_line_search(sys, &x, c, rng) {
                Some((xn, rn, cn)) => {
                    x = xn;
                    r = rn;
                    c = cn;
                    mu = opts.initial_damping;
                }
                None => break,
            }
        }
    }
    let residual = max_abs(&r);
    LmOutcome {
        converged: residual < opts.residual_tol,
        x: x.as_slice().to_vec(),
        residual,
        iterations,
    }
}

/// Tries a few random directions at several scales; returns the best point if
/// it lowers the cost.
fn random_line_search<S: System + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let scale = 1.0 + x.norm();
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    for _ in 0..8 {
        let d = DVector::from_fn(x.len(), |_, _| StandardNormal.sample(rng)).normalize();
        for s in [1e-4, 1e-3, 1e-2, 1e-1] {
            for sign in [1.0, -1.0] {
                let xn = x + &d * (sign * s * scale);
                if !sys.admissible(&xn) {
                    continue;
                }
                let rn = sys.residuals(&xn);
                let cn = cost(&rn);
                if cn < best.as_ref().map_or(c, |b| b.2) {
                    best = Some((xn, rn, cn));
                }
            }
        }
    }
    best
}

/// Per-restart generator: independent streams derived from one seed.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Runs `restarts` independent solves in parallel. Start points come from
/// `start(index, rng)`; results are returned in restart order regardless of
/// scheduling.
pub fn multi_start<S, F>(
    sys: &S,
    restarts: usize,
    seed: u64,
    opts: &LmOptions,
    start: F,
) -> Vec<LmOutcome>
where
    S: System + ?Sized,
    F: Fn(usize, &mut ChaCha8Rng) -> DVector<f64> + Sync,
{
    (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = restart_rng(seed, i);
            let x0 = start(i, &mut rng);
            levenberg_marquardt(sys, x0, opts, &mut rng)
        })
        .collect()
}

/// Index of the best outcome: lowest residual, ties broken by lexicographic
/// order of the solution vector.
pub fn best_outcome(outcomes: &[LmOutcome]) -> Option<usize> {
    (0..outcomes.len()).min_by(|&a, &b| {
        let (oa, ob) = (&outcomes[a], &outcomes[b]);
        oa.residual
            .total_cmp(&ob.residual)
            .then_with(|| lex_cmp(&oa.x, &ob.x))
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Greedy clustering of points by relative distance `‖a-b‖ / max(1, ‖a‖)`.
/// Points are visited in the given order; each joins the first cluster whose
/// representative is within `tol`. Returns the member indices of each cluster.
pub fn cluster(points: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let found = clusters
            .iter_mut()
            .find(|c| relative_distance(&points[c[0]], p) <= tol);
        match found {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    clusters
}

pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    d / na.max(1.0)
}

/// Log-uniform magnitude in `[10^lo, 10^hi]` with a random sign.
pub fn signed_log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = 10f64.powf(rng.random_range(lo..hi));
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Central finite-difference Jacobian, used to check analytic Jacobians.
pub fn numeric_jacobian<S: System + ?Sized>(sys: &S, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = sys.residuals(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let step = h * (1.0 + x[k].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let col = (sys.residuals(&xp) - sys.residuals(&xm)) / (2.0 * step);
        j.set_column(k, &col);
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Circle ∩ line: x² + y² = 4, x − y = 0 → (±√2, ±√2).
    struct CircleLine;

    impl System for CircleLine {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 4.0, x[0] - x[1]])
        }
        fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 2.0 * x[1], 1.0, -1.0])
        }
    }

    #[test]
    fn converges_to_a_root() {
        let mut rng = restart_rng(1, 0);
        let out = levenberg_marquardt(
            &CircleLine,
            DVector::from_vec(vec![3.0, 0.5]),
            &LmOptions::default(),
            &mut rng,
        );
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn multi_start_is_deterministic_and_finds_both_roots() {
        let starts = |_: usize, rng: &mut ChaCha8Rng| {
            DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0))
        };
        let a = multi_start(&CircleLine, 32, 7, &LmOptions::default(), starts);
        let b = multi_start(&CircleLine, 32, 7, &LmOptions::default(), starts);
        assert_eq!(
            a.iter().map(|o| o.x.clone()).collect::<Vec<_>>(),
            b.iter().map(|o| o.x.clone()).collect::<Vec<_>>()
        );
        let good: Vec<Vec<f64>> = a
            .iter()
            .filter(|o| o.converged)
            .map(|o| o.x.clone())
            .collect();
        assert_eq!(cluster(&good, 1e-6).len(), 2);
        assert!(best_outcome(&a).is_some());
    }

    #[test]
    fn analytic_jacobian_agrees_with_numeric() {
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let diff = CircleLine.jacobian(&x) - numeric_jacobian(&CircleLine, &x, 1e-6);
        assert!(diff.norm() < 1e-8);
    }

    #[test]
    fn clustering_groups_nearby_points() {
        let pts = vec![vec![1.0, 0.0], vec![1.0 + 1e-9, 0.0], vec![-1.0, 0.0]];
        assert_eq!(cluster(&pts, 1e-6), vec![vec![0, 1], vec![2]]);
    }
}
