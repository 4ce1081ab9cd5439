//! Built-in problem instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::functions::{ConvexFunction, FeasibleSet, FunctionError, Problem, VectorConstraint};
use crate::oracle::QuadAffineAgent;

/// Weights of the resource example: `theta_i = i / N`, `d_i = i / (N + 1)`.
pub fn paper_example_weights(agents: usize) -> (Vec<f64>, Vec<f64>) {
    let n = agents as f64;
    let theta = (1..=agents).map(|i| i as f64 / n).collect();
    let d = (1..=agents).map(|i| i as f64 / (n + 1.0)).collect();
    (theta, d)
}

/// `f_i(x) = theta_i x`, `g_i(x) = -d_i log(1 + x) + b / N` on `[0, 1]`.
pub fn paper_example(agents: usize, b: f64) -> Result<Problem, FunctionError> {
    let (theta, d) = paper_example_weights(agents);
    weighted_log_example(&theta, &d, b, 0.0, 1.0)
}

/// The same family with arbitrary weights and interval.
pub fn weighted_log_example(
    theta: &[f64],
    d: &[f64],
    b: f64,
    lower: f64,
    upper: f64,
) -> Result<Problem, FunctionError> {
    let n = theta.len() as f64;
    let f = theta.iter().map(|t| ConvexFunction::affine(vec![*t], 0.0)).collect();
    let g = d
        .iter()
        .map(|di| Ok(VectorConstraint::new(vec![ConvexFunction::neglog(*di, b / n)?])))
        .collect::<Result<Vec<_>, FunctionError>>()?;
    Problem::new(f, g, FeasibleSet::interval(lower, upper))
}

/// Interval of [`random_quadratic_affine`] instances.
pub const RANDOM_INTERVAL: (f64, f64) = (-1.0, 2.0);

/// Seeded scalar instance with `f_i = p_i x^2 / 2 + q_i x + r_i` and
/// `g_i = a_i x + e_i` on [`RANDOM_INTERVAL`]; `x = -1` is strictly feasible.
pub fn random_quadratic_affine(agents: usize, seed: u64) -> Result<(Problem, Vec<QuadAffineAgent>), FunctionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<QuadAffineAgent> = (0..agents)
        .map(|_| QuadAffineAgent {
            p: rng.random_range(0.5..2.0),
            q: rng.random_range(-2.0..2.0),
            r: rng.random_range(-1.0..1.0),
            a: rng.random_range(0.5..1.5),
            e: rng.random_range(-1.0..0.2),
        })
        .collect();
    let f = data
        .iter()
        .map(|d| ConvexFunction::quadratic(vec![vec![d.p]], vec![d.q], d.r))
        .collect::<Result<Vec<_>, _>>()?;
    let g = data
        .iter()
        .map(|d| VectorConstraint::new(vec![ConvexFunction::affine(vec![d.a], d.e)]))
        .collect();
    let (lo, hi) = RANDOM_INTERVAL;
    Ok((Problem::new(f, g, FeasibleSet::interval(lo, hi))?, data))
}
