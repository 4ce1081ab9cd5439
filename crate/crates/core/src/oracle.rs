//! Reference solutions: closed forms for the built-in family, KKT for
//! scalar quadratic/affine instances and a grid saddle search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::builtin::weighted_log_example;
use crate::functions::{FunctionError, Problem};
use crate::numeric::exact_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid oracle needs a scalar problem with one constraint, got n={n}, m={m}")]
    Shape { n: usize, m: usize },
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error("no feasible grid point")]
    Infeasible,
    #[error("duality gap estimate {gap} exceeds tolerance {tol}")]
    Coarse { gap: f64, tol: f64 },
    #[error(transparent)]
    Function(#[from] FunctionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ClosedForm,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub f: f64,
    pub method: OracleMethod,
    /// Primal grid value minus best dual value; zero for closed forms.
    pub gap: f64,
}

/// `min sum theta_i x  s.t.  sum(-d_i log(1 + x) + b / N) <= 0` on `[lower, upper]`.
pub fn solve_example_family(
    theta: &[f64],
    d: &[f64],
    b: f64,
    lower: f64,
    upper: f64,
) -> Result<ReferenceSolution, OracleError> {
    let sd = exact_sum(d.iter().copied());
    let st = exact_sum(theta.iter().copied());
    if !(sd > 0.0) || !(b > 0.0) || theta.len() != d.len() {
        return Err(OracleError::Parameters("need sum d > 0, b > 0 and matching lengths".into()));
    }
    let x = (b / sd).exp_m1();
    if x > lower && x <= upper && st > 0.0 {
        return Ok(ReferenceSolution {
            x: vec![x],
            mu: vec![st * (1.0 + x) / sd],
            f: st * x,
            method: OracleMethod::ClosedForm,
            gap: 0.0,
        });
    }
    let p = weighted_log_example(theta, d, b, lower, upper)?;
    let radius = 10.0 * (1.0 + st.abs() * (1.0 + upper.abs()) / sd);
    brute_force_saddle(&p, 1e-5, radius, f64::INFINITY)
}

/// Scalar data `f_i = p_i x^2 / 2 + q_i x + r_i`, `g_i = a_i x + e_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadAffineAgent {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub a: f64,
    pub e: f64,
}

/// KKT solution of the aggregated scalar problem on `[lower, upper]`.
pub fn solve_quadratic_affine(
    agents: &[QuadAffineAgent],
    lower: f64,
    upper: f64,
) -> Result<ReferenceSolution, OracleError> {
    let total = |f: fn(&QuadAffineAgent) -> f64| exact_sum(agents.iter().map(f));
    let (pp, qq, rr) = (total(|a| a.p), total(|a| a.q), total(|a| a.r));
    let (aa, ee) = (total(|a| a.a), total(|a| a.e));
    let (mut lo, mut hi) = (lower, upper);
    if aa > 0.0 {
        hi = hi.min(-ee / aa);
    } else if aa < 0.0 {
        lo = lo.max(-ee / aa);
    } else if ee > 0.0 {
        return Err(OracleError::Infeasible);
    }
    if lo > hi {
        return Err(OracleError::Infeasible);
    }
    let x = if pp > 0.0 {
        (-qq / pp).clamp(lo, hi)
    } else if qq > 0.0 {
        lo
    } else {
        hi
    };
    let slope = pp * x + qq;
    let active = aa != 0.0 && (aa * x + ee).abs() <= 1e-12 * (1.0 + ee.abs());
    let mu = if active { (-slope / aa).max(0.0) } else { 0.0 };
    Ok(ReferenceSolution {
        x: vec![x],
        mu: vec![mu],
        f: 0.5 * pp * x * x + qq * x + rr,
        method: OracleMethod::ClosedForm,
        gap: 0.0,
    })
}

/// Grid min-max over `X0 x [0, dual_max]` for scalar, single-constraint problems.
pub fn brute_force_saddle(
    p: &Problem,
    resolution: f64,
    dual_max: f64,
    tol: f64,
) -> Result<ReferenceSolution, OracleError> {
    let (n, m) = (p.dim(), p.constraints());
    if n != 1 || m != 1 {
        return Err(OracleError::Shape { n, m });
    }
    let (lo, hi) = p.set().as_interval().expect("scalar set");
    let steps = ((hi - lo) / resolution).ceil().max(1.0) as usize;
    let mut fv = Vec::with_capacity(steps + 1);
    let mut gv = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let x = if j == steps { hi } else { lo + j as f64 * resolution };
        if !(0..p.agents()).all(|i| p.objective(i).in_domain(&[x])
            && p.constraint(i).components()[0].in_domain(&[x]))
        {
            continue;
        }
        xs.push(x);
        fv.push(p.total_objective(&[x])?);
        gv.push(p.total_constraint(&[x])?[0]);
    }
    // primal: lowest-index feasible minimizer
    let mut best: Option<usize> = None;
    for j in 0..xs.len() {
        if gv[j] <= 0.0 && best.is_none_or(|b| fv[j] < fv[b]) {
            best = Some(j);
        }
    }
    let best = best.ok_or(OracleError::Infeasible)?;
    let dual = |mu: f64| {
        fv.iter()
            .zip(&gv)
            .map(|(f, g)| f + mu * g)
            .fold(f64::INFINITY, f64::min)
    };
    // golden-section search on the concave dual function
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, dual_max);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut qc, mut qd) = (dual(c), dual(d));
    for _ in 0..200 {
        if qc >= qd {
            b = d;
            d = c;
            qd = qc;
            c = b - phi * (b - a);
            qc = dual(c);
        } else {
            a = c;
            c = d;
            qc = qd;
            d = a + phi * (b - a);
            qd = dual(d);
        }
        if b - a <= 1e-13 * dual_max.max(1.0) {
            break;
        }
    }
    let mut mu = 0.5 * (a + b);
    // a maximizer at the origin is exact
    if dual(0.0) >= dual(mu) {
        mu = 0.0;
    }
    let gap = fv[best] - dual(mu);
    if gap > tol {
        return Err(OracleError::Coarse { gap, tol });
    }
    Ok(ReferenceSolution {
        x: vec![xs[best]],
        mu: vec![mu],
        f: fv[best],
        method: OracleMethod::Grid,
        gap,
    })
}

/// Checks `L(x*, mu) <= L(x*, mu*) + tol <= L(x, mu*) + 2 tol` on random
/// `(x, mu)` in `X0 x [0, dual_max]^m`; returns the largest violation.
pub fn saddle_violation(p: &Problem, sol: &ReferenceSolution, dual_max: f64, samples: usize, seed: u64) -> Result<f64, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = p.lagrangian(&sol.x, &sol.mu)?;
    let mut worst = f64::NEG_INFINITY;
    let xs = p.set().sample(samples, seed);
    for x in xs.iter().take(samples.max(1)) {
        let mu: Vec<f64> = (0..p.constraints()).map(|_| dual_max * rng.random::<f64>()).collect();
        let left = p.lagrangian(&sol.x, &mu)? - center;
        let right = center - p.lagrangian(x, &sol.mu)?;
        worst = worst.max(left).max(right);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{paper_example, paper_example_weights};
    use crate::functions::{ConvexFunction, FeasibleSet, VectorConstraint};

    #[test]
    fn resource_closed_form() {
        let (theta, d) = paper_example_weights(100);
        let sol = solve_example_family(&theta, &d, 5.0, 0.0, 1.0).unwrap();
        let x = 0.1f64.exp() - 1.0;
        assert!((sol.x[0] - x).abs() < 1e-14);
        assert!((sol.x[0] - 0.1052).abs() < 1e-4);
        assert!((sol.f - 50.5 * x).abs() < 1e-12);
        assert!((sol.f - 5.3111).abs() < 1e-4);
        assert!((sol.mu[0] - 50.5 * 0.1f64.exp() / 50.0).abs() < 1e-12);
        assert!((sol.mu[0] - 1.1162).abs() < 1e-4);
    }

    #[test]
    fn vanishing_budget() {
        let (theta, d) = paper_example_weights(10);
        let sol = solve_example_family(&theta, &d, 1e-9, 0.0, 1.0).unwrap();
        assert!(sol.x[0] < 1e-9 && sol.f < 1e-8);
    }

    #[test]
    fn resource_grid_agrees_with_closed_form() {
        let p = paper_example(100, 5.0).unwrap();
        let grid = brute_force_saddle(&p, 1e-5, 5.0, 1e-3).unwrap();
        let (theta, d) = paper_example_weights(100);
        let exact = solve_example_family(&theta, &d, 5.0, 0.0, 1.0).unwrap();
        assert!((grid.x[0] - exact.x[0]).abs() <= 1e-4);
        // objective is 50.5-Lipschitz, so f inherits the grid spacing times that
        assert!((grid.f - exact.f).abs() <= 50.5 * 1e-5);
        assert!((grid.mu[0] - exact.mu[0]).abs() <= 1e-4);
        assert!(saddle_violation(&p, &exact, 5.0, 100, 1).unwrap() <= 1e-9);
    }

    #[test]
    fn inactive_constraint_grid() {
        // (x - 3)^2 / 2 on [0, 10], g = -1
        let f = ConvexFunction::quadratic(vec![vec![1.0]], vec![-3.0], 4.5).unwrap();
        let g = VectorConstraint::new(vec![ConvexFunction::constant(1, -1.0)]);
        let p = Problem::new(vec![f], vec![g], FeasibleSet::interval(0.0, 10.0)).unwrap();
        let sol = brute_force_saddle(&p, 1e-4, 10.0, 1e-6).unwrap();
        assert!((sol.x[0] - 3.0).abs() <= 1e-4);
        assert_eq!(sol.mu[0], 0.0);
        assert!(sol.f.abs() <= 1e-8);
    }

    #[test]
    fn kkt_matches_grid_on_three_agents() {
        let c = [1.0, 2.0, 4.0];
        let t = [0.5, 0.3, 0.4];
        let agents: Vec<QuadAffineAgent> = c
            .iter()
            .zip(&t)
            .map(|(ci, ti)| QuadAffineAgent {
                p: 1.0,
                q: -ci,
                r: ci * ci / 2.0,
                a: 1.0,
                e: -ti,
            })
            .collect();
        let kkt = solve_quadratic_affine(&agents, -5.0, 5.0).unwrap();
        // sum t / 3 = 0.4 is below mean c = 7/3, so x* = 0.4 and 3 mu* = 7 - 3 (0.4)
        assert!((kkt.x[0] - 0.4).abs() < 1e-15);
        assert!((kkt.mu[0] - (7.0 - 1.2) / 3.0).abs() < 1e-12);
        let f = agents
            .iter()
            .map(|a| ConvexFunction::quadratic(vec![vec![a.p]], vec![a.q], a.r).unwrap())
            .collect();
        let g = agents
            .iter()
            .map(|a| VectorConstraint::new(vec![ConvexFunction::affine(vec![a.a], a.e)]))
            .collect();
        let p = Problem::new(f, g, FeasibleSet::interval(-5.0, 5.0)).unwrap();
        let grid = brute_force_saddle(&p, 1e-4, 20.0, 1e-2).unwrap();
        assert!((grid.x[0] - kkt.x[0]).abs() <= 1e-4);
        assert!((grid.mu[0] - kkt.mu[0]).abs() <= 1e-3);
        assert!(saddle_violation(&p, &kkt, 20.0, 100, 3).unwrap() <= 1e-9);
    }

    #[test]
    fn coarse_and_wrong_shapes() {
        let f = ConvexFunction::affine(vec![1.0, 1.0], 0.0);
        let p = Problem::new(
            vec![f],
            vec![VectorConstraint::empty()],
            FeasibleSet::Box {
                lower: vec![0.0, 0.0],
                upper: vec![1.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(brute_force_saddle(&p, 0.1, 1.0, 1.0), Err(OracleError::Shape { n: 2, m: 0 }));
        let q = paper_example(100, 5.0).unwrap();
        assert!(matches!(brute_force_saddle(&q, 0.25, 5.0, 1e-9), Err(OracleError::Coarse { .. })));
    }
}
