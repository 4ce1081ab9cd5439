//! Per-agent proximal subproblems.
//!
//! The primal step minimizes `L_i(x, mu_hat) + ||x - x_hat||^2 / (2 alpha)`
//! over `X0`. Strategy ladder: closed form (quadratic families, and the
//! scalar affine/quadratic + neglog case through its quadratic stationarity
//! equation), then derivative bisection for scalar problems, otherwise
//! [`ProxError::Unsupported`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::functions::{ConvexFunction, FeasibleSet, FunctionError, VectorConstraint};
use crate::numeric::{dist, norm};

/// Inner tolerance used by the solver engines.
pub const DEFAULT_PROX_TOL: f64 = 1e-10;

/// Iteration cap for derivative bisection.
pub const BISECTION_CAP: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("stepsize must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("no closed form for a {dim}-dimensional problem: {reason}")]
    Unsupported { dim: usize, reason: &'static str },
    #[error("bisection did not reach tolerance within {0} steps")]
    NoConvergence(usize),
    #[error("feasible set does not meet the function domain")]
    EmptyDomain,
    #[error(transparent)]
    Function(#[from] FunctionError),
}

/// One primal proximal subproblem.
#[derive(Debug, Clone, Copy)]
pub struct ProxQuery<'a> {
    pub objective: &'a ConvexFunction,
    pub constraint: &'a VectorConstraint,
    /// Multiplier weighting the constraint rows; nonnegative.
    pub multiplier: &'a [f64],
    pub anchor: &'a [f64],
    pub step: f64,
    pub set: &'a FeasibleSet,
}

impl ProxQuery<'_> {
    /// `f(x) + mu^T g(x)`
    pub fn objective_value(&self, x: &[f64]) -> Result<f64, FunctionError> {
        crate::functions::local_lagrangian(self.objective, self.constraint, x, self.multiplier)
    }

    /// Objective plus the proximal penalty.
    pub fn value(&self, x: &[f64]) -> Result<f64, FunctionError> {
        let d = dist(x, self.anchor);
        Ok(self.objective_value(x)? + d * d / (2.0 * self.step))
    }
}

/// `h = x^T P x / 2 + q^T x + r - D log(1 + x_0)`, the flattened composite.
#[derive(Debug, Clone)]
struct Canonical {
    n: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    neglog: f64,
}

impl Canonical {
    fn new(n: usize) -> Self {
        Self {
            n,
            p: vec![0.0; n * n],
            q: vec![0.0; n],
            neglog: 0.0,
        }
    }

    fn add(&mut self, f: &ConvexFunction, w: f64) {
        if w == 0.0 {
            return;
        }
        match f {
            ConvexFunction::Affine { c, .. } => {
                for (q, c) in self.q.iter_mut().zip(c) {
                    *q += w * c;
                }
            }
            ConvexFunction::Quadratic { p, q, .. } => {
                for i in 0..self.n {
                    self.q[i] += w * q[i];
                    for j in 0..self.n {
                        self.p[i * self.n + j] += w * p[i][j];
                    }
                }
            }
            ConvexFunction::Neglog { d, .. } => self.neglog += w * d,
            ConvexFunction::Sum { terms } => {
                for t in terms {
                    self.add(t, w);
                }
            }
        }
    }

    fn from_query(q: &ProxQuery<'_>) -> Self {
        let mut c = Canonical::new(q.anchor.len());
        c.add(q.objective, 1.0);
        for (g, m) in q.constraint.components().iter().zip(q.multiplier) {
            c.add(g, *m);
        }
        c
    }

    fn is_zero_quadratic(&self) -> bool {
        self.p.iter().all(|v| *v == 0.0)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if i != j && self.p[i * n + j] != 0.0 {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.p[i * n + i]).collect())
    }

    /// Derivative of the scalar prox objective.
    fn scalar_slope(&self, x: f64, anchor: f64, step: f64) -> f64 {
        let barrier = if self.neglog != 0.0 { self.neglog / (1.0 + x) } else { 0.0 };
        self.p[0] * x + self.q[0] - barrier + (x - anchor) / step
    }

    fn scalar_slope_scale(&self, x: f64, anchor: f64, step: f64) -> f64 {
        let barrier = if self.neglog != 0.0 { self.neglog / (1.0 + x) } else { 0.0 };
        1.0 + (self.p[0] * x).abs() + self.q[0].abs() + barrier + ((x - anchor) / step).abs()
    }
}

/// Unconstrained prox of a quadratic: `(I + alpha P)^{-1} (v - alpha q)`.
pub fn prox_quadratic(
    p: &[Vec<f64>],
    q: &[f64],
    v: &[f64],
    step: f64,
) -> Result<Vec<f64>, ProxError> {
    if !(step > 0.0) {
        return Err(ProxError::NonPositiveStep(step));
    }
    let n = v.len();
    if q.len() != n || p.len() != n {
        return Err(FunctionError::Dimension {
            expected: n,
            got: q.len(),
        }
        .into());
    }
    let flat: Vec<f64> = p.iter().flatten().copied().collect();
    Ok(solve_shifted(n, &flat, q, v, step))
}

fn solve_shifted(n: usize, p: &[f64], q: &[f64], v: &[f64], step: f64) -> Vec<f64> {
    if n == 1 {
        return vec![(v[0] - step * q[0]) / (1.0 + step * p[0])];
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        step * p[i * n + j] + if i == j { 1.0 } else { 0.0 }
    });
    let rhs = DVector::from_fn(n, |i, _| v[i] - step * q[i]);
    // I + alpha P is positive definite for P psd
    let chol = m.cholesky().expect("I + alpha P is positive definite");
    chol.solve(&rhs).iter().copied().collect()
}

/// Componentwise prox of `-alpha sum log x_i`: `(v_i + sqrt(v_i^2 + 4 alpha)) / 2`.
pub fn prox_log_barrier(v: &[f64], step: f64) -> Vec<f64> {
    v.iter()
        .map(|&vi| {
            let s = (vi * vi + 4.0 * step).sqrt();
            // cancellation-free branch for negative inputs
            if vi >= 0.0 {
                0.5 * (vi + s)
            } else {
                2.0 * step / (s - vi)
            }
        })
        .collect()
}

/// Solves a primal prox subproblem to tolerance `tol`.
pub fn prox_solve(query: &ProxQuery<'_>, tol: f64) -> Result<Vec<f64>, ProxError> {
    let step = query.step;
    if !(step > 0.0) {
        return Err(ProxError::NonPositiveStep(step));
    }
    let canon = Canonical::from_query(query);
    let n = canon.n;
    if n == 1 {
        let (lo, hi) = query.set.as_interval().expect("one-dimensional set");
        let anchor = query.anchor[0];
        if let Some(x) = scalar_closed_form(&canon, anchor, step, lo, hi)? {
            if scalar_certified(&canon, x, anchor, step, lo, hi, tol) {
                return Ok(vec![x]);
            }
        }
        return scalar_bisection(&canon, anchor, step, lo, hi, tol).map(|x| vec![x]);
    }
    if canon.neglog != 0.0 {
        return Err(ProxError::Unsupported {
            dim: n,
            reason: "logarithmic term in more than one dimension",
        });
    }
    let unconstrained = solve_shifted(n, &canon.p, &canon.q, query.anchor, step);
    if query.set.contains(&unconstrained, 0.0) {
        return Ok(unconstrained);
    }
    if canon.is_zero_quadratic() {
        let shifted: Vec<f64> = query
            .anchor
            .iter()
            .zip(&canon.q)
            .map(|(a, q)| a - step * q)
            .collect();
        return Ok(query.set.project(&shifted));
    }
    if let Some(diag) = canon.diagonal() {
        if diag.iter().all(|d| *d == diag[0]) {
            // isotropic: the objective is a scaled distance to the unconstrained point
            return Ok(query.set.project(&unconstrained));
        }
        if matches!(query.set, FeasibleSet::Box { .. }) {
            return Ok(query.set.project(&unconstrained));
        }
    }
    Err(ProxError::Unsupported {
        dim: n,
        reason: "coupled quadratic with an active non-box constraint",
    })
}

/// Minimizer of the strongly convex scalar prox objective on `[lo, hi]`.
///
/// Stationarity multiplied through by `alpha (1 + x)` is
/// `A x^2 + B x + C = 0` with `A = alpha p + 1`,
/// `B = alpha p + alpha q + 1 - x_hat`, `C = alpha q - x_hat - alpha D`.
/// At `x = -1` the quadratic equals `-alpha D < 0`, so exactly one root lies
/// in the domain `x > -1`: the larger one.
fn scalar_closed_form(
    c: &Canonical,
    anchor: f64,
    step: f64,
    lo: f64,
    hi: f64,
) -> Result<Option<f64>, ProxError> {
    let (p, q, d) = (c.p[0], c.q[0], c.neglog);
    let root = if d == 0.0 {
        (anchor - step * q) / (1.0 + step * p)
    } else {
        if hi <= -1.0 {
            return Err(ProxError::EmptyDomain);
        }
        let a = step * p + 1.0;
        let b = step * p + step * q + 1.0 - anchor;
        let cc = step * q - anchor - step * d;
        let disc = b * b - 4.0 * a * cc;
        if !(disc >= 0.0) || !disc.is_finite() {
            return Ok(None);
        }
        let sq = disc.sqrt();
        if b >= 0.0 {
            2.0 * cc / (-b - sq)
        } else {
            (-b + sq) / (2.0 * a)
        }
    };
    if !root.is_finite() {
        return Ok(None);
    }
    Ok(Some(root.clamp(lo, hi)))
}

fn scalar_certified(c: &Canonical, x: f64, anchor: f64, step: f64, lo: f64, hi: f64, tol: f64) -> bool {
    if c.neglog != 0.0 && x <= -1.0 {
        return false;
    }
    let slope = c.scalar_slope(x, anchor, step);
    let scale = c.scalar_slope_scale(x, anchor, step);
    let band = tol * scale;
    if x <= lo {
        slope >= -band
    } else if x >= hi {
        slope <= band
    } else {
        slope.abs() <= band
    }
}

fn scalar_bisection(
    c: &Canonical,
    anchor: f64,
    step: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, ProxError> {
    let mut lo = lo;
    let mut hi = hi;
    if c.neglog != 0.0 && lo <= -1.0 {
        if hi <= -1.0 {
            return Err(ProxError::EmptyDomain);
        }
        // slope tends to -inf at the domain edge
        lo = -1.0 + f64::EPSILON;
    }
    if c.scalar_slope(lo, anchor, step) >= 0.0 {
        return Ok(lo);
    }
    if c.scalar_slope(hi, anchor, step) <= 0.0 {
        return Ok(hi);
    }
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * mid.abs().max(1.0) || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if c.scalar_slope(mid, anchor, step) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(ProxError::NoConvergence(BISECTION_CAP))
}

/// Scalar prox by derivative bisection only, skipping the closed form.
pub fn prox_solve_bisection(query: &ProxQuery<'_>, tol: f64) -> Result<Vec<f64>, ProxError> {
    if !(query.step > 0.0) {
        return Err(ProxError::NonPositiveStep(query.step));
    }
    let canon = Canonical::from_query(query);
    let (lo, hi) = query.set.as_interval().ok_or(ProxError::Unsupported {
        dim: canon.n,
        reason: "bisection needs a scalar problem",
    })?;
    scalar_bisection(&canon, query.anchor[0], query.step, lo, hi, tol).map(|x| vec![x])
}

/// `inf_{x in X0} f(x) + mu^T g(x)` and its minimizer.
pub fn minimize_over_set(
    objective: &ConvexFunction,
    constraint: &VectorConstraint,
    multiplier: &[f64],
    set: &FeasibleSet,
    tol: f64,
) -> Result<(Vec<f64>, f64), ProxError> {
    let n = set.dim();
    let mut canon = Canonical::new(n);
    canon.add(objective, 1.0);
    for (g, m) in constraint.components().iter().zip(multiplier) {
        canon.add(g, *m);
    }
    let value = |x: &[f64]| {
        crate::functions::local_lagrangian(objective, constraint, x, multiplier)
    };
    if n == 1 {
        let (mut lo, mut hi) = set.as_interval().expect("one-dimensional set");
        if canon.neglog != 0.0 && lo <= -1.0 {
            lo = -1.0 + f64::EPSILON;
        }
        // slope of h alone is nondecreasing by convexity
        let slope = |x: f64| {
            let barrier = if canon.neglog != 0.0 { canon.neglog / (1.0 + x) } else { 0.0 };
            canon.p[0] * x + canon.q[0] - barrier
        };
        let x = if slope(lo) >= 0.0 {
            lo
        } else if slope(hi) <= 0.0 {
            hi
        } else {
            let mut done = None;
            for _ in 0..BISECTION_CAP {
                let mid = 0.5 * (lo + hi);
                if hi - lo <= tol * mid.abs().max(1.0) || mid <= lo || mid >= hi {
                    done = Some(mid);
                    break;
                }
                if slope(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            done.ok_or(ProxError::NoConvergence(BISECTION_CAP))?
        };
        let v = value(&[x])?;
        return Ok((vec![x], v));
    }
    if canon.neglog == 0.0 && canon.is_zero_quadratic() {
        // linear objective: extreme point in the direction -q
        let q = &canon.q;
        let x: Vec<f64> = match set {
            FeasibleSet::Box { lower, upper } => q
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(c, (l, u))| if *c > 0.0 { *l } else { *u })
                .collect(),
            FeasibleSet::Ball { center, radius } => {
                let nq = norm(q);
                if nq == 0.0 {
                    center.clone()
                } else {
                    center.iter().zip(q).map(|(c, v)| c - radius * v / nq).collect()
                }
            }
            FeasibleSet::NonnegBall { radius, .. } => {
                let neg: Vec<f64> = q.iter().map(|v| (-v).max(0.0)).collect();
                let nn = norm(&neg);
                if nn == 0.0 {
                    vec![0.0; n]
                } else {
                    neg.iter().map(|v| radius * v / nn).collect()
                }
            }
        };
        let v = value(&x)?;
        return Ok((x, v));
    }
    Err(ProxError::Unsupported {
        dim: n,
        reason: "set minimization of a non-linear objective in several dimensions",
    })
}

/// Dual step in projection form: `P_U(mu_hat + alpha g)`.
pub fn dual_prox_solve(g_val: &[f64], mu_hat: &[f64], step: f64, set: &FeasibleSet) -> Vec<f64> {
    let z: Vec<f64> = mu_hat.iter().zip(g_val).map(|(m, g)| m + step * g).collect();
    set.project(&z)
}

/// Dual step in argmax form over `{mu >= 0, ||mu|| <= radius}`:
/// maximizes `mu^T g - ||mu - mu_hat||^2 / (2 alpha)`.
///
/// Relaxes the ball with a multiplier `nu >= 0`, maximizes the separable
/// remainder per component, and bisects on `nu` until the ball constraint
/// is tight (or inactive at `nu = 0`).
pub fn dual_prox_argmax(g_val: &[f64], mu_hat: &[f64], step: f64, radius: f64) -> Vec<f64> {
    let inner = |nu: f64| -> Vec<f64> {
        g_val
            .iter()
            .zip(mu_hat)
            .map(|(g, m)| ((m / step + g) / (1.0 / step + 2.0 * nu)).max(0.0))
            .collect()
    };
    let free = inner(0.0);
    if norm(&free) <= radius {
        return free;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while norm(&inner(hi)) > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm(&inner(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    inner(hi)
}
