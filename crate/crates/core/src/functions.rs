//! Convex function families, feasible sets and the multi-agent problem.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{dist, exact_sum, norm, ExactSum};

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionError {
    #[error("point {0:?} is outside the function domain")]
    Domain(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("quadratic matrix is not symmetric")]
    NotSymmetric,
    #[error("quadratic matrix is not positive semidefinite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("neglog weight d = {0} must be nonnegative")]
    NegativeWeight(f64),
    #[error("non-finite parameter")]
    NonFinite,
    #[error("sum of no terms")]
    EmptySum,
    #[error("dual component {index} is negative ({value})")]
    NegativeDual { index: usize, value: f64 },
    #[error("invalid feasible set: {0}")]
    BadSet(String),
    #[error("problem has {objectives} objectives but {constraints} constraint maps")]
    AgentCount {
        objectives: usize,
        constraints: usize,
    },
    #[error("agent {agent}: {reason}")]
    Agent { agent: usize, reason: String },
}

/// A convex function from a closed family, so proximal steps can dispatch
/// to closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexFunction {
    /// `c^T x + r`
    Affine {
        c: Vec<f64>,
        #[serde(default)]
        r: f64,
    },
    /// `x^T P x / 2 + q^T x + r`, `P` symmetric positive semidefinite.
    Quadratic {
        p: Vec<Vec<f64>>,
        q: Vec<f64>,
        #[serde(default)]
        r: f64,
    },
    /// Scalar `-d log(1 + x) + c` on `x > -1`, `d >= 0`.
    Neglog {
        d: f64,
        #[serde(default)]
        c: f64,
    },
    Sum { terms: Vec<ConvexFunction> },
}

impl ConvexFunction {
    pub fn affine(c: Vec<f64>, r: f64) -> Self {
        ConvexFunction::Affine { c, r }
    }

    pub fn constant(n: usize, r: f64) -> Self {
        ConvexFunction::Affine { c: vec![0.0; n], r }
    }

    pub fn quadratic(p: Vec<Vec<f64>>, q: Vec<f64>, r: f64) -> Result<Self, FunctionError> {
        let f = ConvexFunction::Quadratic { p, q, r };
        f.validate()?;
        Ok(f)
    }

    pub fn neglog(d: f64, c: f64) -> Result<Self, FunctionError> {
        let f = ConvexFunction::Neglog { d, c };
        f.validate()?;
        Ok(f)
    }

    pub fn sum(terms: Vec<ConvexFunction>) -> Result<Self, FunctionError> {
        let f = ConvexFunction::Sum { terms };
        f.validate()?;
        Ok(f)
    }

    /// Checks the family invariants and returns the input dimension.
    pub fn validate(&self) -> Result<usize, FunctionError> {
        match self {
            ConvexFunction::Affine { c, r } => {
                if !r.is_finite() || c.iter().any(|v| !v.is_finite()) {
                    return Err(FunctionError::NonFinite);
                }
                Ok(c.len())
            }
            ConvexFunction::Quadratic { p, q, r } => {
                let n = q.len();
                if p.len() != n {
                    return Err(FunctionError::Dimension {
                        expected: n,
                        got: p.len(),
                    });
                }
                for row in p {
                    if row.len() != n {
                        return Err(FunctionError::Dimension {
                            expected: n,
                            got: row.len(),
                        });
                    }
                }
                if !r.is_finite() || q.iter().chain(p.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err(FunctionError::NonFinite);
                }
                let scale = p.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
                for i in 0..n {
                    for j in 0..i {
                        if (p[i][j] - p[j][i]).abs() > 1e-12 * scale {
                            return Err(FunctionError::NotSymmetric);
                        }
                    }
                }
                if n > 0 {
                    let m = DMatrix::from_fn(n, n, |i, j| p[i][j]);
                    let min = SymmetricEigen::new(m).eigenvalues.min();
                    if min < -PSD_TOL {
                        return Err(FunctionError::NotPsd(min));
                    }
                }
                Ok(n)
            }
            ConvexFunction::Neglog { d, c } => {
                if !d.is_finite() || !c.is_finite() {
                    return Err(FunctionError::NonFinite);
                }
                if *d < 0.0 {
                    return Err(FunctionError::NegativeWeight(*d));
                }
                Ok(1)
            }
            ConvexFunction::Sum { terms } => {
                let first = terms.first().ok_or(FunctionError::EmptySum)?.validate()?;
                for t in &terms[1..] {
                    let n = t.validate()?;
                    if n != first {
                        return Err(FunctionError::Dimension {
                            expected: first,
                            got: n,
                        });
                    }
                }
                Ok(first)
            }
        }
    }

    /// Input dimension; assumes a validated function.
    pub fn dim(&self) -> usize {
        match self {
            ConvexFunction::Affine { c, .. } => c.len(),
            ConvexFunction::Quadratic { q, .. } => q.len(),
            ConvexFunction::Neglog { .. } => 1,
            ConvexFunction::Sum { terms } => terms.first().map_or(0, |t| t.dim()),
        }
    }

    pub fn uses_neglog(&self) -> bool {
        match self {
            ConvexFunction::Neglog { d, .. } => *d != 0.0,
            ConvexFunction::Sum { terms } => terms.iter().any(|t| t.uses_neglog()),
            _ => false,
        }
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        match self {
            ConvexFunction::Neglog { d, .. } => *d == 0.0 || x[0] > -1.0,
            ConvexFunction::Sum { terms } => terms.iter().all(|t| t.in_domain(x)),
            _ => true,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<(), FunctionError> {
        if x.len() != self.dim() {
            return Err(FunctionError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.in_domain(x) {
            return Err(FunctionError::Domain(x.to_vec()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, FunctionError> {
        self.check_point(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ConvexFunction::Affine { c, r } => c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + r,
            ConvexFunction::Quadratic { p, q, r } => {
                let quad: f64 = p
                    .iter()
                    .zip(x)
                    .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                0.5 * quad + q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + r
            }
            ConvexFunction::Neglog { d, c } => {
                if *d == 0.0 {
                    *c
                } else {
                    -d * x[0].ln_1p() + c
                }
            }
            ConvexFunction::Sum { terms } => exact_sum(terms.iter().map(|t| t.eval_unchecked(x))),
        }
    }

    /// A subgradient; every family here is differentiable on its domain.
    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>, FunctionError> {
        self.check_point(x)?;
        let mut g = vec![0.0; x.len()];
        self.add_gradient(x, 1.0, &mut g);
        Ok(g)
    }

    fn add_gradient(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            ConvexFunction::Affine { c, .. } => {
                for (o, ci) in out.iter_mut().zip(c) {
                    *o += weight * ci;
                }
            }
            ConvexFunction::Quadratic { p, q, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let px: f64 = p[i].iter().zip(x).map(|(a, b)| a * b).sum();
                    *o += weight * (px + q[i]);
                }
            }
            ConvexFunction::Neglog { d, .. } => {
                if *d != 0.0 {
                    out[0] += weight * (-d / (1.0 + x[0]));
                }
            }
            ConvexFunction::Sum { terms } => {
                for t in terms {
                    t.add_gradient(x, weight, out);
                }
            }
        }
    }

    /// `w * self` for `w >= 0`, staying inside the family.
    pub fn scaled(&self, w: f64) -> Self {
        match self {
            ConvexFunction::Affine { c, r } => ConvexFunction::Affine {
                c: c.iter().map(|v| w * v).collect(),
                r: w * r,
            },
            ConvexFunction::Quadratic { p, q, r } => ConvexFunction::Quadratic {
                p: p.iter().map(|row| row.iter().map(|v| w * v).collect()).collect(),
                q: q.iter().map(|v| w * v).collect(),
                r: w * r,
            },
            ConvexFunction::Neglog { d, c } => ConvexFunction::Neglog { d: w * d, c: w * c },
            ConvexFunction::Sum { terms } => ConvexFunction::Sum {
                terms: terms.iter().map(|t| t.scaled(w)).collect(),
            },
        }
    }
}

/// The local constraint map `g_i : R^n -> R^m`, one convex function per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorConstraint(pub Vec<ConvexFunction>);

impl VectorConstraint {
    pub fn new(components: Vec<ConvexFunction>) -> Self {
        VectorConstraint(components)
    }

    pub fn empty() -> Self {
        VectorConstraint(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn components(&self) -> &[ConvexFunction] {
        &self.0
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, FunctionError> {
        self.0.iter().map(|g| g.eval(x)).collect()
    }

    /// Rows are component gradients.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, FunctionError> {
        self.0.iter().map(|g| g.subgradient(x)).collect()
    }
}

/// Closed convex compact sets with cheap Euclidean projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeasibleSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x >= 0, ||x|| <= radius}`, the dual multiplier set.
    NonnegBall { dim: usize, radius: f64 },
}

impl FeasibleSet {
    pub fn interval(lower: f64, upper: f64) -> Self {
        FeasibleSet::Box {
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    pub fn dual(dim: usize, radius: f64) -> Self {
        FeasibleSet::NonnegBall { dim, radius }
    }

    pub fn validate(&self) -> Result<(), FunctionError> {
        match self {
            FeasibleSet::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(FunctionError::BadSet("bound lengths differ".into()));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if !l.is_finite() || !u.is_finite() || l > u {
                        return Err(FunctionError::BadSet(format!("empty or unbounded interval [{l}, {u}]")));
                    }
                }
                Ok(())
            }
            FeasibleSet::Ball { center, radius } => {
                if !radius.is_finite() || *radius < 0.0 || center.iter().any(|c| !c.is_finite()) {
                    return Err(FunctionError::BadSet(format!("radius {radius}")));
                }
                Ok(())
            }
            FeasibleSet::NonnegBall { radius, .. } => {
                if !radius.is_finite() || *radius < 0.0 {
                    return Err(FunctionError::BadSet(format!("radius {radius}")));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::NonnegBall { dim, .. } => *dim,
        }
    }

    /// Euclidean projection.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            FeasibleSet::Ball { center, radius } => {
                let d = dist(z, center);
                if d <= *radius {
                    z.to_vec()
                } else {
                    let mut s = radius / d;
                    loop {
                        let out: Vec<f64> = z.iter().zip(center).map(|(v, c)| c + s * (v - c)).collect();
                        // rescaling may round a hair outside the ball
                        if dist(&out, center) <= *radius {
                            return out;
                        }
                        s *= 1.0 - 4.0 * f64::EPSILON;
                    }
                }
            }
            FeasibleSet::NonnegBall { radius, .. } => {
                // orthant first, then radial scaling
                let clipped: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
                let n = norm(&clipped);
                if n <= *radius {
                    clipped
                } else {
                    let mut s = radius / n;
                    loop {
                        let out: Vec<f64> = clipped.iter().map(|v| s * v).collect();
                        if norm(&out) <= *radius {
                            return out;
                        }
                        s *= 1.0 - 4.0 * f64::EPSILON;
                    }
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            FeasibleSet::Ball { center, radius } => dist(x, center) <= radius + tol,
            FeasibleSet::NonnegBall { radius, .. } => {
                x.iter().all(|v| *v >= -tol) && norm(x) <= radius + tol
            }
        }
    }

    /// Smallest value coordinate `i` can take in the set.
    pub fn coordinate_min(&self, i: usize) -> f64 {
        match self {
            FeasibleSet::Box { lower, .. } => lower[i],
            FeasibleSet::Ball { center, radius } => center[i] - radius,
            FeasibleSet::NonnegBall { .. } => 0.0,
        }
    }

    /// `[lo, hi]` for one-dimensional sets.
    pub fn as_interval(&self) -> Option<(f64, f64)> {
        if self.dim() != 1 {
            return None;
        }
        Some(match self {
            FeasibleSet::Box { lower, upper } => (lower[0], upper[0]),
            FeasibleSet::Ball { center, radius } => (center[0] - radius, center[0] + radius),
            FeasibleSet::NonnegBall { radius, .. } => (0.0, *radius),
        })
    }

    /// Deterministic sample: extreme points plus `count` uniform draws.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        match self {
            FeasibleSet::Box { lower, upper } => {
                if n <= 12 {
                    for mask in 0u32..(1u32 << n) {
                        pts.push(
                            (0..n)
                                .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                                .collect(),
                        );
                    }
                }
                for _ in 0..count {
                    pts.push(
                        (0..n)
                            .map(|i| lower[i] + (upper[i] - lower[i]) * rng.random::<f64>())
                            .collect(),
                    );
                }
            }
            FeasibleSet::Ball { center, radius } => {
                pts.push(center.clone());
                for i in 0..n {
                    for sgn in [-1.0, 1.0] {
                        let mut p = center.clone();
                        p[i] += sgn * radius;
                        pts.push(p);
                    }
                }
                for _ in 0..count {
                    let z: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                    let p: Vec<f64> = z.iter().zip(center).map(|(v, c)| c + radius * v).collect();
                    pts.push(self.project(&p));
                }
            }
            FeasibleSet::NonnegBall { radius, .. } => {
                pts.push(vec![0.0; n]);
                for i in 0..n {
                    let mut p = vec![0.0; n];
                    p[i] = *radius;
                    pts.push(p);
                }
                for _ in 0..count {
                    let p: Vec<f64> = (0..n).map(|_| radius * rng.random::<f64>()).collect();
                    pts.push(self.project(&p));
                }
            }
        }
        pts
    }
}

/// `f_i(x) + mu^T g_i(x)`.
pub fn local_lagrangian(
    fi: &ConvexFunction,
    gi: &VectorConstraint,
    x: &[f64],
    mu: &[f64],
) -> Result<f64, FunctionError> {
    if mu.len() != gi.len() {
        return Err(FunctionError::Dimension {
            expected: gi.len(),
            got: mu.len(),
        });
    }
    if let Some((index, &value)) = mu.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(FunctionError::NegativeDual { index, value });
    }
    let mut acc = ExactSum::new();
    acc.add(fi.eval(x)?);
    for (g, m) in gi.components().iter().zip(mu) {
        acc.add(m * g.eval(x)?);
    }
    Ok(acc.value())
}

/// `min_x sum_i f_i(x)  s.t.  sum_i g_i(x) <= 0,  x in X0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    n: usize,
    m: usize,
    f: Vec<ConvexFunction>,
    g: Vec<VectorConstraint>,
    set: FeasibleSet,
}

impl Problem {
    pub fn new(
        f: Vec<ConvexFunction>,
        g: Vec<VectorConstraint>,
        set: FeasibleSet,
    ) -> Result<Self, FunctionError> {
        if f.len() != g.len() || f.is_empty() {
            return Err(FunctionError::AgentCount {
                objectives: f.len(),
                constraints: g.len(),
            });
        }
        set.validate()?;
        let n = set.dim();
        let m = g[0].len();
        let agent_err = |agent: usize, reason: String| FunctionError::Agent { agent, reason };
        for (i, (fi, gi)) in f.iter().zip(&g).enumerate() {
            let dims = std::iter::once(fi).chain(gi.components());
            for h in dims {
                let d = h.validate().map_err(|e| agent_err(i, e.to_string()))?;
                if d != n {
                    return Err(agent_err(i, format!("function dimension {d}, set dimension {n}")));
                }
                if h.uses_neglog() && set.coordinate_min(0) <= -1.0 {
                    return Err(agent_err(i, "neglog term with X0 reaching x <= -1".into()));
                }
            }
            if gi.len() != m {
                return Err(agent_err(i, format!("{} constraint rows, expected {m}", gi.len())));
            }
        }
        Ok(Self { n, m, f, g, set })
    }

    pub fn agents(&self) -> usize {
        self.f.len()
    }

    /// Primal dimension `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of coupled constraints `m`.
    pub fn constraints(&self) -> usize {
        self.m
    }

    pub fn objective(&self, i: usize) -> &ConvexFunction {
        &self.f[i]
    }

    pub fn constraint(&self, i: usize) -> &VectorConstraint {
        &self.g[i]
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    /// `sum_i f_i(x)`
    pub fn total_objective(&self, x: &[f64]) -> Result<f64, FunctionError> {
        let vals: Result<Vec<f64>, _> = self.f.iter().map(|f| f.eval(x)).collect();
        Ok(exact_sum(vals?))
    }

    /// `sum_i g_i(x)`
    pub fn total_constraint(&self, x: &[f64]) -> Result<Vec<f64>, FunctionError> {
        let mut acc = vec![ExactSum::new(); self.m];
        for g in &self.g {
            for (a, v) in acc.iter_mut().zip(g.eval(x)?) {
                a.add(v);
            }
        }
        Ok(acc.iter().map(|a| a.value()).collect())
    }

    /// `L(x, mu) = sum_i L_i(x, mu)`.
    pub fn lagrangian(&self, x: &[f64], mu: &[f64]) -> Result<f64, FunctionError> {
        let mut acc = ExactSum::new();
        for (f, g) in self.f.iter().zip(&self.g) {
            acc.add(local_lagrangian(f, g, x, mu)?);
        }
        Ok(acc.value())
    }

    /// Relabels agents: agent `i` of `self` becomes agent `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let n = self.agents();
        let mut f = vec![None; n];
        let mut g = vec![None; n];
        for i in 0..n {
            f[perm[i]] = Some(self.f[i].clone());
            g[perm[i]] = Some(self.g[i].clone());
        }
        Self {
            n: self.n,
            m: self.m,
            f: f.into_iter().map(|v| v.expect("permutation")).collect(),
            g: g.into_iter().map(|v| v.expect("permutation")).collect(),
            set: self.set.clone(),
        }
    }
}

/// Suprema of `||x||`, `|f_i|, ||g_i||` and gradient norms over `X0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemBounds {
    pub d: f64,
    pub e: f64,
    pub s: f64,
}

/// Raw sampled suprema, no inflation.
pub fn sample_suprema(p: &Problem, samples: usize) -> ProblemBounds {
    let mut out = ProblemBounds {
        d: 0.0,
        e: 0.0,
        s: 0.0,
    };
    for x in p.set().sample(samples, 0x5eed) {
        out.d = out.d.max(norm(&x));
        for i in 0..p.agents() {
            let (f, g) = (p.objective(i), p.constraint(i));
            if !f.in_domain(&x) || !g.components().iter().all(|c| c.in_domain(&x)) {
                continue;
            }
            out.e = out.e.max(f.eval_unchecked(&x).abs());
            let gv: Vec<f64> = g.components().iter().map(|c| c.eval_unchecked(&x)).collect();
            out.e = out.e.max(norm(&gv));
            let mut grad = vec![0.0; x.len()];
            f.add_gradient(&x, 1.0, &mut grad);
            out.s = out.s.max(norm(&grad));
            let jac: f64 = g
                .components()
                .iter()
                .map(|c| {
                    let mut row = vec![0.0; x.len()];
                    c.add_gradient(&x, 1.0, &mut row);
                    row.iter().map(|v| v * v).sum::<f64>()
                })
                .sum::<f64>()
                .sqrt();
            out.s = out.s.max(jac);
        }
    }
    out
}

/// Sampled suprema inflated by 10%. Diagnostics only.
pub fn estimate_bounds(p: &Problem, samples: usize) -> ProblemBounds {
    let raw = sample_suprema(p, samples);
    ProblemBounds {
        d: 1.1 * raw.d,
        e: 1.1 * raw.e,
        s: 1.1 * raw.s,
    }
}
