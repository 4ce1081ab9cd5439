//! The synchronous DPPD engine.
//!
//! Round `k`: every agent mixes its neighbors' primal and dual iterates,
//! takes a proximal step on its local Lagrangian around the mixed primal,
//! then a projected ascent step on the dual using the new primal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FeasibleSet, FunctionError, Problem};
use crate::graph::{mix, AdjacencyMatrix, GraphError, GraphSchedule};
use crate::numeric::{dist, exact_mean, max_deviation, norm, ExactSum};
use crate::proxops::{dual_prox_solve, prox_solve, ProxError, ProxQuery, DEFAULT_PROX_TOL};

pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DppdError {
    #[error("agent {agent}: {source}")]
    Prox { agent: usize, source: ProxError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error("dual radius must be positive, got {0}")]
    DualRadius(f64),
    #[error("at least one round is required")]
    NoRounds,
    #[error("stride must be positive")]
    ZeroStride,
    #[error("invalid stepsize: {0}")]
    Stepsize(String),
    #[error("schedule has {schedule} agents, problem has {problem}")]
    AgentMismatch { schedule: usize, problem: usize },
    #[error("initial state does not fit the problem: {0}")]
    BadState(String),
    #[error("rate window holds {0} usable points, need at least 10")]
    DegenerateWindow(usize),
}

/// Diminishing stepsize rules, all with `alpha_0 = 1` unless tabulated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepsizeSchedule {
    /// `1 / sqrt(k)`
    #[default]
    InvSqrt,
    /// `k^-p`, `p in (0, 1]`
    InvPow { p: f64 },
    /// Explicit `alpha_0, alpha_1, ...`; must cover the run.
    Table { values: Vec<f64> },
}

impl StepsizeSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        match self {
            StepsizeSchedule::InvSqrt => {
                if k == 0 {
                    1.0
                } else {
                    1.0 / (k as f64).sqrt()
                }
            }
            StepsizeSchedule::InvPow { p } => {
                if k == 0 {
                    1.0
                } else {
                    (k as f64).powf(-p)
                }
            }
            StepsizeSchedule::Table { values } => values[k.min(values.len() - 1)],
        }
    }

    /// Checks positivity and monotonicity; tables must reach `last_round`.
    pub fn validate(&self, last_round: usize) -> Result<(), DppdError> {
        match self {
            StepsizeSchedule::InvSqrt => Ok(()),
            StepsizeSchedule::InvPow { p } => {
                if *p > 0.0 && *p <= 1.0 {
                    Ok(())
                } else {
                    Err(DppdError::Stepsize(format!("exponent {p} outside (0, 1]")))
                }
            }
            StepsizeSchedule::Table { values } => {
                if values.len() <= last_round {
                    return Err(DppdError::Stepsize(format!(
                        "table has {} entries, run needs {}",
                        values.len(),
                        last_round + 1
                    )));
                }
                if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(DppdError::Stepsize("entries must be positive".into()));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(DppdError::Stepsize("entries must be nonincreasing".into()));
                }
                Ok(())
            }
        }
    }
}

/// Starting point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    /// `x = P_X0(0)`, `mu = 0`.
    #[default]
    Origin,
    /// Seeded uniform draws inside `X0` and `U`.
    Uniform,
}

/// Iterates of all agents at round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

impl SwarmState {
    pub fn initial(p: &Problem, init: Initializer, u0: f64, seed: u64) -> Self {
        let (n, m, agents) = (p.dim(), p.constraints(), p.agents());
        match init {
            Initializer::Origin => {
                let x0 = p.set().project(&vec![0.0; n]);
                SwarmState {
                    k: 0,
                    x: vec![x0; agents],
                    mu: vec![vec![0.0; m]; agents],
                }
            }
            Initializer::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (lo, hi) = bounding_box(p.set());
                let x = (0..agents)
                    .map(|_| {
                        let z: Vec<f64> = lo
                            .iter()
                            .zip(&hi)
                            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                            .collect();
                        p.set().project(&z)
                    })
                    .collect();
                let side = if m == 0 { 0.0 } else { u0 / (m as f64).sqrt() };
                let mu = (0..agents)
                    .map(|_| (0..m).map(|_| side * rng.random::<f64>()).collect())
                    .collect();
                SwarmState { k: 0, x, mu }
            }
        }
    }

    pub fn agents(&self) -> usize {
        self.x.len()
    }

    pub fn mean_primal(&self) -> Vec<f64> {
        exact_mean(&self.x)
    }

    pub fn mean_dual(&self) -> Vec<f64> {
        exact_mean(&self.mu)
    }

    /// Relabels agents: agent `i` becomes agent `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let mut x = self.x.clone();
        let mut mu = self.mu.clone();
        for (i, &p) in perm.iter().enumerate() {
            x[p] = self.x[i].clone();
            mu[p] = self.mu[i].clone();
        }
        SwarmState { k: self.k, x, mu }
    }
}

fn bounding_box(set: &FeasibleSet) -> (Vec<f64>, Vec<f64>) {
    match set {
        FeasibleSet::Box { lower, upper } => (lower.clone(), upper.clone()),
        FeasibleSet::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
        FeasibleSet::NonnegBall { dim, radius } => (vec![0.0; *dim], vec![*radius; *dim]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppdConfig {
    /// Last iteration index `K`; iterations `0..=K` are executed.
    pub rounds: usize,
    pub u0: f64,
    pub stepsize: StepsizeSchedule,
    pub stride: usize,
    pub seed: u64,
    pub init: Initializer,
    pub prox_tol: f64,
    /// Optimal value used for the error column, when known.
    pub f_star: Option<f64>,
}

impl DppdConfig {
    pub fn new(rounds: usize, u0: f64) -> Self {
        Self {
            rounds,
            u0,
            stepsize: StepsizeSchedule::InvSqrt,
            stride: DEFAULT_STRIDE,
            seed: 0,
            init: Initializer::Origin,
            prox_tol: DEFAULT_PROX_TOL,
            f_star: None,
        }
    }

    pub fn validate(&self) -> Result<(), DppdError> {
        if self.rounds == 0 {
            return Err(DppdError::NoRounds);
        }
        if !(self.u0 > 0.0) || !self.u0.is_finite() {
            return Err(DppdError::DualRadius(self.u0));
        }
        if self.stride == 0 {
            return Err(DppdError::ZeroStride);
        }
        self.stepsize.validate(self.rounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Dppd,
    Baseline,
}

/// One sampled row.
///
/// For the DPPD engine row `k` describes the state produced by iteration
/// `k`, i.e. `x_{k+1}`, and `metric` is `sum_{l=1..k} L(xbar_{l+1}, mubar_{l+1}) / k`.
/// For the baseline, `metric` is the ergodic sum of local Lagrangians.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub alpha: f64,
    pub xbar: Vec<f64>,
    pub mubar: Vec<f64>,
    pub cons_x: f64,
    pub cons_mu: f64,
    pub lagrangian: f64,
    pub metric: f64,
    pub eval_err: f64,
    pub constr_viol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub kind: TraceKind,
    pub dim: usize,
    pub stride: usize,
    pub records: Vec<TraceRecord>,
    pub final_state: SwarmState,
}

impl RunTrace {
    pub fn at(&self, k: usize) -> Option<&TraceRecord> {
        self.records
            .binary_search_by_key(&k, |r| r.k)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("traces hold at least one record")
    }
}

/// Averages, consensus residuals and `L(xbar, mubar)` of a state.
pub(crate) struct Snapshot {
    pub xbar: Vec<f64>,
    pub mubar: Vec<f64>,
    pub cons_x: f64,
    pub cons_mu: f64,
    pub lagrangian: f64,
    pub constr_viol: f64,
}

pub(crate) fn snapshot(p: &Problem, s: &SwarmState) -> Result<Snapshot, DppdError> {
    let xbar = s.mean_primal();
    let mubar = s.mean_dual();
    let viol: Vec<f64> = p
        .total_constraint(&xbar)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Ok(Snapshot {
        cons_x: max_deviation(&s.x, &xbar),
        cons_mu: max_deviation(&s.mu, &mubar),
        lagrangian: p.lagrangian(&xbar, &mubar)?,
        constr_viol: norm(&viol),
        xbar,
        mubar,
    })
}

fn check_state(p: &Problem, s: &SwarmState) -> Result<(), DppdError> {
    if s.agents() != p.agents() {
        return Err(DppdError::BadState(format!("{} agents, expected {}", s.agents(), p.agents())));
    }
    if s.x.iter().any(|x| x.len() != p.dim()) || s.mu.iter().any(|m| m.len() != p.constraints()) {
        return Err(DppdError::BadState("dimension mismatch".into()));
    }
    Ok(())
}

/// One DPPD round: mix, primal prox, dual projection.
pub fn dppd_round(
    p: &Problem,
    a: &AdjacencyMatrix,
    s: &SwarmState,
    alpha: f64,
    u0: f64,
    tol: f64,
) -> Result<SwarmState, DppdError> {
    let x_hat = mix(a, &s.x)?;
    let mu_hat = if p.constraints() == 0 {
        s.mu.clone()
    } else {
        mix(a, &s.mu)?
    };
    let x = (0..p.agents())
        .map(|i| {
            let q = ProxQuery {
                objective: p.objective(i),
                constraint: p.constraint(i),
                multiplier: &mu_hat[i],
                anchor: &x_hat[i],
                step: alpha,
                set: p.set(),
            };
            prox_solve(&q, tol).map_err(|source| DppdError::Prox { agent: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mu = if p.constraints() == 0 {
        mu_hat
    } else {
        let u = FeasibleSet::dual(p.constraints(), u0);
        (0..p.agents())
            .map(|i| {
                let g = p.constraint(i).eval(&x[i])?;
                Ok(dual_prox_solve(&g, &mu_hat[i], alpha, &u))
            })
            .collect::<Result<Vec<_>, DppdError>>()?
    };
    Ok(SwarmState { k: s.k + 1, x, mu })
}

/// Runs `cfg.rounds + 1` iterations from the configured initializer.
pub fn run(p: &Problem, sched: &GraphSchedule, cfg: &DppdConfig) -> Result<RunTrace, DppdError> {
    let init = SwarmState::initial(p, cfg.init, cfg.u0, cfg.seed);
    run_from(p, sched, cfg, init)
}

/// Like [`run`], from an explicit starting state.
pub fn run_from(
    p: &Problem,
    sched: &GraphSchedule,
    cfg: &DppdConfig,
    init: SwarmState,
) -> Result<RunTrace, DppdError> {
    run_observed(p, sched, cfg, init, |_, _| {})
}

/// Like [`run_from`], calling `observe` with every new state.
pub fn run_observed<F: FnMut(usize, &SwarmState)>(
    p: &Problem,
    sched: &GraphSchedule,
    cfg: &DppdConfig,
    init: SwarmState,
    mut observe: F,
) -> Result<RunTrace, DppdError> {
    cfg.validate()?;
    if sched.agents() != p.agents() {
        return Err(DppdError::AgentMismatch {
            schedule: sched.agents(),
            problem: p.agents(),
        });
    }
    check_state(p, &init)?;
    let start = init.k;
    let mut state = init;
    let mut running = ExactSum::new();
    let mut records = Vec::new();
    for k in start..=start + cfg.rounds {
        let alpha = cfg.stepsize.alpha(k);
        state = dppd_round(p, &sched.matrix(k), &state, alpha, cfg.u0, cfg.prox_tol)?;
        observe(k, &state);
        let snap = snapshot(p, &state)?;
        let metric = if k >= 1 {
            running.add(snap.lagrangian);
            running.value() / k as f64
        } else {
            f64::NAN
        };
        if k % cfg.stride == 0 || k == start + cfg.rounds {
            records.push(TraceRecord {
                k,
                alpha,
                eval_err: cfg.f_star.map_or(f64::NAN, |f| (metric - f).abs()),
                metric,
                xbar: snap.xbar,
                mubar: snap.mubar,
                cons_x: snap.cons_x,
                cons_mu: snap.cons_mu,
                lagrangian: snap.lagrangian,
                constr_viol: snap.constr_viol,
            });
        }
    }
    Ok(RunTrace {
        kind: TraceKind::Dppd,
        dim: p.dim(),
        stride: cfg.stride,
        records,
        final_state: state,
    })
}

/// `(k, |metric_k - f*|)` for every record with a defined metric.
pub fn running_eval_error(trace: &RunTrace, f_star: f64) -> Vec<(usize, f64)> {
    trace
        .records
        .iter()
        .filter(|r| !r.metric.is_nan())
        .map(|r| (r.k, (r.metric - f_star).abs()))
        .collect()
}

/// Least-squares fit of `log err` against `log k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn rate_fit(series: &[(usize, f64)], k_min: usize, k_max: usize) -> Result<RateFit, DppdError> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(k, e)| *k >= k_min && *k <= k_max && *k > 0 && *e > 0.0 && e.is_finite())
        .map(|(k, e)| ((*k as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(DppdError::DegenerateWindow(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DppdError::DegenerateWindow(1));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: pts.len(),
    })
}

/// Kendall rank correlation of `values` against their index.
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    score as f64 / (n * (n - 1) / 2) as f64
}

/// Largest per-agent primal and dual displacements of a round against the mixed state.
pub fn round_displacements(
    a: &AdjacencyMatrix,
    before: &SwarmState,
    after: &SwarmState,
) -> Result<(f64, f64), DppdError> {
    let x_hat = mix(a, &before.x)?;
    let mu_hat = mix(a, &before.mu)?;
    let dx = x_hat.iter().zip(&after.x).map(|(h, x)| dist(h, x)).fold(0.0, f64::max);
    let dm = mu_hat.iter().zip(&after.mu).map(|(h, m)| dist(h, m)).fold(0.0, f64::max);
    Ok((dx, dm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{ConvexFunction, VectorConstraint};
    use crate::graph::{make_schedule, ScheduleFamily};

    fn single(f: ConvexFunction, lo: f64, hi: f64) -> Problem {
        Problem::new(vec![f], vec![VectorConstraint::empty()], FeasibleSet::interval(lo, hi)).unwrap()
    }

    #[test]
    fn stepsize_rules() {
        let s = StepsizeSchedule::InvSqrt;
        assert_eq!((s.alpha(0), s.alpha(1), s.alpha(4)), (1.0, 1.0, 0.5));
        let p = StepsizeSchedule::InvPow { p: 1.0 };
        assert_eq!(p.alpha(8), 0.125);
        assert!(StepsizeSchedule::InvPow { p: 1.5 }.validate(10).is_err());
        assert!(StepsizeSchedule::InvPow { p: 0.0 }.validate(10).is_err());
        let t = StepsizeSchedule::Table { values: vec![1.0, 0.5, 0.5] };
        assert!(t.validate(2).is_ok());
        assert!(t.validate(3).is_err());
        assert!(StepsizeSchedule::Table { values: vec![0.5, 1.0] }.validate(1).is_err());
    }

    #[test]
    fn config_validation() {
        assert_eq!(DppdConfig::new(0, 1.0).validate(), Err(DppdError::NoRounds));
        assert_eq!(DppdConfig::new(5, 0.0).validate(), Err(DppdError::DualRadius(0.0)));
        assert_eq!(DppdConfig::new(5, -1.0).validate(), Err(DppdError::DualRadius(-1.0)));
    }

    #[test]
    fn single_agent_quadratic_reaches_minimizer() {
        // (x - 3)^2 / 2
        let f = ConvexFunction::quadratic(vec![vec![1.0]], vec![-3.0], 4.5).unwrap();
        let p = single(f, 0.0, 10.0);
        let sched = make_schedule(1, 1, 0.5, 0, ScheduleFamily::Birkhoff).unwrap();
        let mut cfg = DppdConfig::new(2000, 1.0);
        cfg.f_star = Some(0.0);
        let trace = run(&p, &sched, &cfg).unwrap();
        assert!((trace.final_state.x[0][0] - 3.0).abs() < 1e-9);
        assert!(trace.last().eval_err < 1e-2);
    }

    #[test]
    fn unconstrained_duals_stay_zero() {
        let f = ConvexFunction::affine(vec![1.0], 0.0);
        let g = VectorConstraint::new(vec![ConvexFunction::constant(1, 0.0)]);
        let p = Problem::new(vec![f.clone(), f], vec![g.clone(), g], FeasibleSet::interval(-1.0, 1.0)).unwrap();
        let sched = make_schedule(2, 1, 0.5, 3, ScheduleFamily::Ring).unwrap();
        let trace = run(&p, &sched, &DppdConfig::new(50, 2.0)).unwrap();
        assert!(trace.final_state.mu.iter().all(|m| m[0] == 0.0));
        assert!(trace.final_state.x.iter().all(|x| x[0] == -1.0));
    }

    #[test]
    fn synthetic_running_error_matches_partial_sums() {
        // L_l = f* + 1 / sqrt(l): running error ~ 2 / sqrt(k)
        let f_star = 5.0;
        let mut acc = ExactSum::new();
        for k in 1..=10_000usize {
            acc.add(f_star + 1.0 / (k as f64).sqrt());
            // the zeta(1/2)/k correction stays above 5% until k = 214
            if k >= 250 {
                let err = (acc.value() / k as f64 - f_star).abs();
                let approx = 2.0 / (k as f64).sqrt();
                assert!((err - approx).abs() <= 0.05 * approx, "k={k}");
            }
        }
    }

    #[test]
    fn rate_fit_recovers_exponents() {
        let half: Vec<(usize, f64)> = (1..=200).map(|i| (i * 50, 3.0 / ((i * 50) as f64).sqrt())).collect();
        let fit = rate_fit(&half, 100, 10_000).unwrap();
        assert!((fit.slope + 0.5).abs() <= 1e-6 && fit.r_squared > 0.999_999);
        let one: Vec<(usize, f64)> = (1..=200).map(|i| (i * 50, 7.0 / (i * 50) as f64)).collect();
        assert!((rate_fit(&one, 100, 10_000).unwrap().slope + 1.0).abs() <= 1e-6);
        assert_eq!(rate_fit(&half[..5], 1, 10_000), Err(DppdError::DegenerateWindow(5)));
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau(&[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&[1.0, 1.0]), 0.0);
        assert_eq!(kendall_tau(&[1.0, 3.0, 2.0]), 1.0 / 3.0);
    }
}
