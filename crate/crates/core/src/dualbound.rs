//! Distributed estimation of the dual radius `U_0`.
//!
//! 1. Every agent runs DPPD on `sum_l g_il` with no multipliers and the
//!    swarm agrees on a strictly feasible point `x_check`.
//! 2. Average consensus on `z_i = g_i(x_check)` runs alongside repeated
//!    max-consensus sweeps until the swept maximum is strictly negative.
//! 3. `gamma = min_l(-N z_l)`, `f_max`, `q_min` are agreed by max-consensus
//!    and `U_0 = N (f_max - q_min) / gamma`.

use thiserror::Error;

use crate::dppd::{run_from, DppdConfig, DppdError, StepsizeSchedule, SwarmState};
use crate::functions::{ConvexFunction, FunctionError, Problem, VectorConstraint};
use crate::graph::{mix, AdjacencyMatrix, GraphError, GraphSchedule};
use crate::proxops::{minimize_over_set, ProxError, DEFAULT_PROX_TOL};

/// Strict negativity margin for the certification test.
pub const NEGATIVITY_MARGIN: f64 = 1e-12;

pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualBoundError {
    #[error("problem has no coupled constraints")]
    NoConstraints,
    #[error("no strictly feasible point after {rounds} rounds: sum of constraints {sums:?}")]
    NotStrictlyFeasible { rounds: usize, sums: Vec<f64> },
    #[error("certification did not finish within {0} sweeps")]
    SweepsExhausted(usize),
    #[error("certified value {0:?} is not strictly negative")]
    NotNegative(Vec<f64>),
    #[error("agents disagree after max-consensus")]
    Disagreement,
    #[error("agent {agent}: {source}")]
    Inner { agent: usize, source: ProxError },
    #[error(transparent)]
    Dppd(#[from] DppdError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Function(#[from] FunctionError),
}

/// Outcome of the Slater search.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaterPoint {
    /// Point every agent holds after the broadcast.
    pub point: Vec<f64>,
    /// Network average of the final iterates.
    pub average: Vec<f64>,
    /// `sum_i g_i(point)`
    pub constraint_sum: Vec<f64>,
    pub rounds: usize,
    pub broadcast_rounds: usize,
    /// First schedule round not yet consumed.
    pub next_round: usize,
}

/// Agreed strictly negative consensus value.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub z_check: Vec<f64>,
    pub sweeps: usize,
    pub steps: usize,
    pub next_round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualBoundResult {
    pub slater: Vec<f64>,
    pub slater_sum: Vec<f64>,
    pub z_check: Vec<f64>,
    pub gamma_lower: f64,
    /// `min_l(-sum_i g_il(x_check))`, which `gamma_lower` must not exceed.
    pub gamma: f64,
    pub f_max: f64,
    pub q_min: f64,
    pub u0: f64,
    pub per_agent_u0: Vec<f64>,
    pub slater_rounds: usize,
    pub broadcast_rounds: usize,
    pub certification_sweeps: usize,
    pub certification_steps: usize,
    pub assembly_rounds: usize,
}

impl DualBoundResult {
    pub fn report(&self) -> String {
        use crate::trace::fmt_f64;
        let vec = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
        let agree = self.per_agent_u0.iter().all(|u| u.to_bits() == self.u0.to_bits());
        [
            format!("slater_point = {}", vec(&self.slater)),
            format!("slater_constraint_sum = {}", vec(&self.slater_sum)),
            format!("z_check = {}", vec(&self.z_check)),
            format!("gamma_lower = {}", fmt_f64(self.gamma_lower)),
            format!("gamma = {}", fmt_f64(self.gamma)),
            format!("f_max = {}", fmt_f64(self.f_max)),
            format!("q_min = {}", fmt_f64(self.q_min)),
            format!("u0 = {}", fmt_f64(self.u0)),
            format!("agents_agree = {agree}"),
            format!("rounds.slater = {}", self.slater_rounds),
            format!("rounds.broadcast = {}", self.broadcast_rounds),
            format!("rounds.certification_sweeps = {}", self.certification_sweeps),
            format!("rounds.certification_steps = {}", self.certification_steps),
            format!("rounds.assembly = {}", self.assembly_rounds),
        ]
        .join("\n")
            + "\n"
    }
}

/// Steps after which max-consensus is exact: `(N - 1) Q`.
pub fn sweep_length(sched: &GraphSchedule) -> usize {
    (sched.agents() - 1) * sched.window()
}

pub fn average_consensus_step(a: &AdjacencyMatrix, z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GraphError> {
    mix(a, z)
}

/// One max-consensus step; every agent counts as its own in-neighbor.
pub fn max_consensus_step(a: &AdjacencyMatrix, s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a.size())
        .map(|i| {
            let mut out = s[i].clone();
            for j in a.in_neighbors(i) {
                for (o, v) in out.iter_mut().zip(&s[j]) {
                    if *v > *o {
                        *o = *v;
                    }
                }
            }
            out
        })
        .collect()
}

/// `steps` max-consensus steps on rounds `k0..k0 + steps`.
pub fn max_consensus_round(sched: &GraphSchedule, k0: usize, s: &[Vec<f64>], steps: usize) -> Vec<Vec<f64>> {
    let mut s = s.to_vec();
    for t in 0..steps {
        s = max_consensus_step(&sched.matrix(k0 + t), &s);
    }
    s
}

fn constraint_sum_problem(p: &Problem) -> Result<Problem, FunctionError> {
    let f = (0..p.agents())
        .map(|i| {
            let rows = p.constraint(i).components();
            if rows.len() == 1 {
                Ok(rows[0].clone())
            } else {
                ConvexFunction::sum(rows.to_vec())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let g = vec![VectorConstraint::empty(); p.agents()];
    Problem::new(f, g, p.set().clone())
}

/// Step 1: minimize `sum_i sum_l g_il` with DPPD for `rounds` rounds, then
/// agree on the coordinatewise max of the agents' final iterates.
pub fn find_slater(
    p: &Problem,
    sched: &GraphSchedule,
    stepsize: &StepsizeSchedule,
    rounds: usize,
) -> Result<SlaterPoint, DualBoundError> {
    if p.constraints() == 0 {
        return Err(DualBoundError::NoConstraints);
    }
    let aux = constraint_sum_problem(p)?;
    let mut cfg = DppdConfig::new(rounds, 1.0);
    cfg.stepsize = stepsize.clone();
    cfg.stride = rounds.max(1);
    let init = SwarmState::initial(&aux, cfg.init, cfg.u0, cfg.seed);
    let trace = run_from(&aux, sched, &cfg, init)?;
    let next = rounds + 1;
    let steps = sweep_length(sched);
    let held = max_consensus_round(sched, next, &trace.final_state.x, steps);
    let point = p.set().project(&held[0]);
    let sums = p.total_constraint(&point)?;
    if sums.iter().any(|v| !(*v < 0.0)) {
        return Err(DualBoundError::NotStrictlyFeasible { rounds, sums });
    }
    Ok(SlaterPoint {
        point,
        average: trace.last().xbar.clone(),
        constraint_sum: sums,
        rounds: next,
        broadcast_rounds: steps,
        next_round: next + steps,
    })
}

/// Step 2: alternates max-consensus sweeps with average consensus on
/// `z_i = g_i(x_check)` until the swept maximum is strictly negative.
pub fn certify_negative(
    p: &Problem,
    sched: &GraphSchedule,
    k0: usize,
    x_check: &[f64],
    max_sweeps: usize,
) -> Result<Certification, DualBoundError> {
    let mut z = (0..p.agents())
        .map(|i| p.constraint(i).eval(x_check))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = sweep_length(sched);
    let mut k = k0;
    for sweep in 1..=max_sweeps {
        let mut s = z.clone();
        for _ in 0..steps {
            let a = sched.matrix(k);
            s = max_consensus_step(&a, &s);
            z = average_consensus_step(&a, &z)?;
            k += 1;
        }
        if s.iter().any(|v| *v != s[0]) {
            return Err(DualBoundError::Disagreement);
        }
        if s[0].iter().all(|v| *v < -NEGATIVITY_MARGIN) {
            return Ok(Certification {
                z_check: s[0].clone(),
                sweeps: sweep,
                steps: sweep * steps,
                next_round: k,
            });
        }
    }
    Err(DualBoundError::SweepsExhausted(max_sweeps))
}

/// Step 3 from a certified `z_check` and the agreed probe `mu_check`.
pub fn assemble_bound(
    p: &Problem,
    sched: &GraphSchedule,
    k0: usize,
    x_check: &[f64],
    z_check: &[f64],
    mu_check: &[f64],
) -> Result<(f64, f64, f64, Vec<f64>), DualBoundError> {
    if z_check.iter().any(|v| !(*v < 0.0)) {
        return Err(DualBoundError::NotNegative(z_check.to_vec()));
    }
    let n = p.agents() as f64;
    let gamma = z_check.iter().map(|z| -n * z).fold(f64::INFINITY, f64::min);
    let local = (0..p.agents())
        .map(|i| {
            let f = p.objective(i).eval(x_check)?;
            let (_, q) = minimize_over_set(p.objective(i), p.constraint(i), mu_check, p.set(), DEFAULT_PROX_TOL)
                .map_err(|source| DualBoundError::Inner { agent: i, source })?;
            Ok(vec![f, -q])
        })
        .collect::<Result<Vec<_>, DualBoundError>>()?;
    let held = max_consensus_round(sched, k0, &local, sweep_length(sched));
    let per_agent: Vec<f64> = held.iter().map(|v| n * (v[0] + v[1]) / gamma).collect();
    Ok((gamma, held[0][0], -held[0][1], per_agent))
}

/// Runs the whole protocol with `mu_check = 0`.
pub fn dual_bound(
    p: &Problem,
    sched: &GraphSchedule,
    stepsize: &StepsizeSchedule,
    slater_rounds: usize,
) -> Result<DualBoundResult, DualBoundError> {
    let slater = find_slater(p, sched, stepsize, slater_rounds)?;
    let cert = certify_negative(p, sched, slater.next_round, &slater.point, DEFAULT_MAX_SWEEPS)?;
    let probe = vec![0.0; p.constraints()];
    let (gamma_lower, f_max, q_min, per_agent) =
        assemble_bound(p, sched, cert.next_round, &slater.point, &cert.z_check, &probe)?;
    let gamma = slater.constraint_sum.iter().map(|v| -v).fold(f64::INFINITY, f64::min);
    if per_agent.iter().any(|u| u.to_bits() != per_agent[0].to_bits()) {
        return Err(DualBoundError::Disagreement);
    }
    Ok(DualBoundResult {
        slater: slater.point,
        slater_sum: slater.constraint_sum,
        z_check: cert.z_check,
        gamma_lower,
        gamma,
        f_max,
        q_min,
        u0: per_agent[0],
        per_agent_u0: per_agent,
        slater_rounds: slater.rounds,
        broadcast_rounds: slater.broadcast_rounds,
        certification_sweeps: cert.sweeps,
        certification_steps: cert.steps,
        assembly_rounds: sweep_length(sched),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::FeasibleSet;
    use crate::graph::{make_schedule, ScheduleFamily};

    fn resource(n: usize) -> Problem {
        let b = 5.0;
        let f = (1..=n).map(|i| ConvexFunction::affine(vec![i as f64 / n as f64], 0.0)).collect();
        let g = (1..=n)
            .map(|i| {
                VectorConstraint::new(vec![
                    ConvexFunction::neglog(i as f64 / (n + 1) as f64, b / n as f64).unwrap(),
                ])
            })
            .collect();
        Problem::new(f, g, FeasibleSet::interval(0.0, 1.0)).unwrap()
    }

    #[test]
    fn max_consensus_on_directed_ring() {
        let sched = make_schedule(4, 1, 0.25, 0, ScheduleFamily::Ring).unwrap();
        let s = vec![vec![3.0], vec![-1.0], vec![7.5], vec![0.0]];
        let once = max_consensus_round(&sched, 0, &s, 2);
        assert!(once.iter().any(|v| v[0] != 7.5));
        let out = max_consensus_round(&sched, 0, &s, 3);
        assert!(out.iter().all(|v| v[0] == 7.5));
        let flat = vec![vec![2.0]; 4];
        assert_eq!(max_consensus_round(&sched, 0, &flat, 3), flat);
    }

    #[test]
    fn single_agent_sweeps_are_empty() {
        let sched = make_schedule(1, 1, 0.5, 0, ScheduleFamily::Birkhoff).unwrap();
        assert_eq!(sweep_length(&sched), 0);
        let s = vec![vec![1.0, -2.0]];
        assert_eq!(max_consensus_round(&sched, 0, &s, 0), s);
    }

    #[test]
    fn resource_certification_needs_averaging() {
        let p = resource(100);
        let sched = make_schedule(100, 2, 0.01, 11, ScheduleFamily::Birkhoff).unwrap();
        let x = [0.9];
        let positive = (0..100).filter(|i| p.constraint(*i).eval(&x).unwrap()[0] > 0.0).count();
        assert!(positive > 0);
        let cert = certify_negative(&p, &sched, 0, &x, 100).unwrap();
        assert!(cert.sweeps >= 2);
        assert!(cert.z_check[0] < 0.0);
    }

    #[test]
    fn infeasible_constraints_are_rejected() {
        let f = vec![ConvexFunction::affine(vec![1.0], 0.0); 3];
        let g = vec![VectorConstraint::new(vec![ConvexFunction::constant(1, 1.0)]); 3];
        let p = Problem::new(f, g, FeasibleSet::interval(0.0, 1.0)).unwrap();
        let sched = make_schedule(3, 1, 0.2, 0, ScheduleFamily::Ring).unwrap();
        assert!(matches!(
            find_slater(&p, &sched, &StepsizeSchedule::InvSqrt, 100),
            Err(DualBoundError::NotStrictlyFeasible { .. })
        ));
    }

    #[test]
    fn symmetric_instance_uses_local_values() {
        // f = x, g = 1 - 2x on [0, 1]: x_check -> 1, g = -1, q(0) = 0
        let f = vec![ConvexFunction::affine(vec![1.0], 0.0); 4];
        let g = vec![VectorConstraint::new(vec![ConvexFunction::affine(vec![-2.0], 1.0)]); 4];
        let p = Problem::new(f, g, FeasibleSet::interval(0.0, 1.0)).unwrap();
        let sched = make_schedule(4, 2, 0.25, 5, ScheduleFamily::Birkhoff).unwrap();
        let r = dual_bound(&p, &sched, &StepsizeSchedule::InvSqrt, 200).unwrap();
        assert_eq!(r.slater, vec![1.0]);
        assert_eq!(r.gamma_lower, 4.0);
        assert_eq!((r.f_max, r.q_min), (1.0, 0.0));
        assert_eq!(r.u0, 1.0);
        assert_eq!(r.certification_sweeps, 1);
    }
}
