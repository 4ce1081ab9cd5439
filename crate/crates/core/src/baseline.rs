//! Consensus-based saddle-point subgradient comparator with ergodic averaging.
//!
//! Each round mixes like DPPD, then takes a projected subgradient descent
//! step in `x` and a projected ascent step in `mu`, both evaluated at the
//! mixed point.

use crate::dppd::{snapshot, DppdConfig, DppdError, RunTrace, SwarmState, TraceKind, TraceRecord};
use crate::functions::{FeasibleSet, Problem};
use crate::graph::{mix, AdjacencyMatrix, GraphSchedule};
use crate::numeric::ExactSum;

/// One comparator round.
pub fn csp_sg_round(
    p: &Problem,
    a: &AdjacencyMatrix,
    s: &SwarmState,
    alpha: f64,
    u0: f64,
) -> Result<SwarmState, DppdError> {
    let x_hat = mix(a, &s.x)?;
    let mu_hat = if p.constraints() == 0 {
        s.mu.clone()
    } else {
        mix(a, &s.mu)?
    };
    let u = FeasibleSet::dual(p.constraints(), u0);
    let mut x = Vec::with_capacity(p.agents());
    let mut mu = Vec::with_capacity(p.agents());
    for i in 0..p.agents() {
        let (xh, mh) = (&x_hat[i], &mu_hat[i]);
        let mut grad = p.objective(i).subgradient(xh)?;
        let rows = p.constraint(i).components();
        let mut g = Vec::with_capacity(rows.len());
        for (row, m) in rows.iter().zip(mh) {
            for (gr, v) in grad.iter_mut().zip(row.subgradient(xh)?) {
                *gr += m * v;
            }
            g.push(row.eval(xh)?);
        }
        let step: Vec<f64> = xh.iter().zip(&grad).map(|(v, d)| v - alpha * d).collect();
        x.push(p.set().project(&step));
        if rows.is_empty() {
            mu.push(Vec::new());
        } else {
            let z: Vec<f64> = mh.iter().zip(&g).map(|(m, gv)| m + alpha * gv).collect();
            mu.push(u.project(&z));
        }
    }
    Ok(SwarmState { k: s.k + 1, x, mu })
}

/// Runs `cfg.rounds` comparator iterations. Row `k` holds the state after
/// `k` iterations and the metric `sum_i L_i(x~_i, mu~_i)` over the ergodic
/// averages of iterates `1..=k`.
pub fn run_baseline(p: &Problem, sched: &GraphSchedule, cfg: &DppdConfig) -> Result<RunTrace, DppdError> {
    let init = SwarmState::initial(p, cfg.init, cfg.u0, cfg.seed);
    run_baseline_from(p, sched, cfg, init)
}

/// Like [`run_baseline`], from an explicit starting state.
pub fn run_baseline_from(
    p: &Problem,
    sched: &GraphSchedule,
    cfg: &DppdConfig,
    init: SwarmState,
) -> Result<RunTrace, DppdError> {
    cfg.validate()?;
    if sched.agents() != p.agents() {
        return Err(DppdError::AgentMismatch {
            schedule: sched.agents(),
            problem: p.agents(),
        });
    }
    if init.agents() != p.agents() {
        return Err(DppdError::BadState(format!("{} agents, expected {}", init.agents(), p.agents())));
    }
    let mut state = init;
    let (n, m) = (p.dim(), p.constraints());
    let mut sum_x = vec![vec![ExactSum::new(); n]; p.agents()];
    let mut sum_mu = vec![vec![ExactSum::new(); m]; p.agents()];
    let mut records = Vec::new();
    for k in 1..=cfg.rounds {
        let alpha = cfg.stepsize.alpha(k - 1);
        state = csp_sg_round(p, &sched.matrix(k - 1), &state, alpha, cfg.u0)?;
        for i in 0..p.agents() {
            for (acc, v) in sum_x[i].iter_mut().zip(&state.x[i]) {
                acc.add(*v);
            }
            for (acc, v) in sum_mu[i].iter_mut().zip(&state.mu[i]) {
                acc.add(*v);
            }
        }
        if k % cfg.stride != 0 && k != cfg.rounds {
            continue;
        }
        let kf = k as f64;
        let mut metric = ExactSum::new();
        for i in 0..p.agents() {
            let xt: Vec<f64> = sum_x[i].iter().map(|a| a.value() / kf).collect();
            let mt: Vec<f64> = sum_mu[i].iter().map(|a| a.value() / kf).collect();
            metric.add(crate::functions::local_lagrangian(p.objective(i), p.constraint(i), &xt, &mt)?);
        }
        let metric = metric.value();
        let snap = snapshot(p, &state)?;
        records.push(TraceRecord {
            k,
            alpha,
            xbar: snap.xbar,
            mubar: snap.mubar,
            cons_x: snap.cons_x,
            cons_mu: snap.cons_mu,
            lagrangian: snap.lagrangian,
            metric,
            eval_err: cfg.f_star.map_or(f64::NAN, |f| (metric - f).abs()),
            constr_viol: snap.constr_viol,
        });
    }
    Ok(RunTrace {
        kind: TraceKind::Baseline,
        dim: n,
        stride: cfg.stride,
        records,
        final_state: state,
    })
}
