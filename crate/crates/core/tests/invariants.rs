//! Property suites over random instances and schedules.

use dppd_core::baseline::{run_baseline, run_baseline_from};
use dppd_core::builtin::random_quadratic_affine;
use dppd_core::dppd::{dppd_round, run_from, Initializer};
use dppd_core::dualbound::{average_consensus_step, max_consensus_round, sweep_length};
use dppd_core::functions::FeasibleSet;
use dppd_core::graph::validate_schedule;
use dppd_core::numeric::{exact_mean, max_deviation};
use dppd_core::oracle::{saddle_violation, solve_quadratic_affine};
use dppd_core::proxops::DEFAULT_PROX_TOL;
use dppd_core::trace::{fmt_f64, read_trace, write_trace};
use dppd_core::{make_schedule, run, DppdConfig, ScheduleFamily, StepsizeSchedule, SwarmState};
use proptest::prelude::*;
use proptest::sample::Index;

fn family() -> impl Strategy<Value = ScheduleFamily> {
    prop_oneof![
        Just(ScheduleFamily::Birkhoff),
        Just(ScheduleFamily::RoundRobin),
        Just(ScheduleFamily::Ring),
    ]
}

fn floor(n: usize) -> f64 {
    0.1f64.min(1.0 / n as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedules_are_admissible_and_reproducible(n in 1usize..20, q in 1usize..5, seed in any::<u64>(), fam in family()) {
        let a = make_schedule(n, q, floor(n), seed, fam).unwrap();
        let b = make_schedule(n, q, floor(n), seed, fam).unwrap();
        let rep = validate_schedule(&a, 6 * q);
        prop_assert!(rep.max_row_deviation <= 1e-12 && rep.max_col_deviation <= 1e-12);
        prop_assert!(rep.passes(a.floor()));
        for k in 0..3 * q {
            prop_assert_eq!(a.matrix(k).to_dense(), b.matrix(k).to_dense());
        }
    }

    #[test]
    fn average_consensus_keeps_the_sum(
        n in 2usize..15,
        q in 1usize..4,
        seed in any::<u64>(),
        fam in family(),
        values in prop::collection::vec(-100.0f64..100.0, 15),
    ) {
        let s = make_schedule(n, q, floor(n), seed, fam).unwrap();
        let mut z: Vec<Vec<f64>> = values[..n].iter().map(|v| vec![*v]).collect();
        let total: f64 = z.iter().map(|v| v[0]).sum();
        for k in 0..40 {
            let spread = max_deviation(&z, &exact_mean(&z));
            let next = average_consensus_step(&s.matrix(k), &z).unwrap();
            prop_assert!(max_deviation(&next, &exact_mean(&z)) <= spread + 1e-12);
            z = next;
            let now: f64 = z.iter().map(|v| v[0]).sum();
            prop_assert!((now - total).abs() <= 1e-10);
        }
    }

    #[test]
    fn max_consensus_is_exact(
        n in 1usize..25,
        q in 1usize..5,
        seed in any::<u64>(),
        fam in family(),
        k0 in 0usize..50,
        values in prop::collection::vec(-1e6f64..1e6, 25),
    ) {
        let s = make_schedule(n, q, floor(n), seed, fam).unwrap();
        let v: Vec<Vec<f64>> = values[..n].iter().map(|x| vec![*x, -*x]).collect();
        let top = values[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bottom = values[..n].iter().copied().fold(f64::INFINITY, f64::min);
        let held = max_consensus_round(&s, k0, &v, sweep_length(&s));
        for h in held {
            prop_assert_eq!(h, vec![top, -bottom]);
        }
    }

    #[test]
    fn iterates_stay_feasible(n in 2usize..8, q in 1usize..4, seed in 0u64..1000, u0 in 0.1f64..5.0, fam in family()) {
        let (p, _) = random_quadratic_affine(n, seed).unwrap();
        let s = make_schedule(n, q, floor(n), seed, fam).unwrap();
        let u = FeasibleSet::dual(1, u0);
        let mut state = SwarmState::initial(&p, Initializer::Uniform, u0, seed);
        let mut base = state.clone();
        for k in 0..150 {
            let alpha = StepsizeSchedule::InvSqrt.alpha(k);
            state = dppd_round(&p, &s.matrix(k), &state, alpha, u0, DEFAULT_PROX_TOL).unwrap();
            base = dppd_core::baseline::csp_sg_round(&p, &s.matrix(k), &base, alpha, u0).unwrap();
            for st in [&state, &base] {
                prop_assert!(st.x.iter().all(|x| p.set().contains(x, 1e-12)));
                prop_assert!(st.mu.iter().all(|m| u.contains(m, 1e-12)));
            }
        }
    }

    #[test]
    fn relabeling_permutes_the_trace(n in 2usize..8, seed in 0u64..1000, shuffle in prop::collection::vec(any::<Index>(), 8)) {
        let (p, _) = random_quadratic_affine(n, seed).unwrap();
        let s = make_schedule(n, 2, floor(n), seed, ScheduleFamily::Birkhoff).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, shuffle[i].index(i + 1));
        }
        let mut cfg = DppdConfig::new(60, 3.0);
        cfg.stride = 1;
        let init = SwarmState::initial(&p, Initializer::Uniform, cfg.u0, seed);
        let pp = p.relabeled(&perm);
        let ps = s.relabeled(&perm).unwrap();
        let a = run_from(&p, &s, &cfg, init.clone()).unwrap();
        let b = run_from(&pp, &ps, &cfg, init.relabeled(&perm)).unwrap();
        prop_assert_eq!(format!("{:?}", a.records), format!("{:?}", b.records));
        prop_assert_eq!(a.final_state.relabeled(&perm), b.final_state);
        let a = run_baseline_from(&p, &s, &cfg, init.clone()).unwrap();
        let b = run_baseline_from(&pp, &ps, &cfg, init.relabeled(&perm)).unwrap();
        prop_assert_eq!(format!("{:?}", a.records), format!("{:?}", b.records));
    }

    #[test]
    fn traces_round_trip_exactly(n in 1usize..6, seed in 0u64..1000, stride in 1usize..7) {
        let (p, _) = random_quadratic_affine(n, seed).unwrap();
        let s = make_schedule(n, 1, floor(n), seed, ScheduleFamily::Birkhoff).unwrap();
        let mut cfg = DppdConfig::new(40, 2.0);
        cfg.stride = stride;
        cfg.f_star = Some(0.25);
        for trace in [run(&p, &s, &cfg).unwrap(), run_baseline(&p, &s, &cfg).unwrap()] {
            let mut buf = Vec::new();
            write_trace(&trace, &mut buf).unwrap();
            let table = read_trace(buf.as_slice()).unwrap();
            prop_assert_eq!(table.rows.len(), trace.records.len());
            for (row, rec) in table.rows.iter().zip(&trace.records) {
                let expect = [rec.alpha, rec.xbar[0], rec.cons_x, rec.cons_mu, rec.lagrangian, rec.eval_err, rec.constr_viol, rec.metric];
                prop_assert_eq!(row[0], rec.k as f64);
                for (got, want) in row[1..].iter().zip(expect) {
                    prop_assert_eq!(got.to_bits(), want.to_bits(), "{} vs {}", fmt_f64(*got), fmt_f64(want));
                }
            }
        }
    }

    #[test]
    fn oracle_is_a_saddle_point(n in 1usize..8, seed in 0u64..1000) {
        let (p, data) = random_quadratic_affine(n, seed).unwrap();
        let sol = solve_quadratic_affine(&data, -1.0, 2.0).unwrap();
        prop_assert!(p.total_constraint(&sol.x).unwrap()[0] <= 1e-9);
        prop_assert!((sol.mu[0] * p.total_constraint(&sol.x).unwrap()[0]).abs() <= 1e-9);
        prop_assert!(saddle_violation(&p, &sol, 2.0 * sol.mu[0] + 1.0, 100, seed).unwrap() <= 1e-9);
    }
}

#[test]
fn runs_are_deterministic() {
    let (p, _) = random_quadratic_affine(5, 3).unwrap();
    let s = make_schedule(5, 3, 0.1, 8, ScheduleFamily::RoundRobin).unwrap();
    let mut cfg = DppdConfig::new(300, 2.0);
    cfg.init = Initializer::Uniform;
    cfg.seed = 12;
    let bytes = |t: &dppd_core::RunTrace| {
        let mut buf = Vec::new();
        write_trace(t, &mut buf).unwrap();
        buf
    };
    assert_eq!(bytes(&run(&p, &s, &cfg).unwrap()), bytes(&run(&p, &s, &cfg).unwrap()));
    assert_eq!(
        bytes(&run_baseline(&p, &s, &cfg).unwrap()),
        bytes(&run_baseline(&p, &s, &cfg).unwrap())
    );
}
