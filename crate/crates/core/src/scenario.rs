//! TOML scenario files and their execution.
//!
//! ```toml
//! name = "fig1_q2"
//! solver = "dppd"            # dppd | csp_sg | slater | dualbound
//! rounds = 20000
//! stride = 10
//! output = "out/fig1_q2.csv"
//!
//! [problem]
//! builtin = "paper_example"
//! agents = 100
//! b = 5.0
//!
//! [graph]
//! family = "birkhoff"        # ring | round_robin | birkhoff
//! q = 2
//!
//! [stepsize]
//! rule = "inv_sqrt"
//!
//! [dual]
//! source = "dualbound"       # or "fixed" with u0 = ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::run_baseline;
use crate::builtin::{paper_example, paper_example_weights};
use crate::dppd::{rate_fit, run, running_eval_error, DppdConfig, Initializer, RunTrace, StepsizeSchedule};
use crate::dualbound::{dual_bound, find_slater, DualBoundResult};
use crate::functions::{ConvexFunction, FeasibleSet, Problem, VectorConstraint};
use crate::graph::{make_schedule, validate_schedule, GraphSchedule, ScheduleFamily, DEFAULT_FLOOR};
use crate::numeric::{dist, norm};
use crate::oracle::{brute_force_saddle, solve_example_family, ReferenceSolution};
use crate::trace::{fmt_f64, write_trace};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("run failed: {0}")]
    Runtime(String),
}

impl ScenarioError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Read { .. } | ScenarioError::Parse(_) | ScenarioError::Invalid(_) => 2,
            ScenarioError::Write { .. } | ScenarioError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dppd,
    CspSg,
    Slater,
    Dualbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinKind {
    PaperExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub f: ConvexFunction,
    #[serde(default)]
    pub g: Vec<ConvexFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub builtin: Option<BuiltinKind>,
    /// Agent count for built-in problems.
    pub agents: Option<usize>,
    pub b: Option<f64>,
    pub set: Option<FeasibleSet>,
    #[serde(default)]
    pub agent: Vec<AgentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub family: ScheduleFamily,
    #[serde(default = "one")]
    pub q: usize,
    pub floor: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSource {
    Fixed,
    #[default]
    Dualbound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualSpec {
    #[serde(default)]
    pub source: DualSource,
    pub u0: Option<f64>,
    #[serde(default = "default_slater_rounds")]
    pub slater_rounds: usize,
    /// Sign threshold of the certification test; strict negativity is what is checked.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl Default for DualSpec {
    fn default() -> Self {
        Self {
            source: DualSource::default(),
            u0: None,
            slater_rounds: default_slater_rounds(),
            tau: default_tau(),
        }
    }
}

fn one() -> usize {
    1
}

fn default_stride() -> usize {
    crate::dppd::DEFAULT_STRIDE
}

fn default_slater_rounds() -> usize {
    2000
}

fn default_tau() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub solver: SolverKind,
    pub rounds: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: Initializer,
    pub output: Option<PathBuf>,
    pub f_star: Option<f64>,
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    #[serde(default)]
    pub stepsize: StepsizeSchedule,
    #[serde(default)]
    pub dual: DualSpec,
}

/// Problem and schedule resolved from a scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem,
    pub schedule: GraphSchedule,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub trace: Option<RunTrace>,
    pub dual: Option<DualBoundResult>,
    pub summary: String,
    pub trace_path: Option<PathBuf>,
    pub summary_path: PathBuf,
}

impl std::str::FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse().map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn build(&self) -> Result<Setup, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        if self.rounds == 0 {
            return Err(invalid("rounds must be positive".into()));
        }
        let spec = &self.problem;
        let problem = match spec.builtin {
            Some(BuiltinKind::PaperExample) => {
                if !spec.agent.is_empty() || spec.set.is_some() {
                    return Err(invalid("builtin problems take no agent list or set".into()));
                }
                let n = spec.agents.unwrap_or(100);
                paper_example(n, spec.b.unwrap_or(5.0)).map_err(|e| invalid(e.to_string()))?
            }
            None => {
                let set = spec.set.clone().ok_or_else(|| invalid("problem.set is required".into()))?;
                if spec.agent.is_empty() {
                    return Err(invalid("problem needs at least one [[problem.agent]]".into()));
                }
                if spec.agents.is_some_and(|n| n != spec.agent.len()) {
                    return Err(invalid(format!(
                        "problem.agents = {} but {} agents are listed",
                        spec.agents.unwrap_or(0),
                        spec.agent.len()
                    )));
                }
                let f = spec.agent.iter().map(|a| a.f.clone()).collect();
                let g = spec.agent.iter().map(|a| VectorConstraint::new(a.g.clone())).collect();
                Problem::new(f, g, set).map_err(|e| invalid(e.to_string()))?
            }
        };
        let n = problem.agents();
        let floor = self.graph.floor.unwrap_or(DEFAULT_FLOOR.min(1.0 / n as f64));
        let schedule = make_schedule(n, self.graph.q, floor, self.graph.seed, self.graph.family)
            .map_err(|e| invalid(e.to_string()))?;
        self.stepsize
            .validate(self.rounds + self.dual.slater_rounds)
            .map_err(|e| invalid(e.to_string()))?;
        if self.dual.source == DualSource::Fixed && self.dual.u0.is_none() {
            return Err(invalid("dual.source = \"fixed\" needs dual.u0".into()));
        }
        if !(self.dual.tau > 0.0 && self.dual.tau < 1.0) {
            return Err(invalid(format!("dual.tau = {} is outside (0, 1)", self.dual.tau)));
        }
        Ok(Setup { problem, schedule })
    }

    /// Trace location, honoring an output directory override.
    pub fn trace_path(&self, dir_override: Option<&Path>) -> PathBuf {
        let base = self
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.csv", self.name)));
        match dir_override {
            Some(dir) => dir.join(base.file_name().unwrap_or(base.as_os_str())),
            None => base,
        }
    }

    /// Reference optimum: configured value, closed form, or grid search.
    pub fn reference(&self, setup: &Setup, u0: f64) -> Option<ReferenceSolution> {
        if self.problem.builtin == Some(BuiltinKind::PaperExample) {
            let (theta, d) = paper_example_weights(setup.problem.agents());
            return solve_example_family(&theta, &d, self.problem.b.unwrap_or(5.0), 0.0, 1.0).ok();
        }
        let p = &setup.problem;
        if p.dim() == 1 && p.constraints() == 1 {
            return brute_force_saddle(p, 1e-4, u0.max(1.0), f64::INFINITY).ok();
        }
        None
    }

    pub fn execute(&self, dir_override: Option<&Path>) -> Result<Outcome, ScenarioError> {
        let setup = self.build()?;
        let (p, sched) = (&setup.problem, &setup.schedule);
        let runtime = |e: &dyn std::fmt::Display| ScenarioError::Runtime(e.to_string());
        let trace_path = self.trace_path(dir_override);
        let summary_path = trace_path.with_extension("summary.txt");
        let mut out = String::new();
        line(&mut out, "scenario", &self.name);
        line(&mut out, "solver", &format!("{:?}", self.solver).to_lowercase());
        line(&mut out, "agents", &p.agents().to_string());
        line(&mut out, "graph", &format!("{} q={} floor={}", self.graph.family, sched.window(), fmt_f64(sched.floor())));

        if self.solver == SolverKind::Slater {
            let s = find_slater(p, sched, &self.stepsize, self.dual.slater_rounds).map_err(|e| runtime(&e))?;
            line(&mut out, "slater_point", &join(&s.point));
            line(&mut out, "slater_average", &join(&s.average));
            line(&mut out, "slater_constraint_sum", &join(&s.constraint_sum));
            line(&mut out, "rounds.slater", &s.rounds.to_string());
            line(&mut out, "rounds.broadcast", &s.broadcast_rounds.to_string());
            write_file(&summary_path, out.as_bytes())?;
            return Ok(Outcome {
                trace: None,
                dual: None,
                summary: out,
                trace_path: None,
                summary_path,
            });
        }

        let needs_bound = self.solver == SolverKind::Dualbound || self.dual.source == DualSource::Dualbound;
        let dual = if needs_bound && p.constraints() > 0 {
            Some(dual_bound(p, sched, &self.stepsize, self.dual.slater_rounds).map_err(|e| runtime(&e))?)
        } else {
            None
        };
        if self.solver == SolverKind::Dualbound {
            let d = dual.expect("dual bound computed");
            out.push_str(&d.report());
            write_file(&summary_path, out.as_bytes())?;
            return Ok(Outcome {
                trace: None,
                dual: Some(d),
                summary: out,
                trace_path: None,
                summary_path,
            });
        }

        let u0 = match (self.dual.source, &dual) {
            (DualSource::Fixed, _) => self.dual.u0.expect("validated"),
            (DualSource::Dualbound, Some(d)) => d.u0,
            // no coupled constraints: the radius is never used
            (DualSource::Dualbound, None) => 1.0,
        };
        let reference = self.reference(&setup, u0);
        let f_star = self.f_star.or(reference.as_ref().map(|r| r.f));
        let mut cfg = DppdConfig::new(self.rounds, u0);
        cfg.stepsize = self.stepsize.clone();
        cfg.stride = self.stride;
        cfg.seed = self.seed;
        cfg.init = self.init;
        cfg.f_star = f_star;
        let trace = match self.solver {
            SolverKind::Dppd => run(p, sched, &cfg),
            _ => run_baseline(p, sched, &cfg),
        }
        .map_err(|e| runtime(&e))?;

        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).map_err(|e| runtime(&e))?;
        write_file(&trace_path, &buf)?;

        line(&mut out, "u0", &fmt_f64(u0));
        line(&mut out, "u0_source", if dual.is_some() { "dualbound" } else { "fixed" });
        if let Some(d) = &dual {
            line(&mut out, "dualbound.gamma_lower", &fmt_f64(d.gamma_lower));
            line(&mut out, "dualbound.slater_point", &join(&d.slater));
        }
        let last = trace.last();
        line(&mut out, "final.k", &last.k.to_string());
        line(&mut out, "final.xbar", &join(&last.xbar));
        line(&mut out, "final.mubar", &join(&last.mubar));
        line(&mut out, "final.cons_x", &fmt_f64(last.cons_x));
        line(&mut out, "final.cons_mu", &fmt_f64(last.cons_mu));
        line(&mut out, "final.constr_viol", &fmt_f64(last.constr_viol));
        line(&mut out, "final.metric", &fmt_f64(last.metric));
        let mut flags = Vec::new();
        if let Some(f) = f_star {
            line(&mut out, "f_star", &fmt_f64(f));
            line(&mut out, "final.eval_err", &fmt_f64(last.eval_err));
            match rate_fit(&running_eval_error(&trace, f), 100, 10_000) {
                Ok(fit) => {
                    line(&mut out, "rate.slope", &fmt_f64(fit.slope));
                    line(&mut out, "rate.r_squared", &fmt_f64(fit.r_squared));
                }
                Err(e) => line(&mut out, "rate.slope", &format!("unavailable ({e})")),
            }
        }
        if let Some(r) = &reference {
            let gap = dist(&last.xbar, &r.x);
            line(&mut out, "oracle.x", &join(&r.x));
            line(&mut out, "oracle.mu", &join(&r.mu));
            line(&mut out, "oracle.f", &fmt_f64(r.f));
            line(&mut out, "oracle.distance", &fmt_f64(gap));
            if gap > 1e-2 {
                flags.push("far_from_oracle");
            }
            if norm(&r.mu) > u0 {
                flags.push("u0_below_oracle_dual");
            }
        }
        if last.constr_viol > 1e-3 {
            flags.push("constraint_violated");
        }
        line(&mut out, "flags", &if flags.is_empty() { "none".to_string() } else { flags.join(",") });
        let file = trace_path.file_name().unwrap_or(trace_path.as_os_str());
        line(&mut out, "trace", &file.to_string_lossy());
        write_file(&summary_path, out.as_bytes())?;
        Ok(Outcome {
            trace: Some(trace),
            dual,
            summary: out,
            trace_path: Some(trace_path),
            summary_path,
        })
    }

    /// Runs only the dual bound protocol and returns its report.
    pub fn dual_bound_report(&self) -> Result<(String, DualBoundResult), ScenarioError> {
        let setup = self.build()?;
        let d = dual_bound(&setup.problem, &setup.schedule, &self.stepsize, self.dual.slater_rounds)
            .map_err(|e| ScenarioError::Runtime(e.to_string()))?;
        let mut out = String::new();
        line(&mut out, "scenario", &self.name);
        out.push_str(&d.report());
        Ok((out, d))
    }

    /// Schedule validation over `min(rounds, 10 Q)` rounds, at least one window.
    pub fn validate(&self) -> Result<(String, bool), ScenarioError> {
        let setup = self.build()?;
        let s = &setup.schedule;
        let horizon = self.rounds.min(10 * s.window()).max(s.window());
        let r = validate_schedule(s, horizon);
        let ok = r.passes(s.floor());
        let mut out = String::new();
        line(&mut out, "scenario", &self.name);
        line(&mut out, "agents", &setup.problem.agents().to_string());
        line(&mut out, "horizon", &r.horizon.to_string());
        line(&mut out, "window", &r.window.to_string());
        line(&mut out, "max_row_deviation", &fmt_f64(r.max_row_deviation));
        line(&mut out, "max_col_deviation", &fmt_f64(r.max_col_deviation));
        line(&mut out, "min_self_weight", &fmt_f64(r.min_self_weight));
        line(&mut out, "min_nonzero_weight", &fmt_f64(r.min_nonzero_weight));
        line(&mut out, "windows_checked", &r.windows_checked.to_string());
        line(&mut out, "disconnected_windows", &r.disconnected_windows.len().to_string());
        line(&mut out, "valid", &ok.to_string());
        Ok((out, ok))
    }
}

fn line(out: &mut String, key: &str, value: &str) {
    let _ = writeln!(out, "{key} = {value}");
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let err = |source| ScenarioError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    fs::write(path, bytes).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUILTIN: &str = r#"
name = "small"
solver = "dppd"
rounds = 300

[problem]
builtin = "paper_example"
agents = 10
b = 0.5

[graph]
family = "birkhoff"
q = 2
"#;

    #[test]
    fn parses_and_builds_builtin() {
        let s: Scenario = BUILTIN.parse().unwrap();
        assert_eq!(s.stride, 10);
        assert_eq!(s.stepsize, StepsizeSchedule::InvSqrt);
        assert_eq!(s.dual.source, DualSource::Dualbound);
        let setup = s.build().unwrap();
        assert_eq!(setup.problem.agents(), 10);
        assert_eq!(setup.schedule.floor(), 0.1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = "name = \"x\"\nsolver = \"dppd\"\nrounds = \"many\"\n".parse::<Scenario>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = BUILTIN.replace("q = 2", "q = 2\nbogus = 1").parse::<Scenario>().unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn explicit_problem_and_validation_errors() {
        let text = r#"
name = "explicit"
solver = "dppd"
rounds = 10
[problem]
set = { kind = "box", lower = [0.0], upper = [1.0] }
[[problem.agent]]
f = { family = "quadratic", p = [[1.0]], q = [-0.5], r = 0.0 }
g = [{ family = "affine", c = [1.0], r = -0.2 }]
[[problem.agent]]
f = { family = "affine", c = [0.3], r = 0.0 }
g = [{ family = "affine", c = [1.0], r = -0.1 }]
[graph]
family = "ring"
[dual]
source = "fixed"
u0 = 4.0
"#;
        let s: Scenario = text.parse().unwrap();
        let setup = s.build().unwrap();
        assert_eq!((setup.problem.agents(), setup.problem.constraints()), (2, 1));
        let bad: Scenario = text.replace("u0 = 4.0", "").parse().unwrap();
        assert!(matches!(bad.build(), Err(ScenarioError::Invalid(_))));
        let bad: Scenario = text.replace("family = \"ring\"", "family = \"ring\"\nq = 0").parse().unwrap();
        assert_eq!(bad.build().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn output_override_keeps_file_name() {
        let mut s: Scenario = BUILTIN.parse().unwrap();
        assert_eq!(s.trace_path(None), PathBuf::from("small.csv"));
        s.output = Some(PathBuf::from("a/b/run.csv"));
        assert_eq!(s.trace_path(Some(Path::new("/tmp/x"))), PathBuf::from("/tmp/x/run.csv"));
    }
}
