//! Distributed proximal primal-dual optimization over time-varying networks.
//!
//! `N` agents each hold a convex objective `f_i` and a constraint block
//! `g_i`, and cooperate to solve
//!
//! ```text
//! min  sum_i f_i(x)   s.t.  sum_i g_i(x) <= 0,  x in X0
//! ```
//!
//! exchanging iterates only with their in-neighbors of a doubly stochastic,
//! jointly connected schedule.

// `!(x > 0.0)` rejects NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod builtin;
pub mod dppd;
pub mod dualbound;
pub mod functions;
pub mod graph;
pub mod numeric;
pub mod oracle;
pub mod proxops;
pub mod report;
pub mod scenario;
pub mod trace;

pub use dppd::{run, DppdConfig, RunTrace, StepsizeSchedule, SwarmState};
pub use functions::{ConvexFunction, FeasibleSet, Problem, VectorConstraint};
pub use graph::{make_schedule, GraphSchedule, ScheduleFamily};
