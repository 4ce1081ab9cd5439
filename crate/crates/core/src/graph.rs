//! Time-varying doubly stochastic communication schedules.
//!
//! A schedule maps a round index `k` to a mixing matrix `A_k` whose entry
//! `a_ij` is the weight agent `i` puts on the value received from agent `j`.
//! Every matrix is doubly stochastic, keeps self-loops at or above the weight
//! floor, and the union of any `window` consecutive communication graphs is
//! strongly connected.

use std::borrow::Cow;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::ExactSum;
use crate::trace::fmt_f64;

/// Row and column sums must hit one within this.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Floor used when a scenario does not set one; clipped to `1/N`.
pub const DEFAULT_FLOOR: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("agent count must be positive")]
    NoAgents,
    #[error("window Q must be at least 1")]
    ZeroWindow,
    #[error("weight floor {floor} outside (0, 1/N] for N = {agents}")]
    BadFloor { floor: f64, agents: usize },
    #[error("unknown schedule family `{0}`")]
    UnknownFamily(String),
    #[error("matrix is {rows}x{cols}, expected {expected}x{expected}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("entry ({row}, {col}) = {value} violates nonnegativity or the floor {floor}")]
    Floor {
        row: usize,
        col: usize,
        value: f64,
        floor: f64,
    },
    #[error("{axis} {index} sums to {sum}, not 1")]
    NotStochastic {
        axis: &'static str,
        index: usize,
        sum: f64,
    },
    #[error("expected {expected} vectors, got {got}")]
    VectorCount { expected: usize, got: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("explicit schedule needs at least one matrix")]
    EmptyExplicit,
    #[error("permutation is not a bijection on 0..{0}")]
    BadPermutation(usize),
}

/// A validated doubly stochastic mixing matrix, stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    /// Nonzero `(column, weight)` pairs per row, columns ascending.
    rows: Vec<Vec<(usize, f64)>>,
}

impl AdjacencyMatrix {
    /// Validates a dense matrix against double stochasticity and the floor.
    pub fn new(dense: Vec<Vec<f64>>, floor: f64) -> Result<Self, GraphError> {
        let n = dense.len();
        if n == 0 {
            return Err(GraphError::NoAgents);
        }
        for row in &dense {
            if row.len() != n {
                return Err(GraphError::Shape {
                    rows: n,
                    cols: row.len(),
                    expected: n,
                });
            }
        }
        for (i, row) in dense.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let bad = !v.is_finite() || v < 0.0 || (v > 0.0 && v < floor) || (i == j && v < floor);
                if bad {
                    return Err(GraphError::Floor {
                        row: i,
                        col: j,
                        value: v,
                        floor,
                    });
                }
            }
        }
        let m = Self::from_dense_unchecked(&dense);
        let (row_dev, col_dev) = m.stochastic_deviation();
        if row_dev > STOCHASTIC_TOL || col_dev > STOCHASTIC_TOL {
            for i in 0..n {
                let r = m.row_sum(i);
                if (r - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(GraphError::NotStochastic {
                        axis: "row",
                        index: i,
                        sum: r,
                    });
                }
                let c = m.col_sum(i);
                if (c - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(GraphError::NotStochastic {
                        axis: "column",
                        index: i,
                        sum: c,
                    });
                }
            }
        }
        Ok(m)
    }

    fn from_dense_unchecked(dense: &[Vec<f64>]) -> Self {
        let rows = dense
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self {
            n: dense.len(),
            rows,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |&(_, v)| v)
    }

    /// Nonzero entries of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// In-neighbors of `i` at this round, itself included.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].iter().map(|&(j, _)| j)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                dense[i][j] = v;
            }
        }
        dense
    }

    fn row_sum(&self, i: usize) -> f64 {
        let mut acc = ExactSum::new();
        acc.extend(self.rows[i].iter().map(|&(_, v)| v));
        acc.value()
    }

    fn col_sum(&self, j: usize) -> f64 {
        let mut acc = ExactSum::new();
        acc.extend(self.rows.iter().map(|r| {
            r.iter().find(|(c, _)| *c == j).map_or(0.0, |&(_, v)| v)
        }));
        acc.value()
    }

    /// Largest `|sum - 1|` over rows and over columns.
    pub fn stochastic_deviation(&self) -> (f64, f64) {
        let mut col = vec![ExactSum::new(); self.n];
        let mut row_dev: f64 = 0.0;
        for row in &self.rows {
            let mut acc = ExactSum::new();
            for &(j, v) in row {
                acc.add(v);
                col[j].add(v);
            }
            row_dev = row_dev.max((acc.value() - 1.0).abs());
        }
        let col_dev = col
            .iter()
            .map(|c| (c.value() - 1.0).abs())
            .fold(0.0, f64::max);
        (row_dev, col_dev)
    }

    /// Smallest self weight and smallest nonzero weight.
    pub fn min_weights(&self) -> (f64, f64) {
        let diag = (0..self.n).map(|i| self.get(i, i)).fold(f64::INFINITY, f64::min);
        let nz = self
            .rows
            .iter()
            .flatten()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min);
        (diag, nz)
    }

    /// Conjugate by a relabeling: agent `i` becomes agent `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            let mut new_row: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (perm[j], v)).collect();
            new_row.sort_by_key(|&(j, _)| j);
            rows[perm[i]] = new_row;
        }
        Self { n: self.n, rows }
    }
}

/// How a schedule's matrices are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    /// Constant `aI + (1-a)P` with `P` the cyclic shift; connected every round.
    Ring,
    /// A fixed directed ring whose edges are split into `Q` contiguous groups
    /// activated cyclically; each active path is closed into a cycle and mixed
    /// half-and-half with the identity.
    RoundRobin,
    /// Random convex combinations of the identity, a connectivity carrier
    /// (the active group of a seeded Hamiltonian cycle) and random
    /// permutations of the carrier's nodes.
    Birkhoff,
}

impl ScheduleFamily {
    pub fn tag(self) -> &'static str {
        match self {
            ScheduleFamily::Ring => "ring",
            ScheduleFamily::RoundRobin => "round_robin",
            ScheduleFamily::Birkhoff => "birkhoff",
        }
    }
}

impl fmt::Display for ScheduleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScheduleFamily {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" | "directed_ring" | "directed-ring-with-self-loops" => Ok(ScheduleFamily::Ring),
            "round_robin" | "round-robin" => Ok(ScheduleFamily::RoundRobin),
            "birkhoff" => Ok(ScheduleFamily::Birkhoff),
            other => Err(GraphError::UnknownFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
enum Generator {
    /// Matrices reused cyclically: round `k` uses `phases[k % phases.len()]`.
    Cyclic(Vec<AdjacencyMatrix>),
    /// Per-round random mixtures over a fixed Hamiltonian cycle.
    Birkhoff { cycle: Vec<usize> },
    /// Conjugation of another schedule by an agent relabeling.
    Relabeled {
        inner: Box<GraphSchedule>,
        perm: Vec<usize>,
    },
}

/// A deterministic map from round index to mixing matrix.
#[derive(Debug, Clone)]
pub struct GraphSchedule {
    n: usize,
    window: usize,
    floor: f64,
    seed: u64,
    family: Option<ScheduleFamily>,
    generator: Generator,
}

impl GraphSchedule {
    pub fn agents(&self) -> usize {
        self.n
    }

    /// The window `Q` over which unions are strongly connected.
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `None` for explicit and relabeled schedules.
    pub fn family(&self) -> Option<ScheduleFamily> {
        self.family
    }

    /// Mixing matrix used at round `k`.
    pub fn matrix(&self, k: usize) -> Cow<'_, AdjacencyMatrix> {
        match &self.generator {
            Generator::Cyclic(phases) => Cow::Borrowed(&phases[k % phases.len()]),
            Generator::Birkhoff { cycle } => {
                Cow::Owned(birkhoff_matrix(self.n, self.window, self.floor, self.seed, cycle, k))
            }
            Generator::Relabeled { inner, perm } => Cow::Owned(inner.matrix(k).relabeled(perm)),
        }
    }

    /// A schedule that cycles through user-supplied matrices.
    pub fn explicit(
        matrices: Vec<AdjacencyMatrix>,
        window: usize,
        floor: f64,
    ) -> Result<Self, GraphError> {
        let n = matrices.first().ok_or(GraphError::EmptyExplicit)?.size();
        if window == 0 {
            return Err(GraphError::ZeroWindow);
        }
        for m in &matrices {
            if m.size() != n {
                return Err(GraphError::Shape {
                    rows: m.size(),
                    cols: m.size(),
                    expected: n,
                });
            }
            let (diag, nz) = m.min_weights();
            if diag < floor || nz < floor {
                return Err(GraphError::BadFloor { floor, agents: n });
            }
        }
        Ok(Self {
            n,
            window,
            floor,
            seed: 0,
            family: None,
            generator: Generator::Cyclic(matrices),
        })
    }

    /// The same schedule with agent `i` renamed `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self, GraphError> {
        check_permutation(perm, self.n)?;
        Ok(Self {
            n: self.n,
            window: self.window,
            floor: self.floor,
            seed: self.seed,
            family: None,
            generator: Generator::Relabeled {
                inner: Box::new(self.clone()),
                perm: perm.to_vec(),
            },
        })
    }

    /// Writes matrices for rounds `0..rounds`, one CSV block per round,
    /// blocks separated by a blank line.
    pub fn dump_csv<W: Write>(&self, rounds: usize, mut out: W) -> io::Result<()> {
        for k in 0..rounds {
            if k > 0 {
                writeln!(out)?;
            }
            let a = self.matrix(k);
            for row in a.to_dense() {
                let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
                writeln!(out, "{}", line.join(","))?;
            }
        }
        Ok(())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<(), GraphError> {
    if perm.len() != n {
        return Err(GraphError::BadPermutation(n));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(GraphError::BadPermutation(n));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Builds a doubly stochastic, jointly connected schedule of the requested family.
pub fn make_schedule(
    n: usize,
    window: usize,
    floor: f64,
    seed: u64,
    family: ScheduleFamily,
) -> Result<GraphSchedule, GraphError> {
    if n == 0 {
        return Err(GraphError::NoAgents);
    }
    if window == 0 {
        return Err(GraphError::ZeroWindow);
    }
    if !(floor > 0.0 && floor <= 1.0 / n as f64) {
        return Err(GraphError::BadFloor { floor, agents: n });
    }
    let generator = if n == 1 {
        Generator::Cyclic(vec![AdjacencyMatrix::identity(1)])
    } else {
        match family {
            ScheduleFamily::Ring => {
                let mut dense = vec![vec![0.0; n]; n];
                for i in 0..n {
                    dense[i][i] += floor;
                    dense[(i + 1) % n][i] += 1.0 - floor;
                }
                Generator::Cyclic(vec![AdjacencyMatrix::from_dense_unchecked(&dense)])
            }
            ScheduleFamily::RoundRobin => {
                let natural: Vec<usize> = (0..n).collect();
                let phases = (0..window)
                    .map(|r| {
                        let mut dense = vec![vec![0.0; n]; n];
                        for (i, row) in dense.iter_mut().enumerate() {
                            row[i] += 0.5;
                        }
                        let cycles = phase_cycles(&natural, window, r);
                        if cycles.is_empty() {
                            return AdjacencyMatrix::identity(n);
                        }
                        let mut moved = vec![false; n];
                        for cyc in &cycles {
                            for (t, &src) in cyc.iter().enumerate() {
                                let dst = cyc[(t + 1) % cyc.len()];
                                dense[dst][src] += 0.5;
                                moved[src] = true;
                            }
                        }
                        for (i, row) in dense.iter_mut().enumerate() {
                            if !moved[i] {
                                row[i] += 0.5;
                            }
                        }
                        AdjacencyMatrix::from_dense_unchecked(&dense)
                    })
                    .collect();
                Generator::Cyclic(phases)
            }
            ScheduleFamily::Birkhoff => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX);
                let mut cycle: Vec<usize> = (0..n).collect();
                cycle.shuffle(&mut rng);
                Generator::Birkhoff { cycle }
            }
        }
    };
    Ok(GraphSchedule {
        n,
        window,
        floor,
        seed,
        family: Some(family),
        generator,
    })
}

/// Cycles formed by closing the active edge group of phase `r`.
///
/// The `n` edges `cycle[t] -> cycle[t+1]` are cut into `window` contiguous
/// groups; group `r` is a path which, unless it is the whole ring, gets the
/// closing edge back to its start.
fn phase_cycles(cycle: &[usize], window: usize, r: usize) -> Vec<Vec<usize>> {
    let n = cycle.len();
    let start = r * n / window;
    let end = (r + 1) * n / window;
    let edges = end - start;
    if edges == 0 {
        return Vec::new();
    }
    if edges == n {
        return vec![cycle.to_vec()];
    }
    vec![(start..=end).map(|t| cycle[t % n]).collect()]
}

fn birkhoff_matrix(
    n: usize,
    window: usize,
    floor: f64,
    seed: u64,
    cycle: &[usize],
    k: usize,
) -> AdjacencyMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let cycles = phase_cycles(cycle, window, k % window);
    if cycles.is_empty() {
        return AdjacencyMatrix::identity(n);
    }
    let active: Vec<usize> = cycles.iter().flatten().copied().collect();

    // identity + carrier + random permutations, each weight at least the floor
    let budget = (1.0 / floor).floor() as usize;
    let extra = budget.saturating_sub(2).min(3);
    let terms = 2 + extra;
    let raw: Vec<f64> = (0..terms).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = raw.iter().sum();
    let spare = (1.0 - terms as f64 * floor).max(0.0);
    let mut weights: Vec<f64> = raw.iter().map(|r| floor + spare * r / total).collect();
    let head: f64 = weights[..terms - 1].iter().sum();
    weights[terms - 1] = 1.0 - head;

    let mut dense = vec![vec![0.0; n]; n];
    for (i, row) in dense.iter_mut().enumerate() {
        row[i] += weights[0];
    }
    let mut target: Vec<usize> = (0..n).collect();
    for cyc in &cycles {
        for (t, &src) in cyc.iter().enumerate() {
            target[src] = cyc[(t + 1) % cyc.len()];
        }
    }
    for (src, &dst) in target.iter().enumerate() {
        dense[dst][src] += weights[1];
    }
    for w in &weights[2..] {
        let mut shuffled = active.clone();
        shuffled.shuffle(&mut rng);
        let mut target: Vec<usize> = (0..n).collect();
        for (&src, &dst) in active.iter().zip(&shuffled) {
            target[src] = dst;
        }
        for (src, &dst) in target.iter().enumerate() {
            dense[dst][src] += *w;
        }
    }
    AdjacencyMatrix::from_dense_unchecked(&dense)
}

/// Outcome of checking a schedule over a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub horizon: usize,
    pub window: usize,
    pub max_row_deviation: f64,
    pub max_col_deviation: f64,
    pub min_self_weight: f64,
    pub min_nonzero_weight: f64,
    pub windows_checked: usize,
    /// Start rounds of windows whose union digraph is not strongly connected.
    pub disconnected_windows: Vec<usize>,
}

impl ValidationReport {
    pub fn doubly_stochastic(&self) -> bool {
        self.max_row_deviation <= STOCHASTIC_TOL && self.max_col_deviation <= STOCHASTIC_TOL
    }

    pub fn jointly_connected(&self) -> bool {
        self.disconnected_windows.is_empty()
    }

    pub fn passes(&self, floor: f64) -> bool {
        self.doubly_stochastic()
            && self.jointly_connected()
            && self.min_self_weight >= floor
            && self.min_nonzero_weight >= floor
    }
}

/// Checks rounds `0..horizon` and every length-`Q` window starting in
/// `0..=horizon-Q`.
pub fn validate_schedule(s: &GraphSchedule, horizon: usize) -> ValidationReport {
    validate_with_window(s, horizon, s.window())
}

/// As [`validate_schedule`] with an overridden window length.
pub fn validate_with_window(s: &GraphSchedule, horizon: usize, window: usize) -> ValidationReport {
    let window = window.max(1);
    let horizon = horizon.max(window);
    let mats: Vec<AdjacencyMatrix> = (0..horizon).map(|k| s.matrix(k).into_owned()).collect();
    let mut report = ValidationReport {
        horizon,
        window,
        max_row_deviation: 0.0,
        max_col_deviation: 0.0,
        min_self_weight: f64::INFINITY,
        min_nonzero_weight: f64::INFINITY,
        windows_checked: 0,
        disconnected_windows: Vec::new(),
    };
    for m in &mats {
        let (r, c) = m.stochastic_deviation();
        report.max_row_deviation = report.max_row_deviation.max(r);
        report.max_col_deviation = report.max_col_deviation.max(c);
        let (d, nz) = m.min_weights();
        report.min_self_weight = report.min_self_weight.min(d);
        report.min_nonzero_weight = report.min_nonzero_weight.min(nz);
    }
    for start in 0..=(horizon - window) {
        report.windows_checked += 1;
        let edges = mats[start..start + window].iter().flat_map(|m| {
            (0..m.size()).flat_map(move |i| m.in_neighbors(i).map(move |j| (j, i)))
        });
        if !strongly_connected(s.agents(), edges) {
            report.disconnected_windows.push(start);
        }
    }
    report
}

/// Strong connectivity of the digraph on `n` nodes with edges `(from, to)`.
pub fn strongly_connected<I: IntoIterator<Item = (usize, usize)>>(n: usize, edges: I) -> bool {
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (from, to) in edges {
        if from != to {
            g.update_edge(nodes[from], nodes[to], ());
        }
    }
    kosaraju_scc(&g).len() == 1
}

/// `out_i = sum_j a_ij v_j` for every agent.
pub fn mix(a: &AdjacencyMatrix, vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GraphError> {
    let n = a.size();
    if vectors.len() != n {
        return Err(GraphError::VectorCount {
            expected: n,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(GraphError::Dimension {
            index,
            expected: dim,
            got: v.len(),
        });
    }
    Ok((0..n)
        .map(|i| {
            (0..dim)
                .map(|c| {
                    let mut acc = ExactSum::new();
                    acc.extend(a.row(i).iter().map(|&(j, w)| w * vectors[j][c]));
                    acc.value()
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{exact_mean, max_deviation};
    use proptest::prelude::*;

    fn swap_pairs(n: usize, pairs: &[(usize, usize)]) -> AdjacencyMatrix {
        let mut dense = vec![vec![0.0; n]; n];
        for (i, row) in dense.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(i, j) in pairs {
            dense[i][i] = 0.5;
            dense[j][j] = 0.5;
            dense[i][j] = 0.5;
            dense[j][i] = 0.5;
        }
        AdjacencyMatrix::new(dense, 0.5).unwrap()
    }

    #[test]
    fn single_agent_is_trivial() {
        let s = make_schedule(1, 1, 0.5, 3, ScheduleFamily::Birkhoff).unwrap();
        assert_eq!(s.matrix(0).to_dense(), vec![vec![1.0]]);
        assert!(validate_schedule(&s, 4).passes(0.5));
    }

    #[test]
    fn directed_ring_is_permutation_mixture() {
        let s = make_schedule(4, 1, 0.25, 0, ScheduleFamily::Ring).unwrap();
        let a = s.matrix(0);
        assert_eq!(a.get(0, 0), 0.25);
        assert_eq!(a.get(1, 0), 0.75);
        assert_eq!(a.get(0, 3), 0.75);
        let report = validate_schedule(&s, 5);
        assert!(report.passes(0.25), "{report:?}");
    }

    #[test]
    fn identity_schedule_never_connects() {
        let s = GraphSchedule::explicit(vec![AdjacencyMatrix::identity(2)], 1, 0.5).unwrap();
        for q in 1..5 {
            assert!(!validate_with_window(&s, 8, q).jointly_connected());
        }
    }

    #[test]
    fn alternating_matchings_need_two_rounds() {
        // union of {0-1, 2-3} and {1-2, 3-0} is the bidirectional ring
        let even = swap_pairs(4, &[(0, 1), (2, 3)]);
        let odd = swap_pairs(4, &[(1, 2), (3, 0)]);
        let s = GraphSchedule::explicit(vec![even, odd], 2, 0.5).unwrap();
        assert!(validate_with_window(&s, 6, 2).passes(0.5));
        let q1 = validate_with_window(&s, 6, 1);
        assert!(q1.doubly_stochastic());
        assert_eq!(q1.disconnected_windows, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(
            make_schedule(4, 1, 0.3, 0, ScheduleFamily::Birkhoff).unwrap_err(),
            GraphError::BadFloor {
                floor: 0.3,
                agents: 4
            }
        );
        assert!(make_schedule(4, 0, 0.1, 0, ScheduleFamily::Ring).is_err());
        assert!(make_schedule(0, 1, 0.1, 0, ScheduleFamily::Ring).is_err());
        assert_eq!(
            "gossip".parse::<ScheduleFamily>().unwrap_err(),
            GraphError::UnknownFamily("gossip".into())
        );
    }

    #[test]
    fn matrix_validation_catches_errors() {
        assert!(matches!(
            AdjacencyMatrix::new(vec![vec![0.5, 0.5], vec![0.6, 0.4]], 0.1),
            Err(GraphError::NotStochastic { axis: "column", .. })
        ));
        assert!(AdjacencyMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.1).is_ok());
        assert!(matches!(
            AdjacencyMatrix::new(vec![vec![0.95, 0.05], vec![0.05, 0.95]], 0.1),
            Err(GraphError::Floor { .. })
        ));
    }

    #[test]
    fn builtin_windows_are_valid() {
        for family in [ScheduleFamily::Birkhoff, ScheduleFamily::RoundRobin] {
            for q in [2, 50] {
                let s = make_schedule(100, q, 0.01, 11, family).unwrap();
                let report = validate_schedule(&s, 2 * q + 3);
                assert!(report.passes(0.01), "{family} Q={q}: {report:?}");
                // windows shorter than Q are not connected
                let short = validate_with_window(&s, 2 * q + 3, q - 1);
                assert!(!short.jointly_connected(), "{family} Q={q}");
            }
        }
    }

    #[test]
    fn mixing_examples() {
        let a = AdjacencyMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], 0.5).unwrap();
        assert_eq!(mix(&a, &[vec![0.0], vec![2.0]]).unwrap(), vec![vec![1.0], vec![1.0]]);
        let v = vec![vec![1.0, -2.0], vec![3.0, 4.0]];
        assert_eq!(mix(&AdjacencyMatrix::identity(2), &v).unwrap(), v);
        assert!(matches!(
            mix(&a, &[vec![0.0], vec![1.0, 2.0]]),
            Err(GraphError::Dimension { index: 1, .. })
        ));
        assert!(matches!(mix(&a, &[vec![0.0]]), Err(GraphError::VectorCount { .. })));
    }

    #[test]
    fn relabeling_conjugates() {
        let s = make_schedule(5, 2, 0.2, 9, ScheduleFamily::Birkhoff).unwrap();
        let perm = [2, 0, 4, 1, 3];
        let r = s.relabeled(&perm).unwrap();
        for k in 0..4 {
            let (a, b) = (s.matrix(k), r.matrix(k));
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(a.get(i, j), b.get(perm[i], perm[j]));
                }
            }
        }
        assert!(s.relabeled(&[0, 0, 1, 2, 3]).is_err());
    }

    #[test]
    fn dump_has_blank_separated_blocks() {
        let s = make_schedule(3, 1, 0.2, 0, ScheduleFamily::Ring).unwrap();
        let mut buf = Vec::new();
        s.dump_csv(2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let blocks: Vec<&str> = text.split("\n\n").collect();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].lines().count(), 3);
        assert_eq!(blocks[0].lines().next().unwrap().split(',').count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn generated_matrices_are_doubly_stochastic(
            n in 1usize..30, q in 1usize..6, seed in any::<u64>(), k in 0usize..1000, fam in 0usize..3,
        ) {
            let family = [ScheduleFamily::Ring, ScheduleFamily::RoundRobin, ScheduleFamily::Birkhoff][fam];
            let floor = (0.1f64).min(1.0 / n as f64);
            let s = make_schedule(n, q, floor, seed, family).unwrap();
            let a = s.matrix(k);
            let (r, c) = a.stochastic_deviation();
            prop_assert!(r <= STOCHASTIC_TOL && c <= STOCHASTIC_TOL);
            let (d, nz) = a.min_weights();
            prop_assert!(d >= floor && nz >= floor);
            // deterministic
            prop_assert_eq!(a.into_owned(), s.matrix(k).into_owned());
        }

        #[test]
        fn mixing_preserves_mean_and_contracts(
            n in 2usize..20, seed in any::<u64>(), k in 0usize..100,
            values in proptest::collection::vec(-10.0f64..10.0, 40),
        ) {
            let s = make_schedule(n, 2, 1.0 / n as f64, seed, ScheduleFamily::Birkhoff).unwrap();
            let v: Vec<Vec<f64>> = (0..n).map(|i| vec![values[i], values[i + 20]]).collect();
            let out = mix(&s.matrix(k), &v).unwrap();
            let (m0, m1) = (exact_mean(&v), exact_mean(&out));
            for c in 0..2 {
                prop_assert!((m0[c] - m1[c]).abs() <= 1e-10);
            }
            prop_assert!(max_deviation(&out, &m0) <= max_deviation(&v, &m0) + 1e-12);
        }
    }
}
