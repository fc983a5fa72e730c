//! Direct Monte Carlo execution of the reflecting/absorbing nearest-neighbour
//! walk and the occupancy-count estimator built on it.
//!
//! Each step maps one uniform draw onto a fixed partition of `[0, 1)`:
//!
//! | node            | partition                               |
//! |-----------------|-----------------------------------------|
//! | interior `j`    | `[left | right | stay]`                 |
//! | `0` (reflecting)| `[right (p_left + p_right) | stay]`     |
//! | `N - 1`         | `[left | absorb | stay]`                |
//! | `0 = N - 1`     | `[absorb (p_left + p_right) | stay]`    |

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, TransitionProbabilities};
use crate::rng::{self, WALKER_BLOCK};

/// Largest mesh the dense oracle will factorize.
pub const MAX_ORACLE_NODES: usize = 512;

/// Per-step move probabilities. Left and right may differ, which models
/// hardware that cannot express the symmetric value exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moves {
    pub p_left: f64,
    pub p_right: f64,
}

impl Moves {
    pub fn new(p_left: f64, p_right: f64) -> Result<Self> {
        let ok = |p: f64| p.is_finite() && p > 0.0;
        if !(ok(p_left) && ok(p_right) && p_left + p_right < 1.0) {
            return Err(Error::domain(format!(
                "move probabilities must be positive with p_left + p_right < 1, got ({p_left}, {p_right})"
            )));
        }
        Ok(Moves { p_left, p_right })
    }

    pub fn symmetric(p_go: f64) -> Result<Self> {
        Self::new(p_go, p_go)
    }

    pub fn p_stay(&self) -> f64 {
        1.0 - self.p_left - self.p_right
    }

    pub fn is_symmetric(&self) -> bool {
        self.p_left == self.p_right
    }
}

impl From<TransitionProbabilities> for Moves {
    fn from(p: TransitionProbabilities) -> Self {
        Moves {
            p_left: p.p_go,
            p_right: p.p_go,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    Node(usize),
    Absorbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkerState {
    pub position: Position,
    pub steps_taken: u64,
}

impl WalkerState {
    pub fn at(node: usize) -> Self {
        WalkerState {
            position: Position::Node(node),
            steps_taken: 0,
        }
    }
}

/// The outcome of one step from `node` for a uniform `draw`.
#[inline]
fn next_position(node: usize, n_nodes: usize, moves: &Moves, draw: f64) -> Position {
    let last = n_nodes - 1;
    let both = moves.p_left + moves.p_right;
    if node == 0 {
        return if draw < both {
            if last == 0 {
                Position::Absorbed
            } else {
                Position::Node(1)
            }
        } else {
            Position::Node(0)
        };
    }
    if draw < moves.p_left {
        Position::Node(node - 1)
    } else if draw < both {
        if node == last {
            Position::Absorbed
        } else {
            Position::Node(node + 1)
        }
    } else {
        Position::Node(node)
    }
}

/// Advances one walker by one timestep.
pub fn step_walker(
    state: WalkerState,
    moves: &Moves,
    n_nodes: usize,
    draw: f64,
) -> Result<WalkerState> {
    let node = match state.position {
        Position::Absorbed => return Err(Error::contract("cannot step an absorbed walker")),
        Position::Node(j) if j >= n_nodes => {
            return Err(Error::contract(format!(
                "node {j} is outside a mesh of {n_nodes}"
            )))
        }
        Position::Node(j) => j,
    };
    if !(0.0..1.0).contains(&draw) {
        return Err(Error::domain(format!(
            "draw must lie in [0, 1), got {draw}"
        )));
    }
    Ok(WalkerState {
        position: next_position(node, n_nodes, moves, draw),
        steps_taken: state.steps_taken + 1,
    })
}

/// Cumulative post-initialization occupancy `n_ij`, row `i` = start node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    n_nodes: usize,
    /// Row-major `N × N`.
    counts: Vec<u64>,
    /// Walkers launched from each start node (0 where a row was not run).
    walkers: Vec<u64>,
    pub max_steps_used: u64,
}

impl NodeCounts {
    pub fn zeros(n_nodes: usize) -> Self {
        NodeCounts {
            n_nodes,
            counts: vec![0; n_nodes * n_nodes],
            walkers: vec![0; n_nodes],
            max_steps_used: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn get(&self, start: usize, node: usize) -> u64 {
        self.counts[start * self.n_nodes + node]
    }

    pub fn row(&self, start: usize) -> &[u64] {
        &self.counts[start * self.n_nodes..(start + 1) * self.n_nodes]
    }

    pub fn walkers(&self, start: usize) -> u64 {
        self.walkers[start]
    }

    pub fn add_row(&mut self, start: usize, walkers: u64, row: &[u64]) -> Result<()> {
        if start >= self.n_nodes || row.len() != self.n_nodes {
            return Err(Error::contract(format!(
                "row {start} of length {} does not fit {} nodes",
                row.len(),
                self.n_nodes
            )));
        }
        self.walkers[start] += walkers;
        for (dst, &v) in self.counts[start * self.n_nodes..].iter_mut().zip(row) {
            *dst += v;
        }
        Ok(())
    }

    /// Adds another table into this one; order of merging does not matter.
    pub fn merge(&mut self, other: &NodeCounts) -> Result<()> {
        if other.n_nodes != self.n_nodes {
            return Err(Error::contract(format!(
                "cannot merge counts over {} nodes into {}",
                other.n_nodes, self.n_nodes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.walkers.iter_mut().zip(&other.walkers) {
            *a += b;
        }
        self.max_steps_used = self.max_steps_used.max(other.max_steps_used);
        Ok(())
    }

    /// Columns: `start_node,walkers,n_0,...,n_{N-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_node,walkers");
        for j in 0..self.n_nodes {
            out.push_str(&format!(",n_{j}"));
        }
        out.push('\n');
        for i in 0..self.n_nodes {
            out.push_str(&format!("{i},{}", self.walkers[i]));
            for v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSolution {
    pub x: Vec<f64>,
    /// `u_i = -(FΔt/M) Σ_j n_ij (ℓ - x_j)`.
    pub u_raw: Vec<f64>,
    /// `u_i - u_0`.
    pub u: Vec<f64>,
    pub unabsorbed_fraction: f64,
}

impl MeshSolution {
    /// Columns: `node,x,u_raw,u`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,x,u_raw,u\n");
        for (i, ((x, r), u)) in self.x.iter().zip(&self.u_raw).zip(&self.u).enumerate() {
            out.push_str(&format!("{i},{x},{r},{u}\n"));
        }
        out
    }
}

/// Outcome of releasing walkers from a single start node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRun {
    pub counts: NodeCounts,
    /// One entry per walker: the step on which it was absorbed, or
    /// `max_steps` for walkers still in the wire when the budget ran out.
    pub absorption_steps: Vec<u64>,
    pub unabsorbed: u64,
    /// Sum of absorption steps over absorbed walkers.
    pub absorbed_step_sum: u64,
}

impl WalkRun {
    /// Mean absorption step over absorbed walkers only.
    pub fn mean_absorption_steps(&self) -> Option<f64> {
        let absorbed = self.absorption_steps.len() as u64 - self.unabsorbed;
        (absorbed > 0).then(|| self.absorbed_step_sum as f64 / absorbed as f64)
    }
}

struct BlockResult {
    row: Vec<u64>,
    absorption_steps: Vec<u64>,
    unabsorbed: u64,
    absorbed_step_sum: u64,
}

fn run_block(
    n_nodes: usize,
    moves: &Moves,
    start: usize,
    walkers: u64,
    max_steps: u64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> BlockResult {
    let mut row = vec![0u64; n_nodes];
    let mut absorption_steps = Vec::with_capacity(walkers as usize);
    let mut unabsorbed = 0;
    let mut absorbed_step_sum = 0;
    for _ in 0..walkers {
        let mut node = start;
        let mut steps = 0u64;
        loop {
            if steps == max_steps {
                unabsorbed += 1;
                absorption_steps.push(max_steps);
                break;
            }
            steps += 1;
            match next_position(node, n_nodes, moves, rng::uniform(rng)) {
                Position::Node(j) => {
                    row[j] += 1;
                    node = j;
                }
                Position::Absorbed => {
                    absorption_steps.push(steps);
                    absorbed_step_sum += steps;
                    break;
                }
            }
        }
    }
    BlockResult {
        row,
        absorption_steps,
        unabsorbed,
        absorbed_step_sum,
    }
}

/// Releases `walkers` walkers at `start` and steps each until absorption or
/// `max_steps`. Blocks of [`WALKER_BLOCK`] walkers run in parallel, each on its
/// own stream `rng::stream(seed, [start, block])`.
pub fn run_walkers(
    spec: &ProblemSpec,
    moves: &Moves,
    start: usize,
    walkers: u64,
    seed: u64,
    max_steps: u64,
) -> Result<WalkRun> {
    let n = spec.n_nodes();
    if start >= n {
        return Err(Error::domain(format!(
            "start node {start} outside mesh of {n}"
        )));
    }
    if walkers == 0 || max_steps == 0 {
        return Err(Error::domain("walkers and max_steps must be at least 1"));
    }
    let blocks = walkers.div_ceil(WALKER_BLOCK);
    let results: Vec<BlockResult> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let size = WALKER_BLOCK.min(walkers - b * WALKER_BLOCK);
            let mut rng = rng::stream(seed, &[start as u64, b]);
            run_block(n, moves, start, size, max_steps, &mut rng)
        })
        .collect();

    let mut row = vec![0u64; n];
    let mut absorption_steps = Vec::with_capacity(walkers as usize);
    let mut unabsorbed = 0;
    let mut absorbed_step_sum = 0;
    for r in results {
        absorbed_step_sum += r.absorbed_step_sum;
        for (a, b) in row.iter_mut().zip(&r.row) {
            *a += b;
        }
        absorption_steps.extend_from_slice(&r.absorption_steps);
        unabsorbed += r.unabsorbed;
    }
    let mut counts = NodeCounts::zeros(n);
    counts.add_row(start, walkers, &row)?;
    counts.max_steps_used = max_steps;
    Ok(WalkRun {
        counts,
        absorption_steps,
        unabsorbed,
        absorbed_step_sum,
    })
}

/// Applies `u_i = -(FΔt/M_i) Σ_j n_ij (ℓ - x_j)` and shifts by `u_0`.
pub fn estimate_solution(counts: &NodeCounts, spec: &ProblemSpec) -> Result<MeshSolution> {
    let n = spec.n_nodes();
    if counts.n_nodes() != n {
        return Err(Error::contract(format!(
            "counts cover {} nodes but the mesh has {n}",
            counts.n_nodes()
        )));
    }
    if let Some(i) = (0..n).find(|&i| counts.walkers(i) == 0) {
        return Err(Error::contract(format!(
            "no walkers were started at node {i}"
        )));
    }
    let x = spec.mesh().positions;
    let scale = spec.forcing() * spec.dt();
    let u_raw: Vec<f64> = (0..n)
        .map(|i| {
            let weighted: f64 = counts
                .row(i)
                .iter()
                .zip(&x)
                .map(|(&c, &xj)| c as f64 * (spec.length() - xj))
                .sum();
            -scale * weighted / counts.walkers(i) as f64
        })
        .collect();
    let u0 = u_raw[0];
    let u = u_raw.iter().map(|v| v - u0).collect();
    Ok(MeshSolution {
        x,
        u_raw,
        u,
        unabsorbed_fraction: 0.0,
    })
}

/// Expected post-initialization visit counts `E[n_ij]/M`, from the
/// fundamental matrix of the absorbing chain: `(I - Q)^-1 - I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    n_nodes: usize,
    values: Vec<f64>,
}

impl ExpectedCounts {
    pub fn get(&self, start: usize, node: usize) -> f64 {
        self.values[start * self.n_nodes + node]
    }

    pub fn row(&self, start: usize) -> &[f64] {
        &self.values[start * self.n_nodes..(start + 1) * self.n_nodes]
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
}

/// Transient-to-transient transition matrix implied by [`step_walker`], plus
/// the per-row absorption mass.
pub fn transient_matrix(n_nodes: usize, moves: &Moves) -> (DMatrix<f64>, Vec<f64>) {
    let mut q = DMatrix::zeros(n_nodes, n_nodes);
    let mut absorb = vec![0.0; n_nodes];
    let stay = moves.p_stay();
    let both = moves.p_left + moves.p_right;
    for j in 0..n_nodes {
        q[(j, j)] = stay;
        if j == 0 {
            if n_nodes == 1 {
                absorb[0] = both;
            } else {
                q[(0, 1)] = both;
            }
            continue;
        }
        q[(j, j - 1)] = moves.p_left;
        if j + 1 < n_nodes {
            q[(j, j + 1)] = moves.p_right;
        } else {
            absorb[j] = moves.p_right;
        }
    }
    (q, absorb)
}

pub fn exact_expected_counts(spec: &ProblemSpec) -> Result<ExpectedCounts> {
    exact_expected_counts_for(spec.n_nodes(), &spec.transition_probabilities().into())
}

pub fn exact_expected_counts_for(n_nodes: usize, moves: &Moves) -> Result<ExpectedCounts> {
    if n_nodes == 0 || n_nodes > MAX_ORACLE_NODES {
        return Err(Error::domain(format!(
            "dense oracle supports 1..={MAX_ORACLE_NODES} nodes, got {n_nodes}"
        )));
    }
    let (q, _) = transient_matrix(n_nodes, moves);
    let a = DMatrix::identity(n_nodes, n_nodes) - q;
    let fundamental = a
        .lu()
        .solve(&DMatrix::identity(n_nodes, n_nodes))
        .ok_or_else(|| Error::Numeric("I - Q is singular".into()))?;
    let mut values = Vec::with_capacity(n_nodes * n_nodes);
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            let delta = if i == j { 1.0 } else { 0.0 };
            values.push(fundamental[(i, j)] - delta);
        }
    }
    Ok(ExpectedCounts { n_nodes, values })
}

/// Ten times the continuum mean absorption time from the origin, in steps.
pub fn default_max_steps(spec: &ProblemSpec) -> u64 {
    (10.0 * spec.mean_steps_from_origin()).ceil() as u64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Walkers per start node, `M`.
    pub walkers: u64,
    pub seed: u64,
    pub max_steps: u64,
    pub runs: u32,
    /// Overrides the Gaussian-derived probabilities.
    pub moves: Option<Moves>,
}

impl SolveConfig {
    pub fn new(spec: &ProblemSpec, walkers: u64, seed: u64) -> Self {
        SolveConfig {
            walkers,
            seed,
            max_steps: default_max_steps(spec),
            runs: 1,
            moves: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSolution {
    pub seed: u64,
    pub counts: NodeCounts,
    pub solution: MeshSolution,
    /// Mean absorption step per start node over absorbed walkers.
    pub mean_absorption_steps: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub runs: Vec<RunSolution>,
    pub mean: MeshSolution,
}

/// Runs every start node `runs` times; run `r` uses seed `derive_seed(seed, r)`.
pub fn solve(spec: &ProblemSpec, config: &SolveConfig) -> Result<SolveResult> {
    if config.runs == 0 {
        return Err(Error::domain("runs must be at least 1"));
    }
    let moves = config
        .moves
        .unwrap_or_else(|| spec.transition_probabilities().into());
    let n = spec.n_nodes();
    let mut runs = Vec::with_capacity(config.runs as usize);
    for r in 0..config.runs {
        let seed = rng::derive_seed(config.seed, r as u64);
        let walks = (0..n)
            .into_par_iter()
            .map(|i| run_walkers(spec, &moves, i, config.walkers, seed, config.max_steps))
            .collect::<Result<Vec<_>>>()?;
        let mut counts = NodeCounts::zeros(n);
        let mut unabsorbed = 0;
        let mut means = Vec::with_capacity(n);
        for w in &walks {
            counts.merge(&w.counts)?;
            unabsorbed += w.unabsorbed;
            means.push(w.mean_absorption_steps());
        }
        let mut solution = estimate_solution(&counts, spec)?;
        solution.unabsorbed_fraction = unabsorbed as f64 / (config.walkers * n as u64) as f64;
        runs.push(RunSolution {
            seed,
            counts,
            solution,
            mean_absorption_steps: means,
        });
    }
    let mean = mean_solution(&runs.iter().map(|r| &r.solution).collect::<Vec<_>>())?;
    Ok(SolveResult { runs, mean })
}

/// Pointwise mean of several solutions on the same mesh.
pub fn mean_solution(solutions: &[&MeshSolution]) -> Result<MeshSolution> {
    let first = solutions
        .first()
        .ok_or_else(|| Error::contract("cannot average zero solutions"))?;
    let n = first.x.len();
    if solutions.iter().any(|s| s.x.len() != n) {
        return Err(Error::contract("solutions disagree on mesh size"));
    }
    let k = solutions.len() as f64;
    let avg = |f: fn(&MeshSolution) -> &Vec<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| solutions.iter().map(|s| f(s)[i]).sum::<f64>() / k)
            .collect()
    };
    Ok(MeshSolution {
        x: first.x.clone(),
        u_raw: avg(|s| &s.u_raw),
        u: avg(|s| &s.u),
        unabsorbed_fraction: solutions.iter().map(|s| s.unabsorbed_fraction).sum::<f64>() / k,
    })
}
