//! Event-driven execution. Each tile keeps a ring of delay slots and only
//! visits neurons that received input or are still above threshold.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::neuron::{Direction, ResetMode, Role, SupervisorPart};
use super::record::{assemble, StepCostStats, StepDetail, TileOutcome};
use super::{SimulationRecord, SpikingNetwork};
use crate::error::{Error, Result};
use crate::rng;

const NO_GROUP: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub neural_timesteps: u64,
    pub seed: u64,
    /// Keep the cost and peak occupancy of every simulation timestep.
    pub record_step_details: bool,
    /// Stop each tile once it has completed this many simulation timesteps.
    pub stop_after_sim_steps: Option<u64>,
    /// Record per-node occupancy after this many completed simulation
    /// timesteps.
    pub occupancy_snapshot_at: Option<u64>,
    /// Skip over cycles that repeat exactly once a tile has gone quiet.
    pub fast_forward: bool,
}

impl RunOptions {
    pub fn new(neural_timesteps: u64, seed: u64) -> Self {
        RunOptions {
            neural_timesteps,
            seed,
            record_step_details: false,
            stop_after_sim_steps: None,
            occupancy_snapshot_at: None,
            fast_forward: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    threshold: f64,
    leak: f64,
    reset: ResetMode,
    p: Option<f64>,
    group: u32,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    target: u32,
    weight: f64,
    delay: u32,
}

pub(crate) struct TileProgram {
    cells: Vec<Cell>,
    out_start: Vec<u32>,
    out: Vec<Edge>,
    groups: Vec<Vec<u32>>,
    initial: Vec<f64>,
    ring_len: usize,
    transfer_start: u32,
    is_absorb: Vec<bool>,
    /// Per mesh node: the neurons whose potential holds walkers.
    holders: Vec<Vec<u32>>,
    buffers: Vec<u32>,
    tallies: Vec<u32>,
    sink: Vec<u32>,
    gate_offset: f64,
}

impl TileProgram {
    fn content(&self, v: f64) -> f64 {
        if v < 0.0 {
            v + self.gate_offset
        } else {
            v
        }
    }
}

fn compile(network: &SpikingNetwork) -> Result<Vec<TileProgram>> {
    network.validate()?;
    let tiles = network.tiles();
    let size = network.tile_size();
    let n = network.n_nodes();
    let mut edges: Vec<Vec<(u32, Edge)>> = vec![Vec::new(); tiles];
    for s in &network.synapses {
        let tile = s.source as usize / size;
        let base = (tile * size) as u32;
        edges[tile].push((
            s.source - base,
            Edge {
                target: s.target - base,
                weight: s.weight,
                delay: s.delay,
            },
        ));
    }
    edges
        .into_iter()
        .enumerate()
        .map(|(tile, list)| {
            let range = tile * size..(tile + 1) * size;
            let neurons = &network.neurons[range.clone()];
            let places = &network.placements[range];
            let mut group_index: BTreeMap<u32, u32> = BTreeMap::new();
            let mut groups: Vec<Vec<u32>> = Vec::new();
            let cells = neurons
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let group = match s.draw_group {
                        Some(g) => {
                            let next = groups.len() as u32;
                            let k = *group_index.entry(g).or_insert(next);
                            if k == next {
                                groups.push(Vec::new());
                            }
                            groups[k as usize].push(i as u32);
                            k
                        }
                        None => NO_GROUP,
                    };
                    Cell {
                        threshold: s.threshold.unwrap_or(f64::INFINITY),
                        leak: s.leak,
                        reset: s.reset,
                        p: s.stochastic_p,
                        group,
                    }
                })
                .collect();

            let mut out_start = vec![0u32; size + 1];
            for (src, _) in &list {
                out_start[*src as usize + 1] += 1;
            }
            for i in 0..size {
                out_start[i + 1] += out_start[i];
            }
            let mut fill = out_start.clone();
            let mut out = vec![
                Edge {
                    target: 0,
                    weight: 0.0,
                    delay: 1
                };
                list.len()
            ];
            let mut max_delay = 1;
            for (src, e) in list {
                out[fill[src as usize] as usize] = e;
                fill[src as usize] += 1;
                max_delay = max_delay.max(e.delay as usize);
            }

            let mut holders = vec![Vec::new(); n];
            let mut buffers = vec![u32::MAX; n];
            let mut tallies = vec![u32::MAX; n];
            let mut sink = Vec::new();
            let mut transfer_start = u32::MAX;
            let mut is_absorb = vec![false; size];
            for (i, p) in places.iter().enumerate() {
                let id = i as u32;
                let node = p.node.map(|j| j as usize);
                match (p.role, node) {
                    (
                        Role::Supervisor {
                            part: SupervisorPart::TransferStart,
                        },
                        _,
                    ) => transfer_start = id,
                    (
                        Role::OutputGate {
                            direction: Direction::Absorb,
                        },
                        _,
                    ) => is_absorb[i] = true,
                    (Role::Sink, _) => sink.push(id),
                    (Role::Counter, Some(j)) if j == n => sink.push(id),
                    (Role::Counter, Some(j)) => holders[j].push(id),
                    (Role::Buffer, Some(j)) if j < n => {
                        holders[j].push(id);
                        buffers[j] = id;
                    }
                    (Role::Tally, Some(j)) if j < n => tallies[j] = id,
                    _ => {}
                }
            }
            if tallies.contains(&u32::MAX) {
                return Err(Error::contract(format!(
                    "tile {tile} is missing a tally neuron"
                )));
            }
            Ok(TileProgram {
                cells,
                out_start,
                out,
                groups,
                initial: neurons.iter().map(|s| s.initial_potential).collect(),
                ring_len: max_delay + 1,
                transfer_start,
                is_absorb,
                holders,
                buffers,
                tallies,
                sink,
                gate_offset: network.meta.gate_offset(),
            })
        })
        .collect()
}

type Snapshot = (Vec<f64>, Vec<Vec<(u32, f64)>>);

pub(crate) struct TileState {
    v: Vec<f64>,
    ring: Vec<Vec<(u32, f64)>>,
    head: usize,
    carry: Vec<u32>,
    cand: Vec<u32>,
    fired: Vec<u32>,
    above: Vec<u32>,
    pending: Vec<u64>,
    group_stamp: Vec<u64>,
    rng: ChaCha8Rng,
    t: u64,
    transfers: u64,
    last_transfer: u64,
    draws_since_transfer: u64,
    cycle_trace: Vec<u32>,
    snapshot: Option<Snapshot>,
    peak_occupancy: u64,
    transfer_fired: bool,
    absorbed: Vec<u64>,
    completed: u64,
    costs: StepCostStats,
    details: Vec<StepDetail>,
    occupancy: Option<Vec<u64>>,
}

impl TileState {
    fn new(prog: &TileProgram, rng: ChaCha8Rng) -> Self {
        let size = prog.cells.len();
        let v = prog.initial.clone();
        let carry = (0..size as u32)
            .filter(|&i| {
                let c = &prog.cells[i as usize];
                v[i as usize] >= c.threshold || (c.leak != 0.0 && v[i as usize] != 0.0)
            })
            .collect();
        TileState {
            v,
            ring: vec![Vec::new(); prog.ring_len],
            head: 0,
            carry,
            cand: Vec::new(),
            fired: Vec::new(),
            above: Vec::new(),
            pending: vec![0; size.div_ceil(64)],
            group_stamp: vec![0; prog.groups.len()],
            rng,
            t: 0,
            transfers: 0,
            last_transfer: 0,
            draws_since_transfer: 0,
            cycle_trace: Vec::new(),
            snapshot: None,
            peak_occupancy: 0,
            transfer_fired: false,
            absorbed: Vec::new(),
            completed: 0,
            costs: StepCostStats::default(),
            details: Vec::new(),
            occupancy: None,
        }
    }

    fn reset(&mut self, prog: &TileProgram, n: usize) {
        let c = &prog.cells[n];
        match c.reset {
            ResetMode::Absolute { potential } => self.v[n] = potential,
            ResetMode::Subtract => self.v[n] -= c.threshold,
        }
    }

    /// Integrate, fire, reset, leak; then enqueue the outgoing spikes.
    /// Returns the number of neurons that fired.
    fn step(&mut self, prog: &TileProgram) -> u32 {
        let mark = self.t + 1;
        let mut cand = std::mem::take(&mut self.cand);
        let mut fired = std::mem::take(&mut self.fired);
        let mut above = std::mem::take(&mut self.above);
        cand.clear();
        fired.clear();
        for &n in &self.carry {
            self.pending[n as usize / 64] |= 1 << (n % 64);
        }
        let mut slot = std::mem::take(&mut self.ring[self.head]);
        for &(n, w) in &slot {
            self.v[n as usize] += w;
            self.pending[n as usize / 64] |= 1 << (n % 64);
        }
        slot.clear();
        self.ring[self.head] = slot;
        for (k, word) in self.pending.iter_mut().enumerate() {
            let mut bits = std::mem::take(word);
            while bits != 0 {
                cand.push((k * 64) as u32 + bits.trailing_zeros());
                bits &= bits - 1;
            }
        }

        let mut draws = 0;
        for &id in &cand {
            let n = id as usize;
            let c = prog.cells[n];
            if self.v[n] < c.threshold {
                continue;
            }
            if c.group != NO_GROUP {
                let g = c.group as usize;
                if self.group_stamp[g] == mark {
                    continue;
                }
                self.group_stamp[g] = mark;
                above.clear();
                above.extend(
                    prog.groups[g]
                        .iter()
                        .copied()
                        .filter(|&m| self.v[m as usize] >= prog.cells[m as usize].threshold),
                );
                let u = rng::uniform(&mut self.rng);
                draws += 1;
                let mut cum = 0.0;
                let mut chosen = None;
                for &m in &above {
                    cum += prog.cells[m as usize].p.unwrap_or(0.0);
                    if chosen.is_none() && u < cum {
                        chosen = Some(m);
                    }
                }
                if chosen.is_none() && cum >= 1.0 - 1e-12 {
                    chosen = above.last().copied();
                }
                for &m in &above {
                    self.reset(prog, m as usize);
                }
                if let Some(m) = chosen {
                    fired.push(m);
                }
            } else if let Some(p) = c.p {
                draws += 1;
                if rng::uniform(&mut self.rng) < p {
                    fired.push(id);
                }
                self.reset(prog, n);
            } else {
                fired.push(id);
                self.reset(prog, n);
            }
        }

        self.carry.clear();
        for &id in &cand {
            let n = id as usize;
            let c = &prog.cells[n];
            if c.leak != 0.0 {
                let v = self.v[n];
                self.v[n] = if v > 0.0 {
                    (v - c.leak).max(0.0)
                } else {
                    (v + c.leak).min(0.0)
                };
            }
            if self.v[n] >= c.threshold || (c.leak != 0.0 && self.v[n] != 0.0) {
                self.carry.push(id);
            }
        }

        let r = prog.ring_len;
        self.transfer_fired = false;
        for &id in &fired {
            let n = id as usize;
            for e in &prog.out[prog.out_start[n] as usize..prog.out_start[n + 1] as usize] {
                self.ring[(self.head + e.delay as usize) % r].push((e.target, e.weight));
            }
            if id == prog.transfer_start {
                self.transfer_fired = true;
            }
            if prog.is_absorb[n] {
                self.absorbed.push(self.transfers);
            }
        }
        self.head = (self.head + 1) % r;
        self.t += 1;
        self.draws_since_transfer += draws;
        let count = fired.len() as u32;
        self.cand = cand;
        self.fired = fired;
        self.above = above;
        count
    }

    fn occupancy_now(&self, prog: &TileProgram) -> Vec<u64> {
        let mut occ: Vec<u64> = prog
            .holders
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|&i| prog.content(self.v[i as usize]) as u64)
                    .sum()
            })
            .collect();
        occ.push(self.sink_content(prog));
        occ
    }

    fn sink_content(&self, prog: &TileProgram) -> u64 {
        prog.sink
            .iter()
            .map(|&i| prog.content(self.v[i as usize]) as u64)
            .sum()
    }

    /// Bookkeeping for a transfer-start firing at step `self.t - 1`.
    fn on_transfer(&mut self, prog: &TileProgram, opts: &RunOptions) {
        let at = self.t - 1;
        self.transfers += 1;
        if self.transfers > 1 {
            let cost = at - self.last_transfer;
            self.completed += 1;
            self.costs.add(cost, 1);
            if opts.record_step_details {
                self.details.push(StepDetail {
                    neural_cost: cost,
                    max_occupancy: self.peak_occupancy,
                });
            }
        }
        self.last_transfer = at;
        let occ = self.occupancy_now(prog);
        let sink_drains = prog.sink.len() > 1;
        let nodes = if sink_drains {
            &occ[..]
        } else {
            &occ[..occ.len() - 1]
        };
        self.peak_occupancy = nodes.iter().copied().max().unwrap_or(0);
        if opts.occupancy_snapshot_at == Some(self.completed) {
            self.occupancy = Some(occ);
        }
    }

    fn snapshot(&self) -> Snapshot {
        let r = self.ring.len();
        (
            self.v.clone(),
            (0..r)
                .map(|k| self.ring[(self.head + k) % r].clone())
                .collect(),
        )
    }

    fn try_fast_forward(&mut self, prog: &TileProgram, opts: &RunOptions, trace: &mut [u32]) {
        if self.draws_since_transfer != 0 || self.transfers < 2 {
            self.snapshot = None;
            return;
        }
        let now = self.snapshot();
        if self.snapshot.as_ref() == Some(&now) {
            let period = self.cycle_trace.len() as u64;
            let mut m = (opts.neural_timesteps - self.t) / period;
            if let Some(stop) = opts.stop_after_sim_steps {
                m = m.min(stop.saturating_sub(self.completed));
            }
            if m > 0 {
                for k in 0..m {
                    let from = (self.t + k * period) as usize;
                    for (dst, &c) in trace[from..from + period as usize]
                        .iter_mut()
                        .zip(&self.cycle_trace)
                    {
                        *dst += c;
                    }
                }
                if let Some(at) = opts.occupancy_snapshot_at {
                    if at > self.completed && at <= self.completed + m {
                        self.occupancy = Some(self.occupancy_now(prog));
                    }
                }
                if opts.record_step_details {
                    let d = StepDetail {
                        neural_cost: period,
                        max_occupancy: self.peak_occupancy,
                    };
                    self.details.extend(std::iter::repeat_n(d, m as usize));
                }
                self.costs.add(period, m);
                self.t += m * period;
                self.transfers += m;
                self.completed += m;
                self.last_transfer += m * period;
            }
        }
        self.snapshot = Some(now);
    }

    fn outcome(self, prog: &TileProgram) -> TileOutcome {
        let tally = prog
            .tallies
            .iter()
            .map(|&i| self.v[i as usize] as u64)
            .collect();
        TileOutcome {
            tally,
            absorbed: self.absorbed,
            completed: self.completed,
            steps_used: self.t,
            costs: self.costs,
            details: self.details,
            occupancy: self.occupancy,
        }
    }
}

fn run_tile(prog: &TileProgram, tile: u64, opts: &RunOptions, trace: &mut [u32]) -> TileOutcome {
    let mut state = TileState::new(prog, rng::stream(opts.seed, &[tile]));
    while state.t < opts.neural_timesteps {
        let fired = state.step(prog);
        trace[(state.t - 1) as usize] += fired;
        if opts.fast_forward {
            state.cycle_trace.push(fired);
        }
        if state.transfer_fired {
            state.on_transfer(prog, opts);
            if opts
                .stop_after_sim_steps
                .is_some_and(|s| state.completed >= s)
            {
                break;
            }
            if opts.fast_forward {
                state.try_fast_forward(prog, opts, trace);
                state.cycle_trace.clear();
                if opts
                    .stop_after_sim_steps
                    .is_some_and(|s| state.completed >= s)
                {
                    break;
                }
            }
            state.draws_since_transfer = 0;
        }
    }
    state.outcome(prog)
}

/// Runs every tile for `neural_timesteps` steps.
pub fn run(network: &SpikingNetwork, neural_timesteps: u64, seed: u64) -> Result<SimulationRecord> {
    run_with(network, &RunOptions::new(neural_timesteps, seed))
}

/// Tiles run independently in parallel; tile `k` draws from
/// `rng::stream(seed, [k])`.
pub fn run_with(network: &SpikingNetwork, opts: &RunOptions) -> Result<SimulationRecord> {
    if opts.neural_timesteps == 0 {
        return Err(Error::domain("neural_timesteps must be at least 1"));
    }
    let programs = compile(network)?;
    let len = opts.neural_timesteps as usize;
    let (trace, mut outcomes) = programs
        .par_iter()
        .enumerate()
        .fold(
            || (vec![0u32; len], Vec::new()),
            |(mut trace, mut outs), (k, prog)| {
                outs.push((k, run_tile(prog, k as u64, opts, &mut trace)));
                (trace, outs)
            },
        )
        .reduce(
            || (Vec::new(), Vec::new()),
            |(mut ta, mut oa), (tb, ob)| {
                if ta.is_empty() {
                    ta = tb;
                } else if !tb.is_empty() {
                    for (a, b) in ta.iter_mut().zip(&tb) {
                        *a += b;
                    }
                }
                oa.extend(ob);
                (ta, oa)
            },
        );
    outcomes.sort_by_key(|(k, _)| *k);
    let mut trace = if trace.is_empty() {
        vec![0; len]
    } else {
        trace
    };
    let used = outcomes
        .iter()
        .map(|(_, o)| o.steps_used)
        .max()
        .unwrap_or(0);
    trace.truncate(used as usize);
    assemble(
        network,
        opts.seed,
        trace,
        outcomes.into_iter().map(|(_, o)| o).collect(),
    )
}

/// Walkers held by a tile at the current step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub on_nodes: u64,
    pub absorbed: u64,
}

/// All tiles advanced together, one neural timestep at a time.
pub struct Simulation<'a> {
    network: &'a SpikingNetwork,
    programs: Vec<TileProgram>,
    states: Vec<TileState>,
    options: RunOptions,
    trace: Vec<u32>,
}

impl<'a> Simulation<'a> {
    pub fn new(network: &'a SpikingNetwork, seed: u64) -> Result<Self> {
        let programs = compile(network)?;
        let states = programs
            .iter()
            .enumerate()
            .map(|(k, p)| TileState::new(p, rng::stream(seed, &[k as u64])))
            .collect();
        let mut options = RunOptions::new(u64::MAX, seed);
        options.fast_forward = false;
        Ok(Simulation {
            network,
            programs,
            states,
            options,
            trace: Vec::new(),
        })
    }

    pub fn neural_t(&self) -> u64 {
        self.trace.len() as u64
    }

    /// Advances every tile by one neural timestep and returns the number of
    /// spikes emitted.
    pub fn neural_step(&mut self) -> u32 {
        let mut total = 0;
        for (prog, state) in self.programs.iter().zip(self.states.iter_mut()) {
            total += state.step(prog);
            if state.transfer_fired {
                state.on_transfer(prog, &self.options);
                state.draws_since_transfer = 0;
            }
        }
        self.trace.push(total);
        total
    }

    pub fn sim_t(&self, tile: usize) -> u64 {
        self.states[tile].completed
    }

    /// Whether the tile's transfer-start neuron fired on the last step. At
    /// that moment every walker sits in a buffer or in the sink.
    pub fn transfer_started(&self, tile: usize) -> bool {
        self.states[tile].transfer_fired
    }

    /// Tile-local ids of the neurons that fired on the last step.
    pub fn fired(&self, tile: usize) -> &[u32] {
        &self.states[tile].fired
    }

    pub fn potentials(&self, tile: usize) -> &[f64] {
        &self.states[tile].v
    }

    pub fn tally(&self, tile: usize) -> Vec<u64> {
        let p = &self.programs[tile];
        p.tallies
            .iter()
            .map(|&i| self.states[tile].v[i as usize] as u64)
            .collect()
    }

    /// Per-node buffer contents of a tile.
    pub fn buffers(&self, tile: usize) -> Vec<u64> {
        let p = &self.programs[tile];
        p.buffers
            .iter()
            .map(|&i| p.content(self.states[tile].v[i as usize]) as u64)
            .collect()
    }

    pub fn census(&self, tile: usize) -> Census {
        let p = &self.programs[tile];
        let s = &self.states[tile];
        let occ = s.occupancy_now(p);
        Census {
            on_nodes: occ[..occ.len() - 1].iter().sum(),
            absorbed: s.sink_content(p),
        }
    }

    pub fn into_record(self) -> Result<SimulationRecord> {
        let outcomes = self
            .programs
            .iter()
            .zip(self.states)
            .map(|(p, s)| s.outcome(p))
            .collect();
        assemble(self.network, self.options.seed, self.trace, outcomes)
    }
}
