//! The walk compiled into a spiking network.
//!
//! Each tile holds one copy of the mesh. Node `j` of a tile is a sub-circuit
//!
//! ```text
//!   B_j --> C_j --> P_j{dir} --> O_j{dir} --> B_target, T_target
//!    \       \
//!     +-------+--> D_j --> S
//! ```
//!
//! where `B` buffers arriving walkers, `C` counts them, the probability gates
//! `P` share one uniform draw per walker so exactly one fires, the output
//! gates `O` route the walker on, `T` tallies visits and `D` reports to the
//! tile supervisor `S` once the draining neuron has gone quiet.
//!
//! Walker counts live in the potential of `B` and `C`. A neuron is *closed*
//! when its potential is offset by `-G` (`G = walkers_per_tile + 1`), which
//! keeps it below threshold no matter how many walkers it holds. The
//! supervisor alternates two phases, each started by a pulse of `±G`:
//!
//! * transfer (`TransferStart`): buffers open and drain into closed counters;
//! * drain (`DrainStart`): counters open and drain through the gates into
//!   closed buffers.
//!
//! A phase costs `K + const` neural timesteps, where `K` is the largest count
//! being drained, so one simulation timestep costs `2K + 9`.
//!
//! With [`AbsorbPolicy::Remove`] the absorb gate feeds an inert sink. With
//! [`AbsorbPolicy::Accumulate`] it feeds a sink buffer/counter pair that is
//! drained and refilled every timestep like any other node, so a full sink
//! keeps costing neural time.

mod engine;
mod neuron;
mod quantize;
mod record;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcwalk::Moves;
use crate::problem::ProblemSpec;

pub use engine::{run, run_with, Census, RunOptions, Simulation};
pub use neuron::{Direction, NeuronSpec, Placement, ResetMode, Role, SupervisorPart, SynapseSpec};
pub use quantize::{quantization_bias_preset, quantize_probability, PrecisionConfig, Rounding};
pub use record::{decode_counts, SimulationRecord, StepCostStats, StepDetail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorbPolicy {
    #[default]
    Remove,
    Accumulate,
}

impl std::str::FromStr for AbsorbPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "remove" => Ok(AbsorbPolicy::Remove),
            "accumulate" => Ok(AbsorbPolicy::Accumulate),
            _ => Err(Error::domain(format!(
                "unknown absorb policy '{s}', expected remove or accumulate"
            ))),
        }
    }
}

/// Which start nodes receive tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartNodes {
    /// `tiles` tiles for every node, ordered by start node.
    #[default]
    All,
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub walkers_per_tile: u32,
    /// Tiles per start node.
    pub tiles: u32,
    pub start: StartNodes,
    pub precision: PrecisionConfig,
    pub absorb_policy: AbsorbPolicy,
    /// Gate probabilities used verbatim instead of the quantized Gaussian
    /// values.
    pub moves: Option<Moves>,
}

impl NetworkConfig {
    pub fn new(walkers_per_tile: u32, tiles: u32) -> Self {
        NetworkConfig {
            walkers_per_tile,
            tiles,
            start: StartNodes::All,
            precision: PrecisionConfig::default(),
            absorb_policy: AbsorbPolicy::Remove,
            moves: None,
        }
    }
}

/// Neurons in one tile: 3 supervisor neurons, 8 for node 0, 10 for every
/// other node, and 1 (remove) or 3 (accumulate) for the sink.
pub fn neurons_per_tile(n_nodes: usize, policy: AbsorbPolicy) -> usize {
    let sink = match policy {
        AbsorbPolicy::Remove => 1,
        AbsorbPolicy::Accumulate => 3,
    };
    3 + 8 + 10 * (n_nodes - 1) + sink
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub problem: ProblemSpec,
    pub walkers_per_tile: u32,
    /// Start node of each tile.
    pub tile_starts: Vec<u32>,
    pub absorb_policy: AbsorbPolicy,
    pub precision: PrecisionConfig,
    pub moves: Moves,
}

impl NetworkMeta {
    pub fn n_nodes(&self) -> usize {
        self.problem.n_nodes()
    }

    pub fn tiles(&self) -> usize {
        self.tile_starts.len()
    }

    /// Offset `G` that closes a buffer or counter.
    pub fn gate_offset(&self) -> f64 {
        self.walkers_per_tile as f64 + 1.0
    }
}

/// Neurons are numbered tile by tile; synapses are kept sorted by
/// `(source, target, delay)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingNetwork {
    pub neurons: Vec<NeuronSpec>,
    pub placements: Vec<Placement>,
    pub synapses: Vec<SynapseSpec>,
    pub meta: NetworkMeta,
}

impl SpikingNetwork {
    pub fn tiles(&self) -> usize {
        self.meta.tiles()
    }

    pub fn n_nodes(&self) -> usize {
        self.meta.n_nodes()
    }

    pub fn tile_size(&self) -> usize {
        self.neurons.len() / self.tiles().max(1)
    }

    pub(crate) fn sort_synapses(&mut self) {
        self.synapses.sort_by(|a, b| {
            (a.source, a.target, a.delay)
                .cmp(&(b.source, b.target, b.delay))
                .then(a.weight.total_cmp(&b.weight))
        });
    }

    /// Structural checks: referential integrity, delays, tile locality,
    /// one sub-circuit per node per tile, representable probabilities.
    pub fn validate(&self) -> Result<()> {
        let n_neurons = self.neurons.len();
        if self.placements.len() != n_neurons {
            return Err(Error::contract("placements and neurons differ in length"));
        }
        let tiles = self.tiles();
        if tiles == 0 {
            return Err(Error::contract("network has no tiles"));
        }
        if !n_neurons.is_multiple_of(tiles) {
            return Err(Error::contract("neurons do not split evenly across tiles"));
        }
        let size = n_neurons / tiles;
        let n = self.n_nodes();
        for (id, (neuron, place)) in self.neurons.iter().zip(&self.placements).enumerate() {
            if place.tile as usize != id / size {
                return Err(Error::contract(format!(
                    "neuron {id} is placed outside its tile"
                )));
            }
            if place.role != neuron.role {
                return Err(Error::contract(format!(
                    "neuron {id} has inconsistent roles"
                )));
            }
            if let Some(node) = place.node {
                if node as usize > n {
                    return Err(Error::contract(format!(
                        "neuron {id} sits on unknown node {node}"
                    )));
                }
            }
            if let Some(t) = neuron.threshold {
                if !t.is_finite() {
                    return Err(Error::contract(format!(
                        "neuron {id} has a non-finite threshold"
                    )));
                }
            }
            if !neuron.leak.is_finite()
                || neuron.leak < 0.0
                || !neuron.initial_potential.is_finite()
            {
                return Err(Error::contract(format!(
                    "neuron {id} has invalid leak or potential"
                )));
            }
            if let Some(p) = neuron.stochastic_p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::contract(format!("neuron {id} has probability {p}")));
                }
                if let Some(bits) = neuron.precision_bits {
                    let scaled = p * (1u64 << bits.min(52)) as f64;
                    if (scaled - scaled.round()).abs() > 1e-9 {
                        return Err(Error::contract(format!(
                            "neuron {id}: probability {p} is not representable with {bits} bits"
                        )));
                    }
                }
            }
            if neuron.draw_group.is_some() && neuron.stochastic_p.is_none() {
                return Err(Error::contract(format!(
                    "neuron {id} joins a draw group without a probability"
                )));
            }
        }
        for (k, s) in self.synapses.iter().enumerate() {
            if s.source as usize >= n_neurons || s.target as usize >= n_neurons {
                return Err(Error::contract(format!(
                    "synapse {k} has a dangling endpoint"
                )));
            }
            if s.delay == 0 {
                return Err(Error::contract(format!("synapse {k} has zero delay")));
            }
            if !s.weight.is_finite() {
                return Err(Error::contract(format!(
                    "synapse {k} has a non-finite weight"
                )));
            }
            if s.source as usize / size != s.target as usize / size {
                return Err(Error::contract(format!("synapse {k} crosses tiles")));
            }
            let (a, b) = (
                self.placements[s.source as usize],
                self.placements[s.target as usize],
            );
            if let (Some(x), Some(y)) = (a.node, b.node) {
                if x.abs_diff(y) > 1 {
                    return Err(Error::contract(format!(
                        "synapse {k} joins non-adjacent nodes"
                    )));
                }
            }
        }
        for tile in 0..tiles {
            let mut per_node: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
            let mut barrier = 0;
            let mut transfer = 0;
            for p in &self.placements[tile * size..(tile + 1) * size] {
                match p.role {
                    Role::Supervisor {
                        part: SupervisorPart::Barrier,
                    } => barrier += 1,
                    Role::Supervisor {
                        part: SupervisorPart::TransferStart,
                    } => transfer += 1,
                    _ => {}
                }
                if let Some(node) = p.node.filter(|&j| (j as usize) < n) {
                    let slot = per_node.entry(node).or_default();
                    match p.role {
                        Role::Counter => slot[0] += 1,
                        Role::Buffer => slot[1] += 1,
                        Role::ProbabilityGate { .. } => slot[2] += 1,
                        Role::OutputGate { .. } => slot[3] += 1,
                        _ => {}
                    }
                }
            }
            if barrier != 1 || transfer != 1 {
                return Err(Error::contract(format!(
                    "tile {tile} needs one barrier and one transfer-start neuron"
                )));
            }
            if per_node.len() != n
                || per_node
                    .values()
                    .any(|c| c[0] != 1 || c[1] != 1 || c[2] < 2 || c[2] != c[3])
            {
                return Err(Error::contract(format!(
                    "tile {tile} lacks a complete sub-circuit on every node"
                )));
            }
        }
        if self.meta.tile_starts.iter().any(|&s| s as usize >= n) {
            return Err(Error::contract("tile start node outside the mesh"));
        }
        Ok(())
    }
}

struct TileBuilder<'a> {
    neurons: &'a mut Vec<NeuronSpec>,
    placements: &'a mut Vec<Placement>,
    synapses: &'a mut Vec<SynapseSpec>,
    tile: u32,
}

impl TileBuilder<'_> {
    fn add(&mut self, node: Option<usize>, spec: NeuronSpec) -> u32 {
        let id = self.neurons.len() as u32;
        self.placements.push(Placement {
            tile: self.tile,
            node: node.map(|j| j as u32),
            role: spec.role,
        });
        self.neurons.push(spec);
        id
    }

    fn wire(&mut self, source: u32, target: u32, weight: f64, delay: u32) {
        self.synapses.push(SynapseSpec {
            source,
            target,
            weight,
            delay,
        });
    }

    /// `D` stays at zero while `source` fires on consecutive steps and
    /// reaches threshold one step after its last spike.
    fn watch(&mut self, source: u32, detector: u32) {
        self.wire(source, detector, 1.0, 2);
        self.wire(source, detector, -1.0, 1);
    }
}

struct NodeIds {
    buffer: u32,
    counter: u32,
    detector: u32,
    tally: Option<u32>,
    outputs: Vec<(Direction, u32)>,
}

fn gate_layout(j: usize, n: usize, moves: &Moves) -> Vec<(Direction, f64)> {
    let go = moves.p_left + moves.p_right;
    let stay = moves.p_stay();
    match (j == 0, j + 1 == n) {
        (true, true) => vec![(Direction::Absorb, go), (Direction::Stay, stay)],
        (true, false) => vec![(Direction::Right, go), (Direction::Stay, stay)],
        (false, true) => vec![
            (Direction::Left, moves.p_left),
            (Direction::Absorb, moves.p_right),
            (Direction::Stay, stay),
        ],
        (false, false) => vec![
            (Direction::Left, moves.p_left),
            (Direction::Right, moves.p_right),
            (Direction::Stay, stay),
        ],
    }
}

/// Compiles the mesh into `tiles` copies of the node chain per start node.
pub fn build_network(spec: &ProblemSpec, config: &NetworkConfig) -> Result<SpikingNetwork> {
    if config.tiles == 0 {
        return Err(Error::domain("tiles must be at least 1"));
    }
    let n = spec.n_nodes();
    let starts: Vec<u32> = match config.start {
        StartNodes::All => (0..n as u32)
            .flat_map(|s| std::iter::repeat_n(s, config.tiles as usize))
            .collect(),
        StartNodes::Node(s) if s < n => vec![s as u32; config.tiles as usize],
        StartNodes::Node(s) => {
            return Err(Error::domain(format!("start node {s} outside mesh of {n}")))
        }
    };
    let (moves, bits) = match config.moves {
        Some(m) => (m, None),
        None => (
            config
                .precision
                .gate_moves(spec.transition_probabilities().p_go)?,
            config.precision.bits,
        ),
    };
    if !moves.is_symmetric() {
        log::warn!(
            "gate probabilities are asymmetric (left {}, right {})",
            moves.p_left,
            moves.p_right
        );
    }

    let size = neurons_per_tile(n, config.absorb_policy);
    let total = size * starts.len();
    let mut neurons = Vec::with_capacity(total);
    let mut placements = Vec::with_capacity(total);
    let mut synapses = Vec::new();
    let g = config.walkers_per_tile as f64 + 1.0;
    let w = config.walkers_per_tile as f64;
    let subtract = ResetMode::Subtract;
    let zero = ResetMode::Absolute { potential: 0.0 };
    let detectors = n + matches!(config.absorb_policy, AbsorbPolicy::Accumulate) as usize;

    for (tile, &start) in starts.iter().enumerate() {
        let mut b = TileBuilder {
            neurons: &mut neurons,
            placements: &mut placements,
            synapses: &mut synapses,
            tile: tile as u32,
        };
        let supervisor = |part| Role::Supervisor { part };
        let barrier = b.add(
            None,
            NeuronSpec::deterministic(supervisor(SupervisorPart::Barrier), detectors as f64, zero)
                .with_initial(detectors as f64),
        );
        let drain = b.add(
            None,
            NeuronSpec::deterministic(supervisor(SupervisorPart::DrainStart), 2.0, zero),
        );
        let transfer = b.add(
            None,
            NeuronSpec::deterministic(supervisor(SupervisorPart::TransferStart), 1.0, zero),
        );
        b.wire(barrier, drain, 1.0, 1);
        b.wire(barrier, transfer, 1.0, 2);
        b.wire(drain, transfer, -1.0, 1);

        let mut nodes: Vec<NodeIds> = Vec::with_capacity(n);
        for j in 0..n {
            let initial = if j == start as usize { w - g } else { -g };
            let buffer = b.add(
                Some(j),
                NeuronSpec::deterministic(Role::Buffer, 1.0, subtract).with_initial(initial),
            );
            let counter = b.add(
                Some(j),
                NeuronSpec::deterministic(Role::Counter, 1.0, subtract),
            );
            let detector = b.add(
                Some(j),
                NeuronSpec::deterministic(Role::CompletionDetector, 1.0, zero),
            );
            let group = (tile * n + j) as u32;
            let layout = gate_layout(j, n, &moves);
            let gates: Vec<u32> = layout
                .iter()
                .map(|&(direction, p)| {
                    let mut s =
                        NeuronSpec::deterministic(Role::ProbabilityGate { direction }, 1.0, zero);
                    s.stochastic_p = Some(p);
                    s.draw_group = Some(group);
                    s.precision_bits = bits;
                    b.add(Some(j), s)
                })
                .collect();
            let outputs: Vec<(Direction, u32)> = layout
                .iter()
                .map(|&(direction, _)| {
                    let o = b.add(
                        Some(j),
                        NeuronSpec::deterministic(Role::OutputGate { direction }, 1.0, zero),
                    );
                    (direction, o)
                })
                .collect();
            let tally = b.add(Some(j), NeuronSpec::integrator(Role::Tally));
            b.wire(buffer, counter, 1.0, 1);
            b.watch(buffer, detector);
            b.watch(counter, detector);
            for (&p, &(_, o)) in gates.iter().zip(&outputs) {
                b.wire(counter, p, 1.0, 1);
                b.wire(p, o, 1.0, 1);
            }
            nodes.push(NodeIds {
                buffer,
                counter,
                detector,
                tally: Some(tally),
                outputs,
            });
        }

        let sink = match config.absorb_policy {
            AbsorbPolicy::Remove => {
                let z = b.add(Some(n), NeuronSpec::integrator(Role::Sink));
                (z, None)
            }
            AbsorbPolicy::Accumulate => {
                let bz = b.add(
                    Some(n),
                    NeuronSpec::deterministic(Role::Sink, 1.0, subtract).with_initial(-g),
                );
                let cz = b.add(
                    Some(n),
                    NeuronSpec::deterministic(Role::Counter, 1.0, subtract),
                );
                let dz = b.add(
                    Some(n),
                    NeuronSpec::deterministic(Role::CompletionDetector, 1.0, zero),
                );
                b.wire(bz, cz, 1.0, 1);
                b.wire(cz, bz, 1.0, 1);
                b.watch(bz, dz);
                b.watch(cz, dz);
                (
                    bz,
                    Some(NodeIds {
                        buffer: bz,
                        counter: cz,
                        detector: dz,
                        tally: None,
                        outputs: Vec::new(),
                    }),
                )
            }
        };

        for j in 0..n {
            for &(direction, o) in &nodes[j].outputs {
                let target = match direction {
                    Direction::Left => Some(j - 1),
                    Direction::Right => Some(j + 1),
                    Direction::Stay => Some(j),
                    Direction::Absorb => None,
                };
                match target {
                    Some(t) => {
                        b.wire(o, nodes[t].buffer, 1.0, 1);
                        b.wire(o, nodes[t].tally.expect("mesh nodes have tallies"), 1.0, 1);
                    }
                    None => b.wire(o, sink.0, 1.0, 1),
                }
            }
        }
        for ids in nodes.iter().chain(sink.1.iter()) {
            b.wire(ids.detector, barrier, 1.0, 1);
            b.wire(drain, ids.counter, g, 1);
            b.wire(drain, ids.buffer, -g, 1);
            b.wire(drain, ids.detector, 1.0, 2);
            b.wire(transfer, ids.buffer, g, 1);
            b.wire(transfer, ids.counter, -g, 1);
            b.wire(transfer, ids.detector, 1.0, 2);
        }
    }

    let mut network = SpikingNetwork {
        neurons,
        placements,
        synapses,
        meta: NetworkMeta {
            problem: *spec,
            walkers_per_tile: config.walkers_per_tile,
            tile_starts: starts,
            absorb_policy: config.absorb_policy,
            precision: config.precision,
            moves,
        },
    };
    network.sort_synapses();
    debug_assert_eq!(network.neurons.len(), total);
    Ok(network)
}
