//! Portable JSON netlists (`netlist-v1`) for generated networks.
//!
//! Field order is fixed by the structs below, neurons are listed by id and
//! synapses by `(source, target, delay)`, so exporting the same network
//! always yields the same bytes. See `docs/netlist-v1.md` for the schema.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcwalk::Moves;
use crate::problem::ProblemSpec;
use crate::snn::{
    neurons_per_tile, AbsorbPolicy, NetworkMeta, NeuronSpec, Placement, PrecisionConfig, ResetMode,
    Role, SpikingNetwork, SynapseSpec,
};

pub const SCHEMA: &str = "netlist-v1";
pub const FORMAT_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistMetadata {
    pub problem: ProblemSpec,
    pub n_nodes: usize,
    pub tiles: usize,
    pub walkers_per_tile: u32,
    pub tile_starts: Vec<u32>,
    pub absorb_policy: AbsorbPolicy,
    pub precision: PrecisionConfig,
    pub moves: Moves,
    pub neurons_per_tile: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronEntry {
    pub id: u32,
    pub tile: u32,
    pub node: Option<u32>,
    pub role: Role,
    pub threshold: Option<f64>,
    pub leak: f64,
    pub reset: ResetMode,
    pub stochastic_p: Option<f64>,
    pub draw_group: Option<u32>,
    pub precision_bits: Option<u32>,
    pub initial_potential: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistDocument {
    pub schema: String,
    pub format_version: String,
    pub metadata: NetlistMetadata,
    pub neurons: Vec<NeuronEntry>,
    pub synapses: Vec<SynapseSpec>,
}

impl NetlistDocument {
    pub fn from_network(network: &SpikingNetwork, seed: Option<u64>) -> Self {
        let mut sorted = network.clone();
        sorted.sort_synapses();
        let meta = &network.meta;
        let neurons = network
            .neurons
            .iter()
            .zip(&network.placements)
            .enumerate()
            .map(|(id, (n, p))| NeuronEntry {
                id: id as u32,
                tile: p.tile,
                node: p.node,
                role: n.role,
                threshold: n.threshold,
                leak: n.leak,
                reset: n.reset,
                stochastic_p: n.stochastic_p,
                draw_group: n.draw_group,
                precision_bits: n.precision_bits,
                initial_potential: n.initial_potential,
            })
            .collect();
        NetlistDocument {
            schema: SCHEMA.into(),
            format_version: FORMAT_VERSION.into(),
            metadata: NetlistMetadata {
                problem: meta.problem,
                n_nodes: meta.n_nodes(),
                tiles: meta.tiles(),
                walkers_per_tile: meta.walkers_per_tile,
                tile_starts: meta.tile_starts.clone(),
                absorb_policy: meta.absorb_policy,
                precision: meta.precision,
                moves: meta.moves,
                neurons_per_tile: network.tile_size(),
                seed,
            },
            neurons,
            synapses: sorted.synapses,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("netlists always serialize");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        match value.get("schema").and_then(|v| v.as_str()) {
            Some(SCHEMA) => {}
            Some(other) => {
                return Err(Error::parse(
                    "schema",
                    format!("unsupported schema '{other}'"),
                ))
            }
            None => return Err(Error::parse("schema", "missing schema field")),
        }
        match value.get("format_version").and_then(|v| v.as_str()) {
            Some(v) if v.split('.').next() == Some("1") && v.split('.').count() == 3 => {}
            Some(v) => {
                return Err(Error::parse(
                    "format_version",
                    format!("unsupported version '{v}'"),
                ))
            }
            None => {
                return Err(Error::parse(
                    "format_version",
                    "missing format_version field",
                ))
            }
        }
        serde_json::from_value(value).map_err(|e| Error::parse("document", e.to_string()))
    }

    /// Checks ids and endpoints, then rebuilds and validates the network.
    pub fn into_network(self) -> Result<SpikingNetwork> {
        let count = self.neurons.len();
        for (k, n) in self.neurons.iter().enumerate() {
            if n.id as usize != k {
                return Err(Error::parse(
                    format!("neurons[{k}].id"),
                    format!("expected id {k}, found {}", n.id),
                ));
            }
        }
        for (k, s) in self.synapses.iter().enumerate() {
            for (field, id) in [("source", s.source), ("target", s.target)] {
                if id as usize >= count {
                    return Err(Error::parse(
                        format!("synapses[{k}].{field}"),
                        format!("neuron {id} is not declared"),
                    ));
                }
            }
        }
        let m = &self.metadata;
        if m.n_nodes != m.problem.n_nodes() {
            return Err(Error::parse(
                "metadata.n_nodes",
                "does not match the problem mesh",
            ));
        }
        if m.tiles != m.tile_starts.len() || count != m.tiles * m.neurons_per_tile {
            return Err(Error::parse(
                "metadata.tiles",
                "tile count, tile starts and neuron count disagree",
            ));
        }
        if m.neurons_per_tile != neurons_per_tile(m.n_nodes, m.absorb_policy) {
            return Err(Error::parse(
                "metadata.neurons_per_tile",
                "does not match the sub-circuit layout",
            ));
        }
        let (neurons, placements) = self
            .neurons
            .into_iter()
            .map(|n| {
                (
                    NeuronSpec {
                        threshold: n.threshold,
                        leak: n.leak,
                        reset: n.reset,
                        stochastic_p: n.stochastic_p,
                        draw_group: n.draw_group,
                        precision_bits: n.precision_bits,
                        initial_potential: n.initial_potential,
                        role: n.role,
                    },
                    Placement {
                        tile: n.tile,
                        node: n.node,
                        role: n.role,
                    },
                )
            })
            .unzip();
        let mut network = SpikingNetwork {
            neurons,
            placements,
            synapses: self.synapses,
            meta: NetworkMeta {
                problem: m.problem,
                walkers_per_tile: m.walkers_per_tile,
                tile_starts: m.tile_starts.clone(),
                absorb_policy: m.absorb_policy,
                precision: m.precision,
                moves: m.moves,
            },
        };
        network.sort_synapses();
        network
            .validate()
            .map_err(|e| Error::parse("network", e.to_string()))?;
        Ok(network)
    }
}

pub fn export(network: &SpikingNetwork, seed: Option<u64>) -> String {
    NetlistDocument::from_network(network, seed).to_json()
}

pub fn import(text: &str) -> Result<SpikingNetwork> {
    NetlistDocument::parse(text)?.into_network()
}
