use serde::{Deserialize, Serialize};

use super::{AbsorbPolicy, SpikingNetwork};
use crate::error::{Error, Result};
use crate::mcwalk::{estimate_solution, MeshSolution, NodeCounts};
use crate::problem::ProblemSpec;

/// Exact running sums of per-timestep neural costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepCostStats {
    pub count: u64,
    pub sum: u64,
    pub sum_sq: u128,
}

impl StepCostStats {
    pub fn add(&mut self, cost: u64, times: u64) {
        self.count += times;
        self.sum += cost * times;
        self.sum_sq += (cost as u128) * (cost as u128) * times as u128;
    }

    pub fn merge(&mut self, other: &StepCostStats) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }

    /// Population standard deviation.
    pub fn std(&self) -> Option<f64> {
        (self.count > 0).then(|| {
            let n = self.count as u128;
            let num = n * self.sum_sq - (self.sum as u128) * (self.sum as u128);
            (num as f64).sqrt() / self.count as f64
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDetail {
    /// Neural timesteps between the transfer starts bracketing the step.
    pub neural_cost: u64,
    /// Largest number of walkers held by one node (or a draining sink) at
    /// the start of the step.
    pub max_occupancy: u64,
}

pub(crate) struct TileOutcome {
    pub tally: Vec<u64>,
    pub absorbed: Vec<u64>,
    pub completed: u64,
    pub steps_used: u64,
    pub costs: StepCostStats,
    pub details: Vec<StepDetail>,
    pub occupancy: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub n_nodes: usize,
    pub walkers_per_tile: u32,
    pub absorb_policy: AbsorbPolicy,
    pub seed: u64,
    pub tile_starts: Vec<u32>,
    /// Tallies summed per start node.
    pub counts: NodeCounts,
    /// Final tally potentials, one row per tile.
    pub tallies: Vec<Vec<u64>>,
    /// Neurons firing at each neural timestep, summed over tiles.
    pub spikes_in_flight: Vec<u32>,
    pub neural_timesteps_used: u64,
    /// Smallest number of simulation timesteps completed by any tile.
    pub sim_timesteps_completed: u64,
    pub sim_timesteps_per_tile: Vec<u64>,
    /// For each tile, the simulation timestep on which each absorbed walker
    /// left the mesh.
    pub absorption_sim_timesteps: Vec<Vec<u64>>,
    pub unabsorbed: u64,
    pub step_costs: StepCostStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_details: Option<Vec<Vec<StepDetail>>>,
    /// Walkers per node, plus the sink as the last entry, for each tile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<Vec<Vec<u64>>>,
}

impl SimulationRecord {
    pub fn tiles(&self) -> usize {
        self.tile_starts.len()
    }

    pub fn total_walkers(&self) -> u64 {
        self.tiles() as u64 * self.walkers_per_tile as u64
    }

    /// Columns: `neural_t,count`.
    pub fn spikes_csv(&self) -> String {
        let mut out = String::with_capacity(12 * self.spikes_in_flight.len() + 16);
        out.push_str("neural_t,count\n");
        for (t, c) in self.spikes_in_flight.iter().enumerate() {
            out.push_str(&format!("{t},{c}\n"));
        }
        out
    }
}

pub(crate) fn assemble(
    network: &SpikingNetwork,
    seed: u64,
    spikes_in_flight: Vec<u32>,
    outcomes: Vec<TileOutcome>,
) -> Result<SimulationRecord> {
    let n = network.n_nodes();
    let starts = network.meta.tile_starts.clone();
    let w = network.meta.walkers_per_tile as u64;
    let mut counts = NodeCounts::zeros(n);
    let mut step_costs = StepCostStats::default();
    let mut unabsorbed = 0;
    let mut tallies = Vec::with_capacity(outcomes.len());
    let mut per_tile = Vec::with_capacity(outcomes.len());
    let mut absorption = Vec::with_capacity(outcomes.len());
    let mut details = Vec::new();
    let mut occupancy = Vec::new();
    let want_details = outcomes.iter().any(|o| !o.details.is_empty());
    let want_occupancy = outcomes.iter().any(|o| o.occupancy.is_some());
    let mut neural_used = 0;
    for (o, &s) in outcomes.into_iter().zip(&starts) {
        counts.add_row(s as usize, w, &o.tally)?;
        step_costs.merge(&o.costs);
        unabsorbed += w
            .checked_sub(o.absorbed.len() as u64)
            .ok_or_else(|| Error::Numeric("tile absorbed more walkers than it held".into()))?;
        per_tile.push(o.completed);
        neural_used = neural_used.max(o.steps_used);
        tallies.push(o.tally);
        absorption.push(o.absorbed);
        if want_details {
            details.push(o.details);
        }
        if want_occupancy {
            occupancy.push(o.occupancy.unwrap_or_default());
        }
    }
    counts.max_steps_used = per_tile.iter().copied().max().unwrap_or(0);
    Ok(SimulationRecord {
        n_nodes: n,
        walkers_per_tile: network.meta.walkers_per_tile,
        absorb_policy: network.meta.absorb_policy,
        seed,
        tile_starts: starts,
        counts,
        tallies,
        spikes_in_flight,
        neural_timesteps_used: neural_used,
        sim_timesteps_completed: per_tile.iter().copied().min().unwrap_or(0),
        sim_timesteps_per_tile: per_tile,
        absorption_sim_timesteps: absorption,
        unabsorbed,
        step_costs,
        step_details: want_details.then_some(details),
        occupancy: want_occupancy.then_some(occupancy),
    })
}

/// Estimates the solution from the tallies; every start node must have
/// been covered by at least one tile.
pub fn decode_counts(record: &SimulationRecord, spec: &ProblemSpec) -> Result<MeshSolution> {
    if record.n_nodes != spec.n_nodes() {
        return Err(Error::contract(format!(
            "record covers {} nodes but the mesh has {}",
            record.n_nodes,
            spec.n_nodes()
        )));
    }
    let mut solution = estimate_solution(&record.counts, spec)?;
    let total = record.total_walkers();
    if total > 0 {
        solution.unabsorbed_fraction = record.unabsorbed as f64 / total as f64;
    }
    Ok(solution)
}
