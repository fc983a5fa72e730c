use serde::{Deserialize, Serialize};

/// What happens to a neuron's potential after it fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResetMode {
    /// Potential is set to `potential`.
    Absolute { potential: f64 },
    /// Threshold is subtracted, so a neuron holding `k` units fires on `k`
    /// consecutive steps.
    Subtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Stay,
    Absorb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorPart {
    /// Fires once every node has reported completion of the current phase.
    Barrier,
    /// Two-state latch; fires on every second barrier and opens counters.
    DrainStart,
    /// Fires on the other barriers and opens buffers; each firing after the
    /// first marks a completed simulation timestep.
    TransferStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Role {
    Counter,
    Buffer,
    /// Fires once when its node's counter (or buffer) has finished draining.
    CompletionDetector,
    ProbabilityGate {
        direction: Direction,
    },
    OutputGate {
        direction: Direction,
    },
    Supervisor {
        part: SupervisorPart,
    },
    /// No-decay accumulator of visits to a node.
    Tally,
    /// Terminal store for removed walkers.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSpec {
    /// `None` for pure integrators that never fire.
    pub threshold: Option<f64>,
    /// Decay toward zero per neural timestep.
    pub leak: f64,
    pub reset: ResetMode,
    /// Probability of transmitting once above threshold.
    pub stochastic_p: Option<f64>,
    /// Neurons sharing a group draw one uniform number between them and at
    /// most one fires.
    pub draw_group: Option<u32>,
    pub precision_bits: Option<u32>,
    pub initial_potential: f64,
    pub role: Role,
}

impl NeuronSpec {
    pub(crate) fn deterministic(role: Role, threshold: f64, reset: ResetMode) -> Self {
        NeuronSpec {
            threshold: Some(threshold),
            leak: 0.0,
            reset,
            stochastic_p: None,
            draw_group: None,
            precision_bits: None,
            initial_potential: 0.0,
            role,
        }
    }

    pub(crate) fn integrator(role: Role) -> Self {
        NeuronSpec {
            threshold: None,
            leak: 0.0,
            reset: ResetMode::Absolute { potential: 0.0 },
            stochastic_p: None,
            draw_group: None,
            precision_bits: None,
            initial_potential: 0.0,
            role,
        }
    }

    pub(crate) fn with_initial(mut self, v: f64) -> Self {
        self.initial_potential = v;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseSpec {
    pub source: u32,
    pub target: u32,
    pub weight: f64,
    /// Neural timesteps until delivery, at least 1.
    pub delay: u32,
}

/// Where a neuron sits: its tile, its mesh node (the absorbing index `N` for
/// the sink), and its role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub tile: u32,
    pub node: Option<u32>,
    pub role: Role,
}
