use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcwalk::Moves;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Ties round up.
    #[default]
    Nearest,
    OneSidedDown,
    OneSidedUp,
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Rounding::Nearest),
            "down" | "one-sided-down" => Ok(Rounding::OneSidedDown),
            "up" | "one-sided-up" => Ok(Rounding::OneSidedUp),
            _ => Err(Error::domain(format!(
                "unknown rounding '{s}', expected nearest, down or up"
            ))),
        }
    }
}

/// Resolution of stochastic parameters. `bits: None` is full double
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionConfig {
    pub bits: Option<u32>,
    pub rounding: Rounding,
}

impl Default for PrecisionConfig {
    /// 8 bits, nearest: a resolution of 1/256.
    fn default() -> Self {
        PrecisionConfig {
            bits: Some(8),
            rounding: Rounding::Nearest,
        }
    }
}

impl PrecisionConfig {
    pub fn ideal() -> Self {
        PrecisionConfig {
            bits: None,
            rounding: Rounding::Nearest,
        }
    }

    pub fn apply(&self, p: f64) -> Result<f64> {
        match self.bits {
            None => Ok(p),
            Some(bits) => quantize_probability(p, bits, self.rounding),
        }
    }

    /// Symmetric gate probabilities for a hop probability `p_go`.
    pub fn gate_moves(&self, p_go: f64) -> Result<Moves> {
        let q = self.apply(p_go)?;
        Moves::symmetric(q)
    }
}

/// Rounds `p` onto the grid `k / 2^resolution_bits`.
pub fn quantize_probability(p: f64, resolution_bits: u32, rounding: Rounding) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    if !(1..=52).contains(&resolution_bits) {
        return Err(Error::domain(format!(
            "resolution_bits must lie in 1..=52, got {resolution_bits}"
        )));
    }
    let scale = (1u64 << resolution_bits) as f64;
    let x = p * scale;
    let k = match rounding {
        Rounding::Nearest => (x + 0.5).floor(),
        Rounding::OneSidedDown => x.floor(),
        Rounding::OneSidedUp => x.ceil(),
    };
    Ok(k.clamp(0.0, scale) / scale)
}

/// Effective left/right probabilities from the one-sided hardware rounding
/// study; left exceeds right, so walkers drift toward the reflecting end.
pub fn quantization_bias_preset() -> Moves {
    Moves {
        p_left: 0.0374,
        p_right: 0.0368,
    }
}
