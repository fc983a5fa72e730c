use std::path::{Path, PathBuf};

use clap::Args;
use heatwalk::mcwalk::default_max_steps;
use heatwalk::snn::{quantization_bias_preset, Rounding, StartNodes};
use heatwalk::{AbsorbPolicy, Moves, NetworkConfig, PrecisionConfig, ProblemSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Options shared by every subcommand. Any of them may also come from a
/// JSON file given with `--config`; flags win over the file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    /// Wire length ℓ.
    #[arg(long)]
    pub length: Option<f64>,
    /// Uniform forcing F.
    #[arg(long)]
    pub flux: Option<f64>,
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Largest tolerated probability of jumping more than one node.
    #[arg(long)]
    pub threshold_c: Option<f64>,
    /// Walkers per start node.
    #[arg(long)]
    pub walkers: Option<u64>,
    /// Tiles per start node; walkers are split evenly across them.
    #[arg(long)]
    pub tiles: Option<u32>,
    #[arg(long)]
    pub neural_steps: Option<u64>,
    /// Step budget per walker for direct runs.
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gate probability resolution in bits; 0 keeps full precision.
    #[arg(long)]
    pub precision_bits: Option<u32>,
    /// nearest, down or up.
    #[arg(long)]
    pub rounding: Option<String>,
    /// remove or accumulate.
    #[arg(long)]
    pub absorb_policy: Option<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `biased`: fixed left/right probabilities 0.0374/0.0368.
    #[arg(long)]
    pub preset: Option<String>,
    /// Release walkers from this node only.
    #[arg(long)]
    pub start: Option<usize>,
    /// JSON file with any of the options above.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Overrides {
    fn layered_over(self, base: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: self.$f.or(base.$f),)* config: None } };
        }
        pick!(
            length,
            flux,
            dx,
            dt,
            threshold_c,
            walkers,
            tiles,
            neural_steps,
            max_steps,
            runs,
            seed,
            precision_bits,
            rounding,
            absorb_policy,
            workers,
            out,
            preset,
            start
        )
    }

    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let merged = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                let file: Overrides = serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("invalid config {}: {e}", path.display()))
                })?;
                self.layered_over(file)
            }
            None => self,
        };
        RunConfig::from_overrides(merged)
    }
}

/// The fully resolved configuration, echoed into every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub length: f64,
    pub flux: f64,
    pub dx: f64,
    pub dt: f64,
    pub threshold_c: f64,
    pub walkers: u64,
    pub tiles: u32,
    pub neural_steps: u64,
    pub max_steps: u64,
    pub runs: u32,
    pub seed: u64,
    #[serde(skip)]
    pub seed_given: bool,
    pub precision_bits: u32,
    pub rounding: Rounding,
    pub absorb_policy: AbsorbPolicy,
    pub workers: Option<usize>,
    pub preset: Option<String>,
    pub start: Option<usize>,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub problem: ProblemSpec,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    fn from_overrides(o: Overrides) -> Result<Self, CliError> {
        let length = o.length.unwrap_or(2.0);
        let flux = o.flux.unwrap_or(3.0);
        let dx = o.dx.unwrap_or(0.05);
        let dt = o.dt.unwrap_or(1e-4);
        let threshold_c = o.threshold_c.unwrap_or(0.05);
        let problem =
            ProblemSpec::with_threshold(length, flux, dx, dt, threshold_c).map_err(config_err)?;
        let rounding: Rounding = o
            .rounding
            .as_deref()
            .unwrap_or("nearest")
            .parse()
            .map_err(config_err)?;
        let absorb_policy: AbsorbPolicy = o
            .absorb_policy
            .as_deref()
            .unwrap_or("remove")
            .parse()
            .map_err(config_err)?;
        if let Some(p) = o.preset.as_deref() {
            if p != "biased" {
                return Err(CliError::Config(format!(
                    "unknown preset '{p}', expected biased"
                )));
            }
        }
        let walkers = o.walkers.unwrap_or(10_000);
        let tiles = o.tiles.unwrap_or(100);
        let runs = o.runs.unwrap_or(1);
        if walkers == 0 || tiles == 0 || runs == 0 {
            return Err(CliError::Config(
                "walkers, tiles and runs must be positive".into(),
            ));
        }
        if let Some(s) = o.start {
            if s >= problem.n_nodes() {
                return Err(CliError::Config(format!(
                    "start node {s} outside mesh of {} nodes",
                    problem.n_nodes()
                )));
            }
        }
        if o.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        Ok(RunConfig {
            length,
            flux,
            dx,
            dt,
            threshold_c,
            walkers,
            tiles,
            neural_steps: o.neural_steps.unwrap_or(1_000_000),
            max_steps: o.max_steps.unwrap_or_else(|| default_max_steps(&problem)),
            runs,
            seed: o.seed.unwrap_or(0),
            seed_given: o.seed.is_some(),
            precision_bits: o.precision_bits.unwrap_or(8),
            rounding,
            absorb_policy,
            workers: o.workers,
            preset: o.preset,
            start: o.start,
            out: o.out.unwrap_or_else(|| PathBuf::from("out")),
            problem,
        })
    }

    pub fn moves(&self) -> Option<Moves> {
        self.preset.as_ref().map(|_| quantization_bias_preset())
    }

    pub fn precision(&self) -> PrecisionConfig {
        PrecisionConfig {
            bits: (self.precision_bits > 0).then_some(self.precision_bits),
            rounding: self.rounding,
        }
    }

    pub fn network(&self) -> Result<NetworkConfig, CliError> {
        if !self.walkers.is_multiple_of(self.tiles as u64) {
            return Err(CliError::Config(format!(
                "{} walkers do not split evenly across {} tiles",
                self.walkers, self.tiles
            )));
        }
        let per_tile = u32::try_from(self.walkers / self.tiles as u64)
            .map_err(|_| CliError::Config("too many walkers per tile".into()))?;
        Ok(NetworkConfig {
            walkers_per_tile: per_tile,
            tiles: self.tiles,
            start: self.start.map_or(StartNodes::All, StartNodes::Node),
            precision: self.precision(),
            absorb_policy: self.absorb_policy,
            moves: self.moves(),
        })
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// One `# config: {...}` line for CSV headers.
    pub fn csv_comment(&self) -> String {
        format!(
            "# config: {}\n",
            serde_json::to_string(self).expect("config serializes")
        )
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn ensure_out(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}
