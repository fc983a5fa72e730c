//! Benchmark metrics over simulation records.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::mcwalk::MeshSolution;
use crate::problem::{analytic_solution, ProblemSpec};
use crate::rng;
use crate::snn::{
    build_network, decode_counts, run_with, NetworkConfig, RunOptions, SimulationRecord,
};

/// Neural timesteps per simulation timestep reported for the TrueNorth run.
pub const TRUENORTH_RATIO_MEAN: f64 = 31.8;
pub const TRUENORTH_RATIO_STD: f64 = 0.166;

/// Trailing moving average; the first `window - 1` entries average the
/// available prefix.
pub fn moving_average<T: Copy + Into<f64>>(trace: &[T], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::domain("window must be at least 1"));
    }
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for (i, &v) in trace.iter().enumerate() {
        sum += v.into();
        if i >= window {
            sum -= trace[i - window].into();
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rmse: f64,
    pub max_abs: f64,
    /// Mean of `estimate - analytic`.
    pub signed_bias: f64,
    pub deviations: Vec<f64>,
}

/// Compares the shifted estimate with the closed form at the midpoints.
pub fn error_report(solution: &MeshSolution, spec: &ProblemSpec) -> Result<ErrorReport> {
    let n = spec.n_nodes();
    if solution.u.len() != n || solution.x.len() != n {
        return Err(Error::contract(format!(
            "solution has {} nodes but the mesh has {n}",
            solution.u.len()
        )));
    }
    let deviations = solution
        .x
        .iter()
        .zip(&solution.u)
        .map(|(&x, &u)| Ok(u - analytic_solution(spec, x)?))
        .collect::<Result<Vec<f64>>>()?;
    let rmse = (deviations.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
    let max_abs = deviations.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let signed_bias = deviations.iter().sum::<f64>() / n as f64;
    Ok(ErrorReport {
        rmse,
        max_abs,
        signed_bias,
        deviations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub mean: f64,
    pub std: f64,
    pub sim_timesteps: u64,
    pub reference_mean: f64,
    pub reference_std: f64,
}

/// Mean and population standard deviation of the neural cost of each
/// completed simulation timestep, pooled over tiles.
pub fn timestep_ratio(record: &SimulationRecord) -> Result<RatioStats> {
    let s = &record.step_costs;
    match (s.mean(), s.std()) {
        (Some(mean), Some(std)) => Ok(RatioStats {
            mean,
            std,
            sim_timesteps: s.count,
            reference_mean: TRUENORTH_RATIO_MEAN,
            reference_std: TRUENORTH_RATIO_STD,
        }),
        _ => Err(Error::domain("no simulation timestep was completed")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionStats {
    pub start_node: usize,
    pub walkers: u64,
    pub absorbed: u64,
    pub mean: Option<f64>,
    pub max: Option<u64>,
    /// Timestep by which every walker had left; `None` while any remain.
    pub full_absorption: Option<u64>,
}

pub fn absorption_stats(record: &SimulationRecord) -> Vec<AbsorptionStats> {
    let mut per: Vec<(u64, u64, u64, Option<u64>)> = vec![(0, 0, 0, None); record.n_nodes];
    for (times, &s) in record
        .absorption_sim_timesteps
        .iter()
        .zip(&record.tile_starts)
    {
        let e = &mut per[s as usize];
        e.0 += record.walkers_per_tile as u64;
        e.1 += times.len() as u64;
        e.2 += times.iter().sum::<u64>();
        if let Some(&m) = times.iter().max() {
            e.3 = Some(e.3.map_or(m, |x| x.max(m)));
        }
    }
    per.into_iter()
        .enumerate()
        .filter(|(_, e)| e.0 > 0)
        .map(
            |(start_node, (walkers, absorbed, sum, max))| AbsorptionStats {
                start_node,
                walkers,
                absorbed,
                mean: (absorbed > 0).then(|| sum as f64 / absorbed as f64),
                max,
                full_absorption: if absorbed == walkers {
                    max.or(Some(0))
                } else {
                    None
                },
            },
        )
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WallClock {
    pub build: f64,
    pub run: f64,
    pub decode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Error metrics need tiles on every start node.
    pub error_rmse: Option<f64>,
    pub error_max_abs: Option<f64>,
    pub signed_bias: Option<f64>,
    pub neural_timesteps: u64,
    pub sim_timesteps_completed: u64,
    pub spikes_in_flight_ma: Vec<f64>,
    pub ratio_stats: Option<RatioStats>,
    pub absorption_stats: Vec<AbsorptionStats>,
    /// Kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_clock: WallClock,
}

pub const MOVING_AVERAGE_WINDOW: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub problem: ProblemSpec,
    pub network: NetworkConfig,
    pub neural_timesteps: u64,
    pub seed: u64,
}

/// Builds, runs and decodes one configuration.
pub fn bench_run(config: &BenchConfig) -> Result<(BenchReport, SimulationRecord)> {
    let t0 = Instant::now();
    let network = build_network(&config.problem, &config.network)?;
    let t1 = Instant::now();
    let record = run_with(
        &network,
        &RunOptions::new(config.neural_timesteps, config.seed),
    )?;
    let t2 = Instant::now();
    let errors = decode_counts(&record, &config.problem)
        .ok()
        .map(|s| error_report(&s, &config.problem))
        .transpose()?;
    let report = BenchReport {
        error_rmse: errors.as_ref().map(|e| e.rmse),
        error_max_abs: errors.as_ref().map(|e| e.max_abs),
        signed_bias: errors.as_ref().map(|e| e.signed_bias),
        neural_timesteps: record.neural_timesteps_used,
        sim_timesteps_completed: record.sim_timesteps_completed,
        spikes_in_flight_ma: moving_average(&record.spikes_in_flight, MOVING_AVERAGE_WINDOW)?,
        ratio_stats: timestep_ratio(&record).ok(),
        absorption_stats: absorption_stats(&record),
        wall_clock: WallClock {
            build: (t1 - t0).as_secs_f64(),
            run: (t2 - t1).as_secs_f64(),
            decode: t2.elapsed().as_secs_f64(),
        },
    };
    Ok((report, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tiles,
    Walkers,
    NeuralSteps,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tiles" => Ok(SweepAxis::Tiles),
            "walkers" => Ok(SweepAxis::Walkers),
            "neural_steps" => Ok(SweepAxis::NeuralSteps),
            _ => Err(Error::domain(format!(
                "unknown sweep axis '{s}', expected tiles, walkers or neural-steps"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: u64,
    pub seed: u64,
    pub report: BenchReport,
}

/// One run per value; value `k` uses seed `derive_seed(base.seed, k)`.
pub fn scaling_sweep(axis: SweepAxis, values: &[u64], base: &BenchConfig) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::domain("sweep needs at least one value"));
    }
    values
        .iter()
        .enumerate()
        .map(|(k, &value)| {
            let mut config = base.clone();
            let narrow = || {
                u32::try_from(value)
                    .map_err(|_| Error::domain(format!("sweep value {value} is too large")))
            };
            match axis {
                SweepAxis::Tiles => config.network.tiles = narrow()?,
                SweepAxis::Walkers => config.network.walkers_per_tile = narrow()?,
                SweepAxis::NeuralSteps => config.neural_timesteps = value,
            }
            config.seed = rng::derive_seed(base.seed, k as u64);
            let (report, _) = bench_run(&config)?;
            Ok(SweepRow {
                value,
                seed: config.seed,
                report,
            })
        })
        .collect()
}

/// Columns: `value,seed,neural_timesteps,sim_timesteps,ratio_mean,ratio_std,rmse,max_abs,signed_bias`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(
        "value,seed,neural_timesteps,sim_timesteps,ratio_mean,ratio_std,rmse,max_abs,signed_bias\n",
    );
    for r in rows {
        let rep = &r.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.value,
            r.seed,
            rep.neural_timesteps,
            rep.sim_timesteps_completed,
            opt(rep.ratio_stats.as_ref().map(|s| s.mean)),
            opt(rep.ratio_stats.as_ref().map(|s| s.std)),
            opt(rep.error_rmse),
            opt(rep.error_max_abs),
            opt(rep.signed_bias),
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

/// Pearson chi-square test that the rows of a contingency table share one
/// distribution. Columns that are zero in every row are dropped.
pub fn chi_square_homogeneity(table: &[Vec<u64>]) -> Result<ChiSquareTest> {
    let rows = table.len();
    let cols = table.first().map_or(0, |r| r.len());
    if rows < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(Error::domain("need at least two rows of equal length"));
    }
    let col_tot: Vec<u64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let keep: Vec<usize> = (0..cols).filter(|&j| col_tot[j] > 0).collect();
    let row_tot: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let total: u64 = row_tot.iter().sum();
    if keep.len() < 2 || row_tot.contains(&0) {
        return Err(Error::domain(
            "table needs two non-empty columns and no empty rows",
        ));
    }
    let mut statistic = 0.0;
    for (i, r) in table.iter().enumerate() {
        for &j in &keep {
            let e = row_tot[i] as f64 * col_tot[j] as f64 / total as f64;
            let d = r[j] as f64 - e;
            statistic += d * d / e;
        }
    }
    let dof = ((rows - 1) * (keep.len() - 1)) as u64;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain(
            "need two equally long samples of length at least 2",
        ));
    }
    pearson(&ranks(x), &ranks(y)).ok_or_else(|| Error::domain("a sample is constant"))
}

/// Least-squares slope of `ys` against their index.
pub fn linear_slope(ys: &[f64]) -> Result<f64> {
    if ys.len() < 2 {
        return Err(Error::domain("need at least two points"));
    }
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}
