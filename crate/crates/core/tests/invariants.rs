//! Statistical properties of the direct walk and of tiled spiking runs.

use heatwalk::bench::{chi_square_homogeneity, spearman, timestep_ratio};
use heatwalk::mcwalk::{self, exact_expected_counts_for, run_walkers, SolveConfig};
use heatwalk::rng::derive_seed;
use heatwalk::snn::{run, run_with, RunOptions, StartNodes};
use heatwalk::{build_network, AbsorbPolicy, Moves, NetworkConfig, ProblemSpec};

fn scaled(n: usize) -> ProblemSpec {
    ProblemSpec::scaled(2.0, 3.0, n).unwrap()
}

#[test]
fn mean_estimate_is_non_decreasing_in_x() {
    let spec = scaled(10);
    let mut cfg = SolveConfig::new(&spec, 10_000, 41);
    cfg.runs = 10;
    let result = mcwalk::solve(&spec, &cfg).unwrap();
    let runs = result.runs.len() as f64;
    let se: Vec<f64> = (0..spec.n_nodes())
        .map(|j| {
            let m = result.mean.u[j];
            let var = result
                .runs
                .iter()
                .map(|r| (r.solution.u[j] - m).powi(2))
                .sum::<f64>()
                / (runs - 1.0);
            (var / runs).sqrt()
        })
        .collect();
    for j in 0..spec.n_nodes() - 1 {
        let step = result.mean.u[j + 1] - result.mean.u[j];
        let slack = 2.0 * (se[j].powi(2) + se[j + 1].powi(2)).sqrt();
        assert!(
            step >= -slack,
            "u drops by {step} between nodes {j} and {} (slack {slack})",
            j + 1
        );
    }
}

#[test]
fn absorption_time_matches_the_chain() {
    let spec = scaled(10);
    let moves: Moves = spec.transition_probabilities().into();
    let exact = exact_expected_counts_for(spec.n_nodes(), &moves).unwrap();
    let x = spec.mesh().positions;
    let cap = 50 * mcwalk::default_max_steps(&spec);
    for i in 0..spec.n_nodes() {
        let walk = run_walkers(&spec, &moves, i, 20_000, 7, cap).unwrap();
        assert_eq!(walk.unabsorbed, 0);
        let t: Vec<f64> = walk.absorption_steps.iter().map(|&s| s as f64).collect();
        let m = t.len() as f64;
        let mean = t.iter().sum::<f64>() / m;
        let sd = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let chain = exact.row(i).iter().sum::<f64>() + 1.0;
        assert!(
            (mean - chain).abs() <= 3.0 * sd / m.sqrt(),
            "node {i}: {mean} vs {chain}"
        );

        // The chain diffuses slightly slower than the continuum and sees the boundary half a cell late.
        let continuum = (spec.length().powi(2) - x[i].powi(2)) / 2.0 / spec.dt();
        assert!(chain > continuum, "node {i}: {chain} vs {continuum}");
        if i == 0 {
            assert!(chain / continuum - 1.0 < 0.05, "{chain} vs {continuum}");
        }
    }
}

#[test]
fn tiling_preserves_walker_distribution_and_cuts_step_cost() {
    let spec = scaled(5);
    let total = 1200u32;
    let mut table = Vec::new();
    let mut ratios = Vec::new();
    for tiles in [1u32, 4, 12] {
        let mut cfg = NetworkConfig::new(total / tiles, tiles);
        cfg.start = StartNodes::Node(0);
        let net = build_network(&spec, &cfg).unwrap();
        let mut opts = RunOptions::new(2_000_000, derive_seed(5, tiles as u64));
        opts.occupancy_snapshot_at = Some(100);
        opts.stop_after_sim_steps = Some(100);
        let record = run_with(&net, &opts).unwrap();
        let occupancy = record.occupancy.as_ref().unwrap();
        let mut row = vec![0u64; spec.n_nodes() + 1];
        for tile in occupancy {
            for (acc, v) in row.iter_mut().zip(tile) {
                *acc += v;
            }
        }
        assert_eq!(row.iter().sum::<u64>(), total as u64);
        table.push(row);
        ratios.push(timestep_ratio(&record).unwrap().mean);
    }
    let test = chi_square_homogeneity(&table).unwrap();
    assert!(test.p_value > 0.01, "{table:?}: {test:?}");
    assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
}

#[test]
fn accumulating_sink_slows_starts_near_it() {
    let spec = scaled(10);
    let mut cfg = NetworkConfig::new(50, 2);
    cfg.absorb_policy = AbsorbPolicy::Accumulate;
    let record = run(&build_network(&spec, &cfg).unwrap(), 300_000, 17).unwrap();
    let n = spec.n_nodes();
    let mut completed = vec![0.0; n];
    for (&steps, &start) in record
        .sim_timesteps_per_tile
        .iter()
        .zip(&record.tile_starts)
    {
        completed[start as usize] += steps as f64;
    }
    let starts: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let rho = spearman(&starts, &completed).unwrap();
    assert!(rho < 0.0, "rho {rho}, completed {completed:?}");
}
