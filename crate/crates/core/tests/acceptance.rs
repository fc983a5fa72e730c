//! Acceptance checks at full tolerance. Each check prints one PASS/FAIL line.
//! Pass name fragments to run a subset, e.g.
//! `cargo test --test acceptance -- load policy`.

use std::time::Instant;

use heatwalk::bench::{
    error_report, linear_slope, moving_average, timestep_ratio, MOVING_AVERAGE_WINDOW,
};
use heatwalk::mcwalk::{
    self, default_max_steps, estimate_solution, exact_expected_counts_for, run_walkers, SolveConfig,
};
use heatwalk::problem::analytic_solution;
use heatwalk::rng::derive_seed;
use heatwalk::snn::{quantization_bias_preset, run};
use heatwalk::{
    build_network, decode_counts, netgen, AbsorbPolicy, Moves, NetworkConfig, NodeCounts,
    ProblemSpec, Result,
};
use statrs::distribution::{ContinuousCDF, StudentsT};

const SEED: u64 = 0x5eed_2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn reference() -> ProblemSpec {
    ProblemSpec::default()
}

fn scaled(n: usize) -> ProblemSpec {
    ProblemSpec::scaled(2.0, 3.0, n).expect("valid mesh")
}

/// Expected shifted estimate under `moves`, from the fundamental matrix.
fn expected_solution(spec: &ProblemSpec, moves: &Moves) -> Result<Vec<f64>> {
    let e = exact_expected_counts_for(spec.n_nodes(), moves)?;
    let x = spec.mesh().positions;
    let raw: Vec<f64> = (0..spec.n_nodes())
        .map(|i| {
            let w: f64 = e
                .row(i)
                .iter()
                .zip(&x)
                .map(|(c, xj)| c * (spec.length() - xj))
                .sum();
            -spec.forcing() * spec.dt() * w
        })
        .collect();
    Ok(raw.iter().map(|r| r - raw[0]).collect())
}

fn transition_probabilities() -> Result<Verdict> {
    let p = reference().transition_probabilities();
    let (dg, ds) = ((p.p_go - 0.0385).abs(), (p.p_stay - 0.9229).abs());
    verdict(
        dg <= 5e-4 && ds <= 5e-4,
        format!(
            "p_g {:.9} (off {dg:.1e}), p_s {:.9} (off {ds:.1e}), tolerance 5e-4",
            p.p_go, p.p_stay
        ),
    )
}

fn analytic_reproduction() -> Result<Verdict> {
    let spec = reference();
    let mut cfg = SolveConfig::new(&spec, 10_000, derive_seed(SEED, 2));
    cfg.runs = 10;
    let result = mcwalk::solve(&spec, &cfg)?;
    let expected = expected_solution(&spec, &spec.transition_probabilities().into())?;
    let mut worst = (0.0, 0.0, 0.0);
    for (j, (&x, &u)) in result.mean.x.iter().zip(&result.mean.u).enumerate() {
        if x < 0.5 {
            continue;
        }
        let a = analytic_solution(&spec, x)?;
        let rel = (u - a).abs() / a;
        if rel > worst.0 {
            worst = (rel, x, (expected[j] - a).abs() / a);
        }
    }
    verdict(
        worst.0 <= 0.05,
        format!(
            "N=40, M=10000, 10 runs: max relative error {:.4} at x={:.3} (limit 0.05); \
             exact chain expectation there {:.4}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn oracle_equivalence() -> Result<Verdict> {
    let walkers = 50_000u64;
    let mut worst_z = 0.0f64;
    let mut entries = 0;
    for n in [1usize, 2, 5, 10] {
        let spec = scaled(n);
        let moves: Moves = spec.transition_probabilities().into();
        let exact = exact_expected_counts_for(n, &moves)?;
        for i in 0..n {
            let walk = run_walkers(
                &spec,
                &moves,
                i,
                walkers,
                derive_seed(SEED, 30 + n as u64),
                walk_cap(&spec),
            )?;
            if walk.unabsorbed > 0 {
                return verdict(
                    false,
                    format!(
                        "N={n}: {} walkers from node {i} never absorbed",
                        walk.unabsorbed
                    ),
                );
            }
            for j in 0..n {
                let e = exact.get(i, j);
                let g_ij = e + if i == j { 1.0 } else { 0.0 };
                let g_jj = exact.get(j, j) + 1.0;
                let var = g_ij * (2.0 * g_jj - 1.0) - g_ij * g_ij;
                let se = (var / walkers as f64).sqrt();
                let mean = walk.counts.get(i, j) as f64 / walkers as f64;
                worst_z = worst_z.max((mean - e).abs() / se);
                entries += 1;
            }
        }
    }
    verdict(
        worst_z <= 4.0,
        format!("N in {{1,2,5,10}}, M=50000: {entries} entries, worst |z| {worst_z:.2} (limit 4)"),
    )
}

fn stopping_time() -> Result<Verdict> {
    let spec = reference();
    let moves: Moves = spec.transition_probabilities().into();
    let walk = run_walkers(
        &spec,
        &moves,
        0,
        100_000,
        derive_seed(SEED, 4),
        walk_cap(&spec),
    )?;
    let mean = walk.mean_absorption_steps().unwrap_or(f64::NAN);
    let target = spec.mean_steps_from_origin();
    let exact: f64 = exact_expected_counts_for(spec.n_nodes(), &moves)?
        .row(0)
        .iter()
        .sum::<f64>()
        + 1.0;
    let rel = (mean - target).abs() / target;
    verdict(
        walk.unabsorbed == 0 && rel <= 0.02,
        format!(
            "M=100000 from node 0: mean {mean:.1} steps vs {target:.0} (off {:.2}%, limit 2%); \
             exact chain mean {exact:.1}; unabsorbed {}",
            100.0 * rel,
            walk.unabsorbed
        ),
    )
}

struct Interval {
    mean: f64,
    half: f64,
}

fn intervals(replicates: &[Vec<f64>]) -> Vec<Interval> {
    let r = replicates.len() as f64;
    let t = StudentsT::new(0.0, 1.0, r - 1.0)
        .expect("dof > 0")
        .inverse_cdf(0.975);
    (0..replicates[0].len())
        .map(|j| {
            let mean = replicates.iter().map(|u| u[j]).sum::<f64>() / r;
            let var = replicates
                .iter()
                .map(|u| (u[j] - mean).powi(2))
                .sum::<f64>()
                / (r - 1.0);
            Interval {
                mean,
                half: t * (var / r).sqrt(),
            }
        })
        .collect()
}

fn spiking_direct_equivalence() -> Result<Verdict> {
    let spec = scaled(10);
    let n = spec.n_nodes();
    let (tiles, per_tile) = (10u32, 100u32);
    let net = build_network(&spec, &NetworkConfig::new(per_tile, tiles))?;
    let moves = net.meta.moves;
    let record = run(&net, 3_000_000, derive_seed(SEED, 5))?;
    if record.unabsorbed > 0 {
        return verdict(
            false,
            format!(
                "{} walkers still in the wire at the budget",
                record.unabsorbed
            ),
        );
    }
    let mut spiking = Vec::new();
    for r in 0..tiles as usize {
        let mut counts = NodeCounts::zeros(n);
        for start in 0..n {
            counts.add_row(
                start,
                per_tile as u64,
                &record.tallies[start * tiles as usize + r],
            )?;
        }
        spiking.push(estimate_solution(&counts, &spec)?.u);
    }
    let mut direct = Vec::new();
    for b in 0..tiles as u64 {
        let seed = derive_seed(SEED, 500 + b);
        let mut counts = NodeCounts::zeros(n);
        for start in 0..n {
            let walk = run_walkers(&spec, &moves, start, per_tile as u64, seed, walk_cap(&spec))?;
            counts.merge(&walk.counts)?;
        }
        direct.push(estimate_solution(&counts, &spec)?.u);
    }
    let (s, d) = (intervals(&spiking), intervals(&direct));
    let apart: Vec<usize> = (0..n)
        .filter(|&j| (s[j].mean - d[j].mean).abs() > s[j].half + d[j].half)
        .collect();
    let worst = (0..n)
        .map(|j| (s[j].mean - d[j].mean).abs() / (s[j].half + d[j].half).max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    verdict(
        apart.is_empty(),
        format!(
            "N=10, 1000 walkers per start as 10 replicates, p_go={}: non-overlapping nodes {apart:?}; \
             largest gap {worst:.2} of combined half-widths",
            moves.p_right
        ),
    )
}

fn budget_monotonicity() -> Result<Verdict> {
    let spec = scaled(20);
    let net = build_network(&spec, &NetworkConfig::new(50, 2))?;
    let budgets = [100_000u64, 500_000, 1_000_000];
    let mut rmse = vec![Vec::new(); budgets.len()];
    for r in 0..3 {
        let seed = derive_seed(SEED, 60 + r);
        for (k, &b) in budgets.iter().enumerate() {
            let record = run(&net, b, seed)?;
            rmse[k].push(error_report(&decode_counts(&record, &spec)?, &spec)?.rmse);
        }
    }
    let medians: Vec<f64> = rmse
        .iter_mut()
        .map(|v| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();
    verdict(
        medians.windows(2).all(|w| w[1] <= w[0]),
        format!(
            "N=20, 2 tiles x 50 walkers per start, budgets 100k/500k/1M: median RMSE {medians:.4?}"
        ),
    )
}

fn quantization_bias() -> Result<Verdict> {
    let spec = reference();
    let preset = quantization_bias_preset();
    let mut cfg = SolveConfig::new(&spec, 2_000, derive_seed(SEED, 7));
    cfg.runs = 5;
    cfg.moves = Some(preset);
    let result = mcwalk::solve(&spec, &cfg)?;
    let dev = error_report(&result.mean, &spec)?.deviations;
    let expected = expected_solution(&spec, &preset)?;
    let x = spec.mesh().positions;
    let interior = 1..spec.n_nodes() - 1;
    let negative: Vec<f64> = interior
        .clone()
        .filter(|&j| dev[j] <= 0.0)
        .map(|j| x[j])
        .collect();
    let expected_negative = interior
        .clone()
        .filter(|&j| expected[j] <= analytic_solution(&spec, x[j]).unwrap_or(f64::NAN))
        .count();
    verdict(
        negative.is_empty(),
        format!(
            "preset {:.4}/{:.4}, N=40, M=2000, 5 runs: bias not positive at {} of {} interior nodes {negative:.3?}; \
             exact chain expectation not positive at {expected_negative}",
            preset.p_left,
            preset.p_right,
            negative.len(),
            interior.len()
        ),
    )
}

fn load_shape() -> Result<Verdict> {
    let spec = reference();
    let net = build_network(&spec, &NetworkConfig::new(100, 3))?;
    let record = run(&net, 1_000_000, derive_seed(SEED, 8))?;
    let ma = moving_average(&record.spikes_in_flight, MOVING_AVERAGE_WINDOW)?;
    let peak = ma
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let half = ma.len() / 2;
    let slope = linear_slope(&ma[half..])?;
    verdict(
        peak < half && slope <= 0.0,
        format!(
            "N=40, 3 tiles x 100 walkers per start ({} neurons), 1M steps: peak at {peak}, \
             second-half slope {slope:.3e}",
            net.neurons.len()
        ),
    )
}

fn policy_contrast() -> Result<Verdict> {
    let spec = scaled(10);
    let mut pairs = Vec::new();
    for s in 0..3 {
        let seed = derive_seed(SEED, 90 + s);
        let mut ratio = [0.0; 2];
        for (k, policy) in [AbsorbPolicy::Remove, AbsorbPolicy::Accumulate]
            .into_iter()
            .enumerate()
        {
            let mut cfg = NetworkConfig::new(100, 1);
            cfg.absorb_policy = policy;
            ratio[k] = timestep_ratio(&run(&build_network(&spec, &cfg)?, 300_000, seed)?)?.mean;
        }
        pairs.push(ratio);
    }
    verdict(
        pairs.iter().all(|[rem, acc]| acc > rem),
        format!(
            "N=10, 100 walkers per start, 300k steps, (remove, accumulate) per seed: {pairs:.3?}"
        ),
    )
}

fn determinism() -> Result<Verdict> {
    let spec = scaled(8);
    let mut problems = Vec::new();

    let mut cfg = SolveConfig::new(&spec, 500, derive_seed(SEED, 10));
    cfg.runs = 2;
    let solve = || -> Result<String> {
        Ok(serde_json::to_string(&mcwalk::solve(&spec, &cfg)?).expect("serializes"))
    };
    if solve()? != solve()? {
        problems.push("direct solve");
    }

    let mut net_cfg = NetworkConfig::new(20, 2);
    net_cfg.absorb_policy = AbsorbPolicy::Accumulate;
    let net = build_network(&spec, &net_cfg)?;
    let text = netgen::export(&net, Some(SEED));
    if netgen::export(&build_network(&spec, &net_cfg)?, Some(SEED)) != text {
        problems.push("netlist export");
    }
    let a = run(&net, 50_000, SEED)?;
    let b = run(&net, 50_000, SEED)?;
    let json = |r| serde_json::to_string(r).expect("serializes");
    if json(&a) != json(&b) {
        problems.push("spiking record");
    }
    let imported = netgen::import(&text)?;
    let c = run(&imported, 50_000, SEED)?;
    if c != a || json(&c) != json(&a) {
        problems.push("imported network record");
    }
    if netgen::export(&imported, Some(SEED)) != text {
        problems.push("re-export");
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "solve, netlist, record and round-trip outputs byte-identical".into()
        } else {
            format!("outputs differ: {problems:?}")
        },
    )
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let checks: [(&str, fn() -> Result<Verdict>); 10] = [
        ("transition-probabilities", transition_probabilities),
        ("analytic-reproduction", analytic_reproduction),
        ("oracle-equivalence", oracle_equivalence),
        ("stopping-time", stopping_time),
        ("spiking-direct-equivalence", spiking_direct_equivalence),
        ("budget-monotonicity", budget_monotonicity),
        ("quantization-bias", quantization_bias),
        ("load-shape", load_shape),
        ("policy-contrast", policy_contrast),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} {name} [{:.1}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}

/// Generous step cap so that no walker is cut off early.
fn walk_cap(spec: &ProblemSpec) -> u64 {
    50 * default_max_steps(spec)
}
