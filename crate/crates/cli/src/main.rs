mod config;

use std::fmt::Write as _;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heatwalk::bench::{self, BenchConfig, SweepAxis};
use heatwalk::mcwalk::{self, SolveConfig};
use heatwalk::problem::analytic_solution;
use heatwalk::{netgen, snn, MeshSolution};
use serde_json::json;

use config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Runtime(String),
}

impl From<heatwalk::Error> for CliError {
    fn from(e: heatwalk::Error) -> Self {
        use heatwalk::Error::*;
        match e {
            Domain(_) | InvalidTimestep { .. } | Parse { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "heatwalk",
    version,
    about = "Random-walk solver for the steady-state heated wire"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Direct Monte Carlo solve over every start node.
    Solve(Overrides),
    /// Build and run the spiking network, then decode its tallies.
    Simulate(Overrides),
    /// Write the spiking network as a netlist-v1 JSON file.
    Generate(Overrides),
    /// Benchmark a spiking run, or sweep one parameter.
    Bench(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Overrides,
    /// tiles, walkers or neural-steps.
    #[arg(long, requires = "values")]
    axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', requires = "axis")]
    values: Vec<u64>,
}

fn write(cfg: &RunConfig, name: &str, body: &str) -> Result<(), CliError> {
    let path = cfg.path(name);
    std::fs::write(&path, body)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json(cfg: &RunConfig, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    write(cfg, name, &text)
}

fn solution_csv(cfg: &RunConfig, s: &MeshSolution) -> Result<String, CliError> {
    let mut out = cfg.csv_comment();
    out.push_str("x,u_estimate,u_analytic,abs_error\n");
    for (&x, &u) in s.x.iter().zip(&s.u) {
        let a = analytic_solution(&cfg.problem, x)?;
        writeln!(out, "{x},{u},{a},{}", (u - a).abs()).unwrap();
    }
    Ok(out)
}

fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let mut sc = SolveConfig::new(&cfg.problem, cfg.walkers, cfg.seed);
    sc.max_steps = cfg.max_steps;
    sc.runs = cfg.runs;
    sc.moves = cfg.moves();
    let result = mcwalk::solve(&cfg.problem, &sc)?;
    cfg.ensure_out()?;
    write(cfg, "solution.csv", &solution_csv(cfg, &result.mean)?)?;

    let mut runs_csv = cfg.csv_comment();
    runs_csv.push_str("run,seed,node,x,u\n");
    let mut runs = Vec::new();
    for (r, run) in result.runs.iter().enumerate() {
        for (j, (&x, &u)) in run.solution.x.iter().zip(&run.solution.u).enumerate() {
            writeln!(runs_csv, "{r},{},{j},{x},{u}", run.seed).unwrap();
        }
        let err = bench::error_report(&run.solution, &cfg.problem)?;
        runs.push(json!({
            "run": r,
            "seed": run.seed,
            "error": err,
            "unabsorbed_fraction": run.solution.unabsorbed_fraction,
            "mean_absorption_steps": run.mean_absorption_steps,
        }));
    }
    write(cfg, "runs.csv", &runs_csv)?;
    let error = bench::error_report(&result.mean, &cfg.problem)?;
    println!(
        "solved {} nodes, {} run(s): rmse {:.5}, max |error| {:.5}",
        cfg.problem.n_nodes(),
        cfg.runs,
        error.rmse,
        error.max_abs
    );
    write_json(
        cfg,
        "summary.json",
        &json!({
            "config": cfg.json(),
            "n_nodes": cfg.problem.n_nodes(),
            "transition_probabilities": cfg.problem.transition_probabilities(),
            "error": error,
            "runs": runs,
        }),
    )
}

fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let network = snn::build_network(&cfg.problem, &cfg.network()?)?;
    let record = snn::run(&network, cfg.neural_steps, cfg.seed)?;
    cfg.ensure_out()?;
    write(
        cfg,
        "spikes_in_flight.csv",
        &(cfg.csv_comment() + &record.spikes_csv()),
    )?;
    write(
        cfg,
        "counts.csv",
        &(cfg.csv_comment() + &record.counts.to_csv()),
    )?;
    let solution = match snn::decode_counts(&record, &cfg.problem) {
        Ok(s) => {
            write(cfg, "solution.csv", &solution_csv(cfg, &s)?)?;
            Some(bench::error_report(&s, &cfg.problem)?)
        }
        Err(_) => None,
    };
    println!(
        "{} tiles x {} neurons, {} neural steps, {} simulation steps, {} walkers unabsorbed",
        network.tiles(),
        network.tile_size(),
        record.neural_timesteps_used,
        record.sim_timesteps_completed,
        record.unabsorbed
    );
    write_json(
        cfg,
        "record.json",
        &json!({
            "config": cfg.json(),
            "neurons": network.neurons.len(),
            "error": solution,
            "record": record,
        }),
    )
}

fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let network = snn::build_network(&cfg.problem, &cfg.network()?)?;
    cfg.ensure_out()?;
    write(
        cfg,
        "netlist.json",
        &netgen::export(&network, Some(cfg.seed)),
    )?;
    println!(
        "wrote {} neurons and {} synapses to {}",
        network.neurons.len(),
        network.synapses.len(),
        cfg.path("netlist.json").display()
    );
    Ok(())
}

fn bench_cmd(cfg: &RunConfig, axis: Option<&str>, values: &[u64]) -> Result<(), CliError> {
    if !cfg.seed_given {
        return Err(CliError::Config("bench needs an explicit --seed".into()));
    }
    let base = BenchConfig {
        problem: cfg.problem,
        network: cfg.network()?,
        neural_timesteps: cfg.neural_steps,
        seed: cfg.seed,
    };
    match axis {
        Some(axis) => {
            let axis: SweepAxis = axis.parse()?;
            let rows = bench::scaling_sweep(axis, values, &base)?;
            cfg.ensure_out()?;
            write(
                cfg,
                "sweep.csv",
                &(cfg.csv_comment() + &bench::sweep_csv(&rows)),
            )?;
            let timing: Vec<_> = rows
                .iter()
                .map(|r| json!({ "value": r.value, "wall_clock": r.report.wall_clock }))
                .collect();
            write_json(
                cfg,
                "timing.json",
                &json!({ "config": cfg.json(), "runs": timing }),
            )?;
            write_json(
                cfg,
                "sweep.json",
                &json!({ "config": cfg.json(), "axis": axis, "rows": rows }),
            )?;
            println!("swept {} values", rows.len());
        }
        None => {
            let (report, record) = bench::bench_run(&base)?;
            cfg.ensure_out()?;
            let mut csv = cfg.csv_comment();
            csv.push_str("neural_t,count,moving_average\n");
            for (t, (c, m)) in record
                .spikes_in_flight
                .iter()
                .zip(&report.spikes_in_flight_ma)
                .enumerate()
            {
                writeln!(csv, "{t},{c},{m}").unwrap();
            }
            write(cfg, "spikes_in_flight.csv", &csv)?;
            write_json(
                cfg,
                "timing.json",
                &json!({ "config": cfg.json(), "wall_clock": report.wall_clock }),
            )?;
            write_json(
                cfg,
                "report.json",
                &json!({ "config": cfg.json(), "report": report }),
            )?;
            if let Some(r) = &report.ratio_stats {
                println!(
                    "neural steps per simulation step: {:.3} ± {:.3} (reference {} ± {})",
                    r.mean, r.std, r.reference_mean, r.reference_std
                );
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let overrides = match &cli.command {
        Command::Solve(o) | Command::Simulate(o) | Command::Generate(o) => o.clone(),
        Command::Bench(b) => b.common.clone(),
    };
    let cfg = overrides.resolve()?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Solve(_) => solve(&cfg),
        Command::Simulate(_) => simulate(&cfg),
        Command::Generate(_) => generate(&cfg),
        Command::Bench(b) => bench_cmd(&cfg, b.axis.as_deref(), &b.values),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
