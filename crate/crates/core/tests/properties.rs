use heatwalk::bench::error_report;
use heatwalk::mcwalk::{
    estimate_solution, exact_expected_counts_for, run_walkers, transient_matrix,
};
use heatwalk::problem::analytic_solution;
use heatwalk::snn::{quantize_probability, Rounding, Simulation, StartNodes};
use heatwalk::{
    build_network, netgen, AbsorbPolicy, Moves, NetworkConfig, NodeCounts, PrecisionConfig,
    ProblemSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn moves() -> impl Strategy<Value = Moves> {
    (0.001f64..0.3, 0.5f64..2.0).prop_map(|(l, ratio)| Moves::new(l, l * ratio).unwrap())
}

fn rounding() -> impl Strategy<Value = Rounding> {
    prop_oneof![
        Just(Rounding::Nearest),
        Just(Rounding::OneSidedDown),
        Just(Rounding::OneSidedUp)
    ]
}

fn policy() -> impl Strategy<Value = AbsorbPolicy> {
    prop_oneof![Just(AbsorbPolicy::Remove), Just(AbsorbPolicy::Accumulate)]
}

fn network_config() -> impl Strategy<Value = (usize, NetworkConfig)> {
    (
        1usize..6,
        0u32..15,
        1u32..3,
        policy(),
        prop::option::of(4u32..12),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(n, w, tiles, absorb_policy, bits, start)| {
            let mut c = NetworkConfig::new(w, tiles);
            c.absorb_policy = absorb_policy;
            c.precision = PrecisionConfig {
                bits,
                rounding: Rounding::Nearest,
            };
            c.start = if start.index(n + 1) == n {
                StartNodes::All
            } else {
                StartNodes::Node(start.index(n))
            };
            (n, c)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_rows_sum_to_one(n in 1usize..40, m in moves()) {
        let (q, absorb) = transient_matrix(n, &m);
        for j in 0..n {
            let s = q.row(j).sum() + absorb[j];
            prop_assert!((s - 1.0).abs() < 1e-12, "row {} sums to {}", j, s);
        }
    }

    #[test]
    fn expected_counts_invert_the_chain(n in 1usize..20, m in moves()) {
        let e = exact_expected_counts_for(n, &m).unwrap();
        let (q, _) = transient_matrix(n, &m);
        let g = DMatrix::from_fn(n, n, |i, j| e.get(i, j) + if i == j { 1.0 } else { 0.0 });
        let residual = (DMatrix::identity(n, n) - q) * &g - DMatrix::identity(n, n);
        prop_assert!(residual.amax() < 1e-8 * g.amax().max(1.0));
        prop_assert!(e.row(0).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn quantized_probabilities_are_representable(p in 0.0f64..=1.0, bits in 1u32..20, r in rounding()) {
        let q = quantize_probability(p, bits, r).unwrap();
        let scale = 2f64.powi(bits as i32);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert_eq!((q * scale).fract(), 0.0);
        match r {
            Rounding::Nearest => prop_assert!((q - p).abs() <= 0.5 / scale),
            Rounding::OneSidedDown => prop_assert!(q <= p && p - q < 1.0 / scale),
            Rounding::OneSidedUp => prop_assert!(q >= p && q - p < 1.0 / scale),
        }
    }

    #[test]
    fn analytic_solution_solves_the_ode(n in 1usize..60, l in 0.5f64..4.0, f in 0.1f64..10.0, t in 0.05f64..0.95) {
        let spec = ProblemSpec::scaled(l, f, n).unwrap();
        let (x, h) = (t * l, 1e-3);
        let u = |y: f64| analytic_solution(&spec, y).unwrap();
        let d2 = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
        prop_assert!((d2 - f * (l - x)).abs() < 1e-5 * f * l.max(1.0).powi(3));
        prop_assert_eq!(u(0.0), 0.0);
    }

    #[test]
    fn estimate_is_zero_at_the_origin(rows in prop::collection::vec(prop::collection::vec(0u64..10_000, 6), 6), m in 1u64..500) {
        let spec = ProblemSpec::scaled(2.0, 3.0, 6).unwrap();
        let mut counts = NodeCounts::zeros(6);
        for (i, row) in rows.iter().enumerate() {
            counts.add_row(i, m, row).unwrap();
        }
        let s = estimate_solution(&counts, &spec).unwrap();
        prop_assert_eq!(s.u[0], 0.0);
        let report = error_report(&s, &spec).unwrap();
        prop_assert!(report.rmse <= report.max_abs + 1e-12);
    }

    #[test]
    fn walker_runs_are_reproducible(n in 1usize..8, start in any::<prop::sample::Index>(), walkers in 1u64..300, seed: u64) {
        let spec = ProblemSpec::scaled(2.0, 3.0, n).unwrap();
        let m: Moves = spec.transition_probabilities().into();
        let i = start.index(n);
        let a = run_walkers(&spec, &m, i, walkers, seed, 5_000).unwrap();
        prop_assert_eq!(&a, &run_walkers(&spec, &m, i, walkers, seed, 5_000).unwrap());
        prop_assert_eq!(a.counts.walkers(i), walkers);
        prop_assert_eq!(a.absorption_steps.len() as u64, walkers);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn netlists_round_trip((n, cfg) in network_config(), seed in prop::option::of(any::<u64>())) {
        let spec = ProblemSpec::scaled(2.0, 3.0, n).unwrap();
        let net = build_network(&spec, &cfg).unwrap();
        let text = netgen::export(&net, seed);
        let back = netgen::import(&text).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(netgen::export(&back, seed), text);
        prop_assert_eq!(net.tile_size(), heatwalk::snn::neurons_per_tile(n, cfg.absorb_policy));
    }

    #[test]
    fn spiking_runs_conserve_walkers((n, cfg) in network_config(), seed: u64) {
        let spec = ProblemSpec::scaled(2.0, 3.0, n).unwrap();
        let net = build_network(&spec, &cfg).unwrap();
        let mut sim = Simulation::new(&net, seed).unwrap();
        let tiles = net.tiles();
        let mut last = vec![vec![0u64; n]; tiles];
        for _ in 0..3_000 {
            sim.neural_step();
            for tile in 0..tiles {
                if sim.transfer_started(tile) {
                    let c = sim.census(tile);
                    prop_assert_eq!(c.on_nodes + c.absorbed, cfg.walkers_per_tile as u64);
                }
                let tally = sim.tally(tile);
                prop_assert!(tally.iter().zip(&last[tile]).all(|(a, b)| a >= b));
                last[tile] = tally;
            }
        }
        let record = sim.into_record().unwrap();
        for i in 0..n {
            let summed: Vec<u64> = (0..n)
                .map(|j| {
                    record
                        .tallies
                        .iter()
                        .zip(&record.tile_starts)
                        .filter(|(_, &s)| s as usize == i)
                        .map(|(t, _)| t[j])
                        .sum()
                })
                .collect();
            prop_assert_eq!(record.counts.row(i), &summed[..]);
        }
    }
}
