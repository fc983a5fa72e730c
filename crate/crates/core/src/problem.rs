//! The heated-wire problem: physical parameters, discretization, closed-form
//! reference solution and the Gaussian-derived single-step transition
//! probabilities of the walk.
//!
//! The wire occupies `[0, ℓ]` with `u(0) = 0`, `u'(0) = 0` and forcing
//! `q(x) = -F(ℓ - x)` (heat capacity already folded into `F`), giving
//! `u(x) = Fℓx²/2 - Fx³/6`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold on the probability of jumping more than one node per step.
pub const DEFAULT_THRESHOLD_C: f64 = 0.05;

/// Largest relative deviation of `ℓ/Δx` from an integer that still counts as an
/// exact division.
const DIVISION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblemSpec")]
pub struct ProblemSpec {
    length: f64,
    forcing: f64,
    dx: f64,
    dt: f64,
    threshold_c: f64,
    #[serde(skip)]
    n_nodes: usize,
}

#[derive(Deserialize)]
struct RawProblemSpec {
    length: f64,
    forcing: f64,
    dx: f64,
    dt: f64,
    #[serde(default = "default_threshold")]
    threshold_c: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_C
}

impl TryFrom<RawProblemSpec> for ProblemSpec {
    type Error = Error;

    fn try_from(raw: RawProblemSpec) -> Result<Self> {
        ProblemSpec::with_threshold(raw.length, raw.forcing, raw.dx, raw.dt, raw.threshold_c)
    }
}

impl Default for ProblemSpec {
    /// F = 3, ℓ = 2, Δx = 0.05, Δt = 1e-4: forty nodes.
    fn default() -> Self {
        ProblemSpec::new(2.0, 3.0, 0.05, 1e-4).expect("reference configuration is valid")
    }
}

impl ProblemSpec {
    pub fn new(length: f64, forcing: f64, dx: f64, dt: f64) -> Result<Self> {
        Self::with_threshold(length, forcing, dx, dt, DEFAULT_THRESHOLD_C)
    }

    /// Validates positivity, that `Δx` divides `ℓ` exactly, and that `Δt`
    /// passes [`validate_timestep`] against `threshold_c`.
    pub fn with_threshold(
        length: f64,
        forcing: f64,
        dx: f64,
        dt: f64,
        threshold_c: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("length", length),
            ("forcing", forcing),
            ("dx", dx),
            ("dt", dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let ratio = length / dx;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > DIVISION_TOLERANCE * n.max(1.0) {
            return Err(Error::domain(format!(
                "dx = {dx} does not divide length = {length} into a whole number of cells"
            )));
        }
        let check = validate_timestep(dx, dt, threshold_c)?;
        if !check.passed {
            return Err(Error::InvalidTimestep {
                tail_mass: check.tail_mass,
                threshold: threshold_c,
            });
        }
        Ok(ProblemSpec {
            length,
            forcing,
            dx,
            dt,
            threshold_c,
            n_nodes: n as usize,
        })
    }

    /// A mesh of `n_nodes` cells on `[0, length]` whose timestep keeps the same
    /// `Δx²/Δt` ratio, and therefore the same transition probabilities, as the
    /// default forty-node configuration.
    pub fn scaled(length: f64, forcing: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::domain("n_nodes must be at least 1"));
        }
        let dx = length / n_nodes as f64;
        let dt = dx * dx / 25.0;
        Self::new(length, forcing, dx, dt)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn forcing(&self) -> f64 {
        self.forcing
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn threshold_c(&self) -> f64 {
        self.threshold_c
    }

    /// Number of interior mesh nodes, `N = ℓ/Δx`.
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn mesh(&self) -> Mesh {
        Mesh {
            positions: (0..self.n_nodes)
                .map(|j| (j as f64 + 0.5) * self.dx)
                .collect(),
        }
    }

    pub fn transition_probabilities(&self) -> TransitionProbabilities {
        transition_probabilities(self.dx, self.dt).expect("validated on construction")
    }

    /// Mean absorption time from `x = 0`, in simulation steps.
    pub fn mean_steps_from_origin(&self) -> f64 {
        self.length * self.length / 2.0 / self.dt
    }
}

/// Cell midpoints `x_j = (j + 1/2)Δx`; index `N` is the absorbing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub positions: Vec<f64>,
}

impl Mesh {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn absorbing_index(&self) -> usize {
        self.positions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionProbabilities {
    /// Probability of staying on the current node, `1 - 2 p_go`.
    pub p_stay: f64,
    /// Probability of hopping to one particular neighbour.
    pub p_go: f64,
    /// Probability of a Gaussian increment reaching beyond either next-nearest
    /// neighbour, `2 P[X ≤ -3Δx/2]`.
    pub tail_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepCheck {
    pub passed: bool,
    pub tail_mass: f64,
    pub threshold: f64,
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `u(x) = Fℓx²/2 - Fx³/6` for `x` in `[0, ℓ]`.
pub fn analytic_solution(spec: &ProblemSpec, x: f64) -> Result<f64> {
    check_in_wire(spec, x, "x")?;
    let (f, l) = (spec.forcing, spec.length);
    Ok(f * l * x * x / 2.0 - f * x * x * x / 6.0)
}

/// Single-step probabilities for increments distributed `N(0, 2Δt)`.
pub fn transition_probabilities(dx: f64, dt: f64) -> Result<TransitionProbabilities> {
    if !(dx > 0.0 && dx.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!(
            "dx and dt must be positive and finite, got dx = {dx}, dt = {dt}"
        )));
    }
    let sd = (2.0 * dt).sqrt();
    let p_go = normal_cdf(-dx / (2.0 * sd));
    let tail_mass = 2.0 * normal_cdf(-3.0 * dx / (2.0 * sd));
    Ok(TransitionProbabilities {
        p_stay: 1.0 - 2.0 * p_go,
        p_go,
        tail_mass,
    })
}

/// Passes when the chance of skipping past a neighbour is below `c`.
pub fn validate_timestep(dx: f64, dt: f64, c: f64) -> Result<TimestepCheck> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::domain(format!(
            "threshold c must lie in (0, 1), got {c}"
        )));
    }
    let probs = transition_probabilities(dx, dt)?;
    Ok(TimestepCheck {
        passed: probs.tail_mass < c,
        tail_mass: probs.tail_mass,
        threshold: c,
    })
}

/// Mean time to leave `[0, ℓ]` from `y` for the process reflected at zero,
/// `(ℓ² - y²)/2`, in seconds.
pub fn expected_stopping_time(spec: &ProblemSpec, y: f64) -> Result<f64> {
    check_in_wire(spec, y, "y")?;
    Ok((spec.length * spec.length - y * y) / 2.0)
}

fn check_in_wire(spec: &ProblemSpec, x: f64, name: &str) -> Result<()> {
    if !(0.0..=spec.length).contains(&x) {
        return Err(Error::domain(format!(
            "{name} = {x} lies outside the wire [0, {}]",
            spec.length
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson integral of the N(0, 2dt) density over [a, b].
    fn gaussian_mass(a: f64, b: f64, dt: f64) -> f64 {
        let var = 2.0 * dt;
        let pdf = |x: f64| (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = pdf(a) + pdf(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(a + k as f64 * h);
        }
        s * h / 3.0
    }

    fn wire() -> ProblemSpec {
        ProblemSpec::new(2.0, 3.0, 0.05, 1e-4).unwrap()
    }

    #[test]
    fn analytic_values() {
        let spec = wire();
        assert_eq!(analytic_solution(&spec, 0.0).unwrap(), 0.0);
        assert!((analytic_solution(&spec, 1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((analytic_solution(&spec, 2.0).unwrap() - 8.0).abs() < 1e-12);
        assert!(matches!(
            analytic_solution(&spec, 2.5),
            Err(Error::Domain(_))
        ));
        assert!(analytic_solution(&spec, -1e-9).is_err());
    }

    #[test]
    fn analytic_satisfies_ode_and_boundary() {
        let spec = wire();
        let u = |x: f64| analytic_solution(&spec, x).unwrap();
        let h = 1e-4;
        for &x in &[0.3, 0.9, 1.4, 1.9] {
            let second = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
            assert!((second - 3.0 * (2.0 - x)).abs() < 1e-4, "x = {x}: {second}");
        }
        // The closed form extended to x < 0; its central difference at 0 is -F h²/6.
        let poly = |x: f64| 3.0 * 2.0 * x * x / 2.0 - 3.0 * x * x * x / 6.0;
        for &h in &[1e-2, 1e-3, 1e-4] {
            let d = (poly(h) - poly(-h)) / (2.0 * h);
            assert!(d.abs() <= 0.6 * h * h, "derivative at 0 with h = {h}: {d}");
        }
    }

    #[test]
    fn reference_probabilities() {
        let p = transition_probabilities(0.05, 1e-4).unwrap();
        assert!((p.p_go - 0.0385).abs() < 5e-4);
        assert!((p.p_stay - 0.9229).abs() < 5e-4);
        assert!((p.p_stay + 2.0 * p.p_go - 1.0).abs() < 1e-12);
        // Quadrature oracle, independent of erfc.
        let go = gaussian_mass(-0.5, -0.025, 1e-4);
        let tail = 2.0 * gaussian_mass(-0.5, -0.075, 1e-4);
        assert!((p.p_go - go).abs() < 1e-10, "{} vs {}", p.p_go, go);
        assert!(
            (p.tail_mass - tail).abs() < 1e-10,
            "{} vs {}",
            p.tail_mass,
            tail
        );
        assert!((p.tail_mass - 1.137e-7).abs() < 1e-9);
    }

    #[test]
    fn normal_cdf_against_quadrature() {
        for &z in &[-6.0, -3.2, -1.0, -0.1, 0.0, 0.7, 2.5] {
            // dt = 0.5 makes the N(0, 2dt) density standard normal.
            let q = gaussian_mass(-40.0, z, 0.5);
            assert!((normal_cdf(z) - q).abs() < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn timestep_validity() {
        let ok = validate_timestep(0.05, 1e-4, 0.05).unwrap();
        assert!(ok.passed);
        let bad = validate_timestep(0.05, 0.01, 0.05).unwrap();
        assert!(!bad.passed);
        assert!((bad.tail_mass - 0.5959).abs() < 1e-3, "{}", bad.tail_mass);
        assert!(validate_timestep(0.05, 1e-12, 0.05).unwrap().passed);
        assert!(validate_timestep(0.05, 1e-4, 1.0).is_err());
        assert!(matches!(
            ProblemSpec::new(2.0, 3.0, 0.05, 0.01),
            Err(Error::InvalidTimestep { .. })
        ));
    }

    #[test]
    fn spec_construction() {
        let spec = wire();
        assert_eq!(spec.n_nodes(), 40);
        assert!(ProblemSpec::new(2.0, 3.0, 0.3, 1e-4).is_err());
        assert!(ProblemSpec::new(2.0, 0.0, 0.05, 1e-4).is_err());
        assert!(transition_probabilities(0.0, 1.0).is_err());
        let one = ProblemSpec::scaled(2.0, 3.0, 1).unwrap();
        assert_eq!(one.n_nodes(), 1);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ProblemSpec>(
            r#"{"length":2,"forcing":3,"dx":0.05,"dt":0.01}"#
        )
        .is_err());
    }

    #[test]
    fn mesh_layout() {
        let mesh = wire().mesh();
        assert_eq!(mesh.len(), 40);
        assert_eq!(mesh.absorbing_index(), 40);
        assert!(mesh.positions.windows(2).all(|w| w[0] < w[1]));
        assert!(mesh.positions.iter().all(|&x| x > 0.0 && x < 2.0));
        assert!((mesh.positions[0] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn stopping_time_values() {
        let spec = wire();
        assert_eq!(expected_stopping_time(&spec, 2.0).unwrap(), 0.0);
        assert_eq!(expected_stopping_time(&spec, 0.0).unwrap(), 2.0);
        assert_eq!(expected_stopping_time(&spec, 1.0).unwrap(), 1.5);
        assert!(expected_stopping_time(&spec, 3.0).is_err());
    }

    proptest! {
        #[test]
        fn p_go_monotone_in_dt(dx in 0.01f64..1.0, dt in 1e-6f64..1e-1, factor in 1.01f64..4.0) {
            let a = transition_probabilities(dx, dt).unwrap();
            let b = transition_probabilities(dx, dt * factor).unwrap();
            prop_assume!(a.p_go > 1e-300);
            prop_assert!(b.p_go > a.p_go);
        }

        #[test]
        fn p_go_monotone_in_dx(dx in 0.01f64..1.0, dt in 1e-5f64..1e-1, factor in 1.01f64..4.0) {
            let a = transition_probabilities(dx, dt).unwrap();
            let b = transition_probabilities(dx * factor, dt).unwrap();
            prop_assume!(b.p_go > 1e-300);
            prop_assert!(b.p_go < a.p_go);
        }

        #[test]
        fn valid_steps_order_probabilities(dx in 0.01f64..1.0, dt in 1e-6f64..1e-1, c in 1e-4f64..0.05) {
            let check = validate_timestep(dx, dt, c).unwrap();
            prop_assume!(check.passed);
            let p = transition_probabilities(dx, dt).unwrap();
            prop_assert!(p.tail_mass < p.p_go && p.p_go < p.p_stay);
            prop_assert!(p.p_go > 0.0 && p.p_go < 0.5);
        }
    }
}
