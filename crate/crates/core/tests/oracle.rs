mod common;

use common::*;
use qtransport::bath::{KernelKind, Reservoir, SpectralDensity};
use qtransport::dyson::{dress_all, DysonContext};
use qtransport::evolution::{evolve, CouplingOperators, GeneratorKernels};
use qtransport::oracle::*;
use qtransport::solver::SolverConfig;
use qtransport::system::InitialState;
use qtransport::timegrid::TimeGrid;
use qtransport::transport::exact_currents;

fn scenario(eta: f64, parity: ParityStrings) -> FiniteBathScenario {
    let model = pairing_dimer();
    let modes = discretize(&lorentzian(eta), 3, 4.0);
    let bath = |name: &str, beta: f64, site: usize| Reservoir {
        name: name.into(),
        beta,
        mu: 0.0,
        spectral: SpectralDensity::Discrete { modes: modes.clone() },
        site,
    };
    let rho_s = InitialState::Fock { occupations: vec![1, 0] }.density_matrix(&model).unwrap();
    FiniteBathScenario { model, reservoirs: vec![bath("L", 1.0, 0), bath("R", 10.0, 1)], rho_s, parity }
}

/// Worst relative cumulative-heat error over both reservoirs.
fn engine_error(scn: &FiniteBathScenario, n: usize) -> f64 {
    let window = scn.recurrence_window();
    let grid = TimeGrid::build(window, n, 1.0).unwrap();
    let reference = finite_bath_heat(scn, grid.nodes()).unwrap();
    let ctx = DysonContext::new(&scn.model, &scn.reservoirs, &grid).unwrap();
    let dressed = dress_all(&ctx, &[0.0, 0.0], &SolverConfig::default(), true).unwrap();
    let ops = CouplingOperators::new(&scn.model, &grid);
    let traj = evolve(&ops, &GeneratorKernels::untilted(&dressed.green, -1.0), &grid, &scn.rho_s, &[0.0, 0.0]).unwrap();
    let cur = exact_currents(&ctx, &dressed, &traj, &ops).unwrap();
    (0..2)
        .map(|a| {
            let q = cur.cumulative(&grid, KernelKind::Heat, a);
            compare_currents(grid.nodes(), &reference.heat[a], &q, cur.channel(KernelKind::Heat, a), window).max_rel_err
        })
        .fold(0.0, f64::max)
}

#[test]
fn engine_matches_exact_diagonalization_with_second_order_rate() {
    let scn = scenario(0.5, ParityStrings::Kept);
    let coarse = engine_error(&scn, 25);
    let fine = engine_error(&scn, 50);
    assert!(fine <= 0.02, "relative error {fine}");
    let rate = coarse / fine;
    assert!((3.2..=4.8).contains(&rate), "refinement ratio {rate}");
}

#[test]
fn dense_evolution_conserves_energy_trace_and_purity() {
    let scn = scenario(0.5, ParityStrings::Kept);
    let times: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
    let run = finite_bath_heat(&scn, &times).unwrap();
    assert!(run.energy_drift <= 1e-10);
    assert!(run.trace_drift <= 1e-10);
    assert!(run.purity_drift <= 1e-10);
}

#[test]
fn parity_strings_matter_once_two_paired_sites_couple() {
    let times: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
    let kept = finite_bath_heat(&scenario(0.5, ParityStrings::Kept), &times).unwrap();
    let dropped = finite_bath_heat(&scenario(0.5, ParityStrings::Dropped), &times).unwrap();
    let gap = kept.heat[1].iter().zip(&dropped.heat[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "gap {gap}");
}

#[test]
fn discretization_reproduces_band_weight() {
    let sd = lorentzian(0.7);
    let modes = discretize(&sd, 20, 4.0);
    assert!(modes.iter().all(|m| m.omega > 0.0 && m.omega < 4.0));
    let weight: f64 = modes.iter().map(|m| m.g * m.g).sum();
    // composite Simpson on [0, 4] as the reference; J vanishes at ω ≤ 0, so take the limit from above
    let n = 4000;
    let h = 4.0 / n as f64;
    let mut simpson = sd.eval(f64::MIN_POSITIVE) + sd.eval(4.0);
    for k in 1..n {
        simpson += if k % 2 == 1 { 4.0 } else { 2.0 } * sd.eval(k as f64 * h);
    }
    simpson *= h / 3.0;
    assert!((weight - simpson).abs() < 1e-9 * simpson, "{weight} vs {simpson}");
}

#[test]
fn decoupled_scenario_gives_zero_on_both_routes() {
    let scn = scenario(0.0, ParityStrings::Kept);
    let grid = TimeGrid::build(1.0, 10, 1.0).unwrap();
    let reference = finite_bath_heat(&scn, grid.nodes()).unwrap();
    assert!(reference.heat.iter().flatten().all(|q| q.abs() < 1e-14));
    let ctx = DysonContext::new(&scn.model, &scn.reservoirs, &grid).unwrap();
    let dressed = dress_all(&ctx, &[0.0, 0.0], &SolverConfig::default(), true).unwrap();
    let ops = CouplingOperators::new(&scn.model, &grid);
    let traj = evolve(&ops, &GeneratorKernels::untilted(&dressed.green, -1.0), &grid, &scn.rho_s, &[0.0, 0.0]).unwrap();
    let cur = exact_currents(&ctx, &dressed, &traj, &ops).unwrap();
    assert!(cur.channels.iter().flatten().flatten().all(|x| *x == 0.0));
}

#[test]
fn continuous_reservoirs_are_rejected() {
    let mut scn = scenario(0.5, ParityStrings::Kept);
    scn.reservoirs[0] = reservoir("L", 1.0, 0.0, 0.5, 0);
    assert!(finite_bath_heat(&scn, &[0.0]).is_err());
}
