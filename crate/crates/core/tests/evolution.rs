mod common;

use common::*;
use qtransport::bath::{KernelKind, Reservoir, Statistics};
use qtransport::dyson::{dress_all, DysonContext};
use qtransport::evolution::*;
use qtransport::linalg::{dagger, expm, trace, CMat, I};
use qtransport::solver::SolverConfig;
use qtransport::system::{FockSpace, InitialState, SystemModel};
use qtransport::timegrid::TimeGrid;
use qtransport::transport::exact_currents;

fn run_exact(model: &SystemModel, res: &[Reservoir], grid: &TimeGrid, occ: &[usize]) -> (StateTrajectory, CouplingOperators) {
    let ctx = DysonContext::new(model, res, grid).unwrap();
    let (k, _) = generator_kernels(&ctx, &vec![0.0; res.len()], EvolutionMode::Exact, &SolverConfig::default()).unwrap();
    let rho0 = InitialState::Fock { occupations: occ.to_vec() }.density_matrix(model).unwrap();
    let ops = CouplingOperators::new(model, grid);
    let traj = evolve(&ops, &k, grid, &rho0, &vec![0.0; res.len()]).unwrap();
    (traj, ops)
}

#[test]
fn uncoupled_state_stays_put_in_interaction_picture() {
    let grid = TimeGrid::build(4.0, 40, 1.0).unwrap();
    let (traj, _) = run_exact(&pairing_dimer(), &hot_cold(0.0, 0.0, 0.0), &grid, &[1, 0]);
    let rho0 = &traj.states[0];
    for rho in &traj.states {
        let diff = (rho - rho0).mapv(|z| z.norm()).iter().cloned().fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }
}

#[test]
fn trace_and_hermiticity_preserved_at_strong_coupling() {
    let grid = TimeGrid::build(5.0, 60, 1.0).unwrap();
    let (traj, _) = run_exact(&pairing_dimer(), &hot_cold(1.0, 0.0, 0.0), &grid, &[0, 1]);
    assert!(traj.max_trace_error() <= 1e-8, "trace error {}", traj.max_trace_error());
    assert!(traj.max_hermiticity_defect() <= 1e-8, "hermiticity {}", traj.max_hermiticity_defect());
}

#[test]
fn particle_number_balances_the_number_currents() {
    let model = SystemModel::from_levels(Statistics::Fermion, &[0.5, 1.0], &[], &[0, 1], 1).unwrap();
    let res = hot_cold(0.5, 0.3, -0.2);
    let grid = TimeGrid::build(4.0, 200, 1.0).unwrap();
    let (traj, ops) = run_exact(&model, &res, &grid, &[1, 0]);
    let ctx = DysonContext::new(&model, &res, &grid).unwrap();
    let dressed = dress_all(&ctx, &[0.0, 0.0], &SolverConfig::default(), true).unwrap();
    let cur = exact_currents(&ctx, &dressed, &traj, &ops).unwrap();
    let occ = traj.occupations(&model, &grid);
    let n_s: Vec<f64> = occ.iter().map(|o| o.iter().sum()).collect();
    let mut worst: f64 = 0.0;
    for i in 1..grid.n() {
        let dn = (n_s[i + 1] - n_s[i - 1]) / (grid.t(i + 1) - grid.t(i - 1));
        let out: f64 = (0..2).map(|a| cur.channel(KernelKind::Number, a)[i]).sum();
        worst = worst.max((dn + out).abs());
    }
    assert!(worst <= 1e-4, "balance defect {worst}");
}

#[test]
fn weak_coupling_defect_scales_quadratically() {
    let grid = TimeGrid::build(4.0, 60, 1.0).unwrap();
    let model = pairing_dimer();
    let rho0 = InitialState::Fock { occupations: vec![1, 0] }.density_matrix(&model).unwrap();
    let ops = CouplingOperators::new(&model, &grid);
    let defect = |eta: f64| {
        let res = hot_cold(eta, 0.0, 0.0);
        let ctx = DysonContext::new(&model, &res, &grid).unwrap();
        let cfg = SolverConfig::default();
        let states = [EvolutionMode::Exact, EvolutionMode::WeakCoupling].map(|mode| {
            let (k, _) = generator_kernels(&ctx, &[0.0, 0.0], mode, &cfg).unwrap();
            evolve(&ops, &k, &grid, &rho0, &[0.0, 0.0]).unwrap()
        });
        // J is linear in η: the state moves at O(η), the exact/weak gap at O(η²)
        let mut worst: f64 = 0.0;
        for (a, b) in states[0].states.iter().zip(&states[1].states) {
            worst = worst.max((a - b).mapv(|z| z.norm()).iter().cloned().fold(0.0, f64::max));
        }
        worst
    };
    let ratio = defect(0.1) / defect(0.05);
    assert!((ratio / 4.0 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn correlators_match_dense_heisenberg_operators() {
    let model = pairing_dimer();
    let grid = TimeGrid::build(2.0, 20, 1.0).unwrap();
    let (traj, ops) = run_exact(&model, &hot_cold(0.3, 0.0, 0.0), &grid, &[1, 0]);
    let fock = FockSpace::for_model(&model);
    let lad = fock.ladder();
    let h = fock.quadratic_hamiltonian(model.eps(), model.delta());
    let heis = |t: f64, mu: usize| {
        let u = expm(&h.mapv(|z| z * (I * t)));
        let a = fock.linear_form(model.coupling(mu), &lad);
        u.dot(&a).dot(&dagger(&u))
    };
    let (i, j) = (10, 4);
    let got = system_correlators(&traj, &ops, i, j).unwrap();
    for mu in 0..4 {
        for nu in 0..4 {
            let want = trace(&heis(grid.t(i), mu).dot(&heis(grid.t(j), nu)).dot(&traj.states[i]));
            assert!((got[[mu, nu]] - want).norm() < 1e-12, "({mu},{nu})");
        }
    }
}

#[test]
fn correlator_order_is_checked() {
    let grid = TimeGrid::build(1.0, 10, 1.0).unwrap();
    let (traj, ops) = run_exact(&pairing_dimer(), &hot_cold(0.1, 0.0, 0.0), &grid, &[1, 0]);
    assert!(system_correlators(&traj, &ops, 2, 3).is_err());
}

#[test]
fn generating_function_is_flat_without_coupling() {
    let model = pairing_dimer();
    let grid = TimeGrid::build(3.0, 30, 1.0).unwrap();
    let res = hot_cold(0.0, 0.0, 0.0);
    let ctx = DysonContext::new(&model, &res, &grid).unwrap();
    let rho0 = InitialState::Fock { occupations: vec![1, 0] }.density_matrix(&model).unwrap();
    let m = mgf_moments_fd(&ctx, &SolverConfig::default(), EvolutionMode::Exact, &rho0, 0, 1e-3).unwrap();
    for k in 0..grid.len() {
        assert!((m.zero[k] - 1.0).norm() < 1e-14);
        assert!((m.plus[k] - 1.0).norm() < 1e-14);
        assert!(m.mean[k].abs() < 1e-10);
    }
}

#[test]
fn wrong_initial_state_dimension_is_rejected() {
    let model = pairing_dimer();
    let grid = TimeGrid::build(1.0, 10, 1.0).unwrap();
    let res = hot_cold(0.1, 0.0, 0.0);
    let ctx = DysonContext::new(&model, &res, &grid).unwrap();
    let (k, _) = generator_kernels(&ctx, &[0.0, 0.0], EvolutionMode::Exact, &SolverConfig::default()).unwrap();
    let ops = CouplingOperators::new(&model, &grid);
    assert!(evolve(&ops, &k, &grid, &CMat::zeros((2, 2)), &[0.0, 0.0]).is_err());
}
