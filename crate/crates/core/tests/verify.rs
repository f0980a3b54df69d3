mod common;

use common::*;
use qtransport::bath::{DiscreteMode, Reservoir, SpectralDensity, Statistics};
use qtransport::linalg::{CMat, ONE};
use qtransport::solver::SolverConfig;
use qtransport::system::{InitialState, SystemModel};
use qtransport::timegrid::TimeGrid;
use qtransport::verify::*;

fn scenario(model: SystemModel, reservoirs: Vec<Reservoir>, t_max: f64, n: usize, occ: &[usize]) -> Scenario {
    let rho0 = InitialState::Fock { occupations: occ.to_vec() }.density_matrix(&model).unwrap();
    Scenario { model, reservoirs, grid: TimeGrid::build(t_max, n, 1.0).unwrap(), solver: SolverConfig::default(), rho0 }
}

#[test]
fn single_particle_reference_reproduces_resonant_exchange() {
    let model = SystemModel::from_levels(Statistics::Fermion, &[0.8], &[], &[0], 1).unwrap();
    let res = vec![Reservoir {
        name: "B".into(),
        beta: 1e3,
        mu: 0.0,
        spectral: SpectralDensity::Discrete { modes: vec![DiscreteMode { omega: 0.8, g: 0.3 }] },
        site: 0,
    }];
    let mut rho0 = CMat::zeros((2, 2));
    rho0[[1, 1]] = ONE;
    let times = [0.0, 0.7, 1.9, 3.3];
    let q = single_particle_heat(&model, &res, &rho0, &times).unwrap();
    for (k, t) in times.iter().enumerate() {
        assert!((q[0][k] - 0.8 * (0.3 * t).sin().powi(2)).abs() < 1e-12);
    }
}

#[test]
fn single_level_check_passes() {
    let model = SystemModel::from_levels(Statistics::Fermion, &[0.5, 1.0], &[], &[0, 1], 1).unwrap();
    let rep = single_level(&scenario(model, hot_cold(0.5, 0.2, -0.1), 4.0, 80, &[1, 0])).unwrap();
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn single_level_check_refuses_pairing() {
    assert!(single_level(&scenario(pairing_dimer(), hot_cold(0.5, 0.0, 0.0), 1.0, 10, &[1, 0])).is_err());
}

#[test]
fn finite_bath_check_passes() {
    let rep = finite_bath(&scenario(pairing_dimer(), hot_cold(0.5, 0.0, 0.0), 1.0, 50, &[1, 0])).unwrap();
    assert!(rep.pass, "{rep:?}");
    // three Gauss–Legendre nodes on [0, 4] sit 2√0.6 apart
    assert!((rep.window - std::f64::consts::PI / (2.0 * 0.6f64.sqrt())).abs() < 1e-12);
}

#[test]
fn conjugation_check_passes() {
    let rep = conjugation(&scenario(pairing_dimer(), hot_cold(0.3, 0.2, -0.1), 3.0, 40, &[0, 1])).unwrap();
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn landauer_check_needs_one_level() {
    let sc = scenario(pairing_dimer(), hot_cold(0.01, 0.0, 0.0), 1.0, 10, &[1, 0]);
    assert!(landauer(&sc, None).is_err());
}

#[test]
fn report_serializes_with_the_documented_keys() {
    let rep = VerifyReport { scenario: "x".into(), max_rel_err: 0.5, window: 2.0, pass: false, metrics: Default::default() };
    let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
    for key in ["scenario", "max_rel_err", "window", "pass"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
