#![allow(dead_code)]

use qtransport::bath::{Reservoir, SpectralDensity, Statistics};
use qtransport::system::SystemModel;

/// Two fermionic sites with ε = (0.5, 1.0) and pairing 0.7, site k coupled
/// to reservoir k.
pub fn pairing_dimer() -> SystemModel {
    SystemModel::from_levels(Statistics::Fermion, &[0.5, 1.0], &[(0, 1, 0.7)], &[0, 1], 1).unwrap()
}

pub fn lorentzian(eta: f64) -> SpectralDensity {
    SpectralDensity::Lorentzian { eta, gamma: 1.0, omega_c: 10.0 }
}

pub fn reservoir(name: &str, beta: f64, mu: f64, eta: f64, site: usize) -> Reservoir {
    Reservoir { name: name.into(), beta, mu, spectral: lorentzian(eta), site }
}

/// Hot left bath (β = 1) and cold right bath (β = 10).
pub fn hot_cold(eta: f64, mu_l: f64, mu_r: f64) -> Vec<Reservoir> {
    vec![reservoir("L", 1.0, mu_l, eta, 0), reservoir("R", 10.0, mu_r, eta, 1)]
}
