//! Exact-diagonalization reference for small discrete environments.
//!
//! The system and every bath mode share one dense fermionic Fock space.
//! Bit k of a basis index is the occupation of mode k, system modes first.
//! Heat is read off directly as ⟨Q_α⟩(t) = Tr[Ω_α(ρ(t) − ρ(0))] with
//! Ω_α = H_α − μ_α N_α.

use crate::bath::{occupation, DiscreteMode, Reservoir, SpectralDensity, Statistics};
use crate::error::{Error, Result};
use crate::linalg::{dagger, expm, trace, trace_product, CMat, C64, I, ONE, ZERO};
use crate::quadrature::gauss_legendre;
use crate::system::{validate_density_matrix, SystemModel};
use serde::{Deserialize, Serialize};

/// Largest joint mode count handled by the dense build.
pub const MAX_JOINT_MODES: usize = 10;
/// Largest mode count per reservoir.
pub const MAX_BATH_MODES: usize = 4;

/// How the Jordan–Wigner strings between subsystems are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityStrings {
    /// System and reservoirs as commuting tensor factors, coupling A ⊗ B† + A† ⊗ B.
    /// Agrees with `Kept` for a single system mode only.
    Dropped,
    /// One fermionic Fock space, coupling B†A + A†B.
    #[default]
    Kept,
}

#[derive(Debug, Clone)]
pub struct FiniteBathScenario {
    pub model: SystemModel,
    pub reservoirs: Vec<Reservoir>,
    /// Initial system state on the model's Fock space.
    pub rho_s: CMat,
    pub parity: ParityStrings,
}

fn modes_of(r: &Reservoir) -> Result<&[DiscreteMode]> {
    match &r.spectral {
        SpectralDensity::Discrete { modes } => Ok(modes),
        SpectralDensity::Lorentzian { .. } => Err(Error::InvalidParameter(format!("reservoir {}: the dense reference needs discrete modes", r.name))),
    }
}

impl FiniteBathScenario {
    pub fn validate(&self) -> Result<()> {
        if self.model.stats() != Statistics::Fermion {
            return Err(Error::InvalidParameter("the dense reference is fermionic only".into()));
        }
        if self.model.n_couplings() != 2 * self.reservoirs.len() {
            return Err(Error::Dimension("one coupling pair per reservoir is required".into()));
        }
        let mut total = self.model.n_modes();
        for r in &self.reservoirs {
            r.validate(Statistics::Fermion)?;
            let m = modes_of(r)?;
            if m.len() > MAX_BATH_MODES {
                return Err(Error::InvalidParameter(format!("reservoir {} has {} modes, at most {MAX_BATH_MODES} allowed", r.name, m.len())));
            }
            total += m.len();
        }
        if total > MAX_JOINT_MODES {
            return Err(Error::InvalidParameter(format!("{total} joint modes exceed the dense limit of {MAX_JOINT_MODES}")));
        }
        let d = self.model.fock_dim();
        if self.rho_s.dim() != (d, d) {
            return Err(Error::Dimension(format!("system state must be {d}x{d}")));
        }
        validate_density_matrix(&self.rho_s)
    }

    /// Half the shortest bath recurrence time, π / (smallest mode spacing).
    pub fn recurrence_window(&self) -> f64 {
        let mut spacing = f64::INFINITY;
        for r in &self.reservoirs {
            if let Ok(m) = modes_of(r) {
                let mut w: Vec<f64> = m.iter().map(|x| x.omega).collect();
                w.sort_by(f64::total_cmp);
                for p in w.windows(2) {
                    spacing = spacing.min(p[1] - p[0]);
                }
            }
        }
        std::f64::consts::PI / spacing
    }
}

/// Star discretization: Gauss–Legendre nodes on [0, upper] with g_l² = w_l J(ω_l).
pub fn discretize(spectral: &SpectralDensity, n_modes: usize, upper: f64) -> Vec<DiscreteMode> {
    let (x, w) = gauss_legendre(n_modes);
    x.iter()
        .zip(&w)
        .map(|(x, w)| {
            let omega = 0.5 * upper * (x + 1.0);
            let weight = 0.5 * upper * w;
            DiscreteMode { omega, g: (weight * spectral.eval(omega)).sqrt() }
        })
        .collect()
}

/// Dense operators of the joint space.
struct JointSpace {
    dim: usize,
    /// ladder over system modes (a_1..a_n, a_1†..a_n†)
    sys: Vec<CMat>,
    /// annihilators per reservoir and mode
    bath: Vec<Vec<CMat>>,
}

impl JointSpace {
    fn new(n_sys: usize, bath_sizes: &[usize], parity: ParityStrings) -> JointSpace {
        let n_total = n_sys + bath_sizes.iter().sum::<usize>();
        let dim = 1usize << n_total;
        // bits covered by the string of mode k
        let string = |k: usize, first: usize| -> usize {
            let below = (1usize << k) - 1;
            match parity {
                ParityStrings::Kept => below,
                ParityStrings::Dropped => below & !((1usize << first) - 1),
            }
        };
        let annihilation = |k: usize, first: usize| -> CMat {
            let mask = string(k, first);
            let mut a = CMat::zeros((dim, dim));
            for idx in 0..dim {
                if (idx >> k) & 1 == 1 {
                    let sign = if (idx & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    a[[idx ^ (1 << k), idx]] = C64::from(sign);
                }
            }
            a
        };
        let a: Vec<CMat> = (0..n_sys).map(|k| annihilation(k, 0)).collect();
        let sys: Vec<CMat> = a.iter().cloned().chain(a.iter().map(dagger)).collect();
        let mut bath = Vec::new();
        let mut first = n_sys;
        for &len in bath_sizes {
            bath.push((first..first + len).map(|k| annihilation(k, first)).collect());
            first += len;
        }
        JointSpace { dim, sys, bath }
    }

    fn linear(&self, coeffs: &[C64]) -> CMat {
        let mut out = CMat::zeros((self.dim, self.dim));
        for (c, op) in coeffs.iter().zip(&self.sys) {
            if *c != ZERO {
                out.scaled_add(*c, op);
            }
        }
        out
    }
}

/// Dense reference run on a list of times.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub times: Vec<f64>,
    /// heat[α][k] = ⟨Q_α⟩(times[k])
    pub heat: Vec<Vec<f64>>,
    /// Schrödinger-picture reduced system states.
    pub system_states: Vec<CMat>,
    /// Largest relative drift of Tr[Hρ].
    pub energy_drift: f64,
    pub trace_drift: f64,
    pub purity_drift: f64,
}

/// Unitary evolution of system plus discrete reservoirs, heat by the
/// energy change of each reservoir.
pub fn finite_bath_heat(scn: &FiniteBathScenario, times: &[f64]) -> Result<OracleRun> {
    scn.validate()?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("oracle times must be non-negative and sorted".into()));
    }
    let model = &scn.model;
    let n_sys = model.n_modes();
    let sizes: Vec<usize> = scn.reservoirs.iter().map(|r| modes_of(r).map(|m| m.len())).collect::<Result<_>>()?;
    let js = JointSpace::new(n_sys, &sizes, scn.parity);
    let dim = js.dim;

    let mut h = CMat::zeros((dim, dim));
    let eps = model.eps();
    let delta = model.delta();
    let n = n_sys;
    for k in 0..n {
        for l in 0..n {
            if eps[[k, l]] != ZERO {
                h.scaled_add(eps[[k, l]], &js.sys[n + k].dot(&js.sys[l]));
            }
            if delta[[k, l]] != ZERO {
                let pair = js.sys[n + k].dot(&js.sys[n + l]);
                h.scaled_add(delta[[k, l]] * 0.5, &pair);
                h.scaled_add(delta[[k, l]].conj() * 0.5, &dagger(&pair));
            }
        }
    }
    let mut omegas = Vec::new();
    for (alpha, r) in scn.reservoirs.iter().enumerate() {
        let modes = modes_of(r)?;
        let mut om = CMat::zeros((dim, dim));
        let mut b = CMat::zeros((dim, dim));
        for (m, c) in modes.iter().zip(&js.bath[alpha]) {
            let num = dagger(c).dot(c);
            om.scaled_add(C64::from(m.omega - r.mu), &num);
            h.scaled_add(C64::from(m.omega), &num);
            b.scaled_add(C64::from(m.g), c);
        }
        let a = js.linear(model.coupling(2 * alpha));
        let ad = js.linear(model.coupling(2 * alpha + 1));
        let bd = dagger(&b);
        match scn.parity {
            ParityStrings::Dropped => {
                h += &a.dot(&bd);
                h += &ad.dot(&b);
            }
            ParityStrings::Kept => {
                h += &bd.dot(&a);
                h += &ad.dot(&b);
            }
        }
        omegas.push(om);
    }

    // ρ(0) = ρ_S ⊗ Π_α Gibbs_α; bath Gibbs states are diagonal in the Fock basis
    let sys_dim = 1usize << n_sys;
    let n_bath = sizes.iter().sum::<usize>();
    let mut pops = Vec::with_capacity(n_bath);
    for r in &scn.reservoirs {
        for m in modes_of(r)? {
            pops.push(occupation(m.omega, r.beta, r.mu, Statistics::Fermion)?);
        }
    }
    let bath_weight = |b: usize| -> f64 { pops.iter().enumerate().map(|(q, f)| if (b >> q) & 1 == 1 { *f } else { 1.0 - f }).product() };
    let mut rho = CMat::zeros((dim, dim));
    for b in 0..(1usize << n_bath) {
        let w = bath_weight(b);
        for s in 0..sys_dim {
            for s2 in 0..sys_dim {
                rho[[s + (b << n_sys), s2 + (b << n_sys)]] = scn.rho_s[[s, s2]] * w;
            }
        }
    }
    let rho0 = rho.clone();
    let e0 = trace_product(h.view(), rho.view()).re;
    let p0 = trace_product(rho.view(), rho.view()).re;
    let q0: Vec<f64> = omegas.iter().map(|o| trace_product(o.view(), rho0.view()).re).collect();

    let mut heat = vec![Vec::with_capacity(times.len()); scn.reservoirs.len()];
    let mut system_states = Vec::with_capacity(times.len());
    let (mut energy_drift, mut trace_drift, mut purity_drift) = (0.0f64, 0.0f64, 0.0f64);
    let mut t_now = 0.0;
    let mut cached: Option<(f64, CMat, CMat)> = None;
    for &t in times {
        let dt = t - t_now;
        if dt > 0.0 {
            let reuse = matches!(&cached, Some((d, _, _)) if (d - dt).abs() <= 1e-14 * dt.max(1.0));
            if !reuse {
                let u = expm(&h.mapv(|z| z * (-I * dt)));
                let ud = dagger(&u);
                cached = Some((dt, u, ud));
            }
            let (_, u, ud) = cached.as_ref().expect("propagator cached");
            rho = u.dot(&rho).dot(ud);
            t_now = t;
        }
        for (alpha, o) in omegas.iter().enumerate() {
            heat[alpha].push(trace_product(o.view(), rho.view()).re - q0[alpha]);
        }
        let mut rs = CMat::zeros((sys_dim, sys_dim));
        for b in 0..(1usize << n_bath) {
            for s in 0..sys_dim {
                for s2 in 0..sys_dim {
                    rs[[s, s2]] += rho[[s + (b << n_sys), s2 + (b << n_sys)]];
                }
            }
        }
        system_states.push(rs);
        energy_drift = energy_drift.max((trace_product(h.view(), rho.view()).re - e0).abs() / e0.abs().max(1.0));
        trace_drift = trace_drift.max((trace(&rho) - ONE).norm());
        purity_drift = purity_drift.max((trace_product(rho.view(), rho.view()).re - p0).abs());
    }
    Ok(OracleRun { times: times.to_vec(), heat, system_states, energy_drift, trace_drift, purity_drift })
}

/// Agreement of an engine heat series with the reference on a common window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Largest |engine − reference| of the cumulative heat.
    pub max_abs_err: f64,
    /// `max_abs_err` over the largest |reference| in the window.
    pub max_rel_err: f64,
    /// Same measures for the currents, reference differentiated centrally.
    pub current_abs_err: f64,
    pub current_rel_err: f64,
    pub window: f64,
}

/// Compares cumulative heat and currents sampled on common `times`,
/// restricted to t ≤ `window`.
pub fn compare_currents(times: &[f64], reference_heat: &[f64], engine_heat: &[f64], engine_current: &[f64], window: f64) -> ComparisonReport {
    let upto = times.iter().take_while(|&&t| t <= window).count();
    let mut abs_err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..upto {
        abs_err = abs_err.max((engine_heat[k] - reference_heat[k]).abs());
        scale = scale.max(reference_heat[k].abs());
    }
    let mut cur_err: f64 = 0.0;
    let mut cur_scale: f64 = 0.0;
    for k in 1..upto.saturating_sub(1) {
        let d = (reference_heat[k + 1] - reference_heat[k - 1]) / (times[k + 1] - times[k - 1]);
        cur_err = cur_err.max((engine_current[k] - d).abs());
        cur_scale = cur_scale.max(d.abs());
    }
    let rel = |e: f64, s: f64| if s > 0.0 { e / s } else if e == 0.0 { 0.0 } else { f64::INFINITY };
    ComparisonReport {
        max_abs_err: abs_err,
        max_rel_err: rel(abs_err, scale),
        current_abs_err: cur_err,
        current_rel_err: rel(cur_err, cur_scale),
        window,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(eps: f64, omega0: f64, g: f64, beta: f64, parity: ParityStrings) -> FiniteBathScenario {
        let model = SystemModel::from_levels(Statistics::Fermion, &[eps], &[], &[0], 1).unwrap();
        let mut rho_s = CMat::zeros((2, 2));
        rho_s[[1, 1]] = ONE;
        FiniteBathScenario {
            model,
            reservoirs: vec![Reservoir {
                name: "B".into(),
                beta,
                mu: 0.0,
                spectral: SpectralDensity::Discrete { modes: vec![DiscreteMode { omega: omega0, g }] },
                site: 0,
            }],
            rho_s,
            parity,
        }
    }

    #[test]
    fn resonant_exchange_matches_two_level_rotation() {
        let (eps, g) = (0.8, 0.3);
        let times: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
        let run = finite_bath_heat(&single(eps, eps, g, 1e3, ParityStrings::Dropped), &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            // single-particle block [[ε, g], [g, ε]]: the bath amplitude is −i sin(gt)
            let want = eps * (g * t).sin().powi(2);
            assert!((run.heat[0][k] - want).abs() < 1e-10, "t={t}");
        }
        assert!(run.energy_drift < 1e-10 && run.trace_drift < 1e-10 && run.purity_drift < 1e-10);
    }

    #[test]
    fn detuned_exchange_matches_single_particle_block() {
        let (eps, w0, g) = (0.5, 1.3, 0.4);
        let times: Vec<f64> = (0..=20).map(|k| 0.4 * k as f64).collect();
        let run = finite_bath_heat(&single(eps, w0, g, 1e3, ParityStrings::Kept), &times).unwrap();
        let rabi = (0.25 * (w0 - eps).powi(2) + g * g).sqrt();
        for (k, &t) in times.iter().enumerate() {
            let p = (g / rabi).powi(2) * (rabi * t).sin().powi(2);
            assert!((run.heat[0][k] - w0 * p).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn parity_strings_do_not_change_single_mode_heat() {
        let times: Vec<f64> = (0..=30).map(|k| 0.3 * k as f64).collect();
        let a = finite_bath_heat(&single(0.7, 1.1, 0.35, 2.0, ParityStrings::Dropped), &times).unwrap();
        let b = finite_bath_heat(&single(0.7, 1.1, 0.35, 2.0, ParityStrings::Kept), &times).unwrap();
        for (x, y) in a.heat[0].iter().zip(&b.heat[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decoupled_reservoirs_exchange_nothing() {
        let run = finite_bath_heat(&single(0.7, 1.1, 0.0, 2.0, ParityStrings::Dropped), &[0.0, 1.0, 2.5]).unwrap();
        assert!(run.heat[0].iter().all(|q| q.abs() < 1e-14));
    }

    #[test]
    fn too_many_modes_are_rejected() {
        let mut scn = single(0.7, 1.1, 0.1, 2.0, ParityStrings::Dropped);
        scn.reservoirs[0].spectral = SpectralDensity::Discrete { modes: vec![DiscreteMode { omega: 1.0, g: 0.1 }; 5] };
        assert!(finite_bath_heat(&scn, &[0.0]).is_err());
    }

    #[test]
    fn identical_series_compare_to_zero() {
        let t = [0.0, 0.5, 1.0, 1.5];
        let q = [0.0, 0.1, 0.3, 0.2];
        let r = compare_currents(&t, &q, &q, &[0.0, 0.3, 0.1, 0.0], 2.0);
        assert_eq!(r.max_abs_err, 0.0);
        assert_eq!(r.current_abs_err, 0.0);
    }
}
