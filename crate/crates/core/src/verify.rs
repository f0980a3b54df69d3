//! End-to-end self-checks of the engine against independent references.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bath::{occupation, KernelKind, Reservoir, SpectralDensity, Statistics};
use crate::dyson::{dress_all, DysonContext, KernelPair};
use crate::error::{Error, Result};
use crate::evolution::{evolve, generator_kernels, CouplingOperators, EvolutionMode, GeneratorKernels};
use crate::linalg::{expm, trace, CMat, C64, I, ZERO};
use crate::oracle::{compare_currents, discretize, finite_bath_heat, FiniteBathScenario, ParityStrings};
use crate::solver::SolverConfig;
use crate::system::{FockSpace, SystemModel};
use crate::timegrid::TimeGrid;
use crate::transport::{exact_currents, landauer_steady, wc_currents, LandauerSpec, LevelPopulation};

/// Engine-vs-reference tolerance of the cumulative-heat checks.
pub const HEAT_REL_TOL: f64 = 0.02;
/// Landauer plateau tolerance.
pub const LANDAUER_REL_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub max_rel_err: f64,
    pub window: f64,
    pub pass: bool,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// Everything a check needs besides its own reference.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: SystemModel,
    pub reservoirs: Vec<Reservoir>,
    pub grid: TimeGrid,
    pub solver: SolverConfig,
    pub rho0: CMat,
}

/// Replaces Lorentzian reservoirs by `n_modes` Gauss–Legendre modes on [0, 4Γ].
pub fn discretized(reservoirs: &[Reservoir], n_modes: usize) -> Vec<Reservoir> {
    reservoirs
        .iter()
        .map(|r| match &r.spectral {
            SpectralDensity::Lorentzian { gamma, .. } => {
                let modes = discretize(&r.spectral, n_modes, 4.0 * gamma);
                Reservoir { spectral: SpectralDensity::Discrete { modes }, ..r.clone() }
            }
            SpectralDensity::Discrete { .. } => r.clone(),
        })
        .collect()
}

fn exact_heat(sc: &Scenario, reservoirs: &[Reservoir], grid: &TimeGrid) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let ctx = DysonContext::new(&sc.model, reservoirs, grid)?;
    let tilt = vec![0.0; reservoirs.len()];
    let dressed = dress_all(&ctx, &tilt, &sc.solver, true)?;
    let ops = CouplingOperators::new(&sc.model, grid);
    let traj = evolve(&ops, &GeneratorKernels::untilted(&dressed.green, sc.model.zeta()), grid, &sc.rho0, &tilt)?;
    let cur = exact_currents(&ctx, &dressed, &traj, &ops)?;
    let q = (0..reservoirs.len()).map(|a| cur.cumulative(grid, KernelKind::Heat, a)).collect();
    let i = (0..reservoirs.len()).map(|a| cur.channel(KernelKind::Heat, a).to_vec()).collect();
    Ok((q, i))
}

/// Heat into each discrete reservoir for a number-conserving model, from the
/// single-particle propagator of the full quadratic Hamiltonian.
pub fn single_particle_heat(model: &SystemModel, reservoirs: &[Reservoir], rho0: &CMat, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if model.stats() != Statistics::Fermion || model.delta().iter().any(|z| *z != ZERO) {
        return Err(Error::InvalidParameter("single-particle reference needs a fermionic model without pairing".into()));
    }
    let n = model.n_modes();
    let mut omegas = Vec::new();
    let mut owner = Vec::new();
    let mut couplings = Vec::new();
    let mut f = Vec::new();
    for (a, r) in reservoirs.iter().enumerate() {
        let SpectralDensity::Discrete { modes } = &r.spectral else {
            return Err(Error::InvalidParameter(format!("reservoir {} is not discrete", r.name)));
        };
        for m in modes {
            omegas.push(m.omega);
            owner.push(a);
            couplings.push((r.site, m.g));
            f.push(occupation(m.omega, r.beta, r.mu, Statistics::Fermion)?);
        }
    }
    let dim = n + omegas.len();
    let mut h = CMat::zeros((dim, dim));
    h.slice_mut(ndarray::s![..n, ..n]).assign(model.eps());
    for (l, (&w, &(site, g))) in omegas.iter().zip(&couplings).enumerate() {
        h[[n + l, n + l]] = C64::from(w);
        h[[site, n + l]] += C64::from(g);
        h[[n + l, site]] += C64::from(g);
    }
    // C_kl = ⟨a_k† a_l⟩, block diagonal at t = 0
    let fock = FockSpace::for_model(model);
    let lad = fock.ladder();
    let mut c0 = CMat::zeros((dim, dim));
    for k in 0..n {
        for l in 0..n {
            c0[[k, l]] = trace(&lad[n + k].dot(&lad[l]).dot(rho0));
        }
    }
    for (l, fl) in f.iter().enumerate() {
        c0[[n + l, n + l]] = C64::from(*fl);
    }
    let mut heat = vec![Vec::with_capacity(times.len()); reservoirs.len()];
    for &t in times {
        let u = expm(&h.mapv(|z| z * (-I * t)));
        let c = u.mapv(|z| z.conj()).dot(&c0).dot(&u.t());
        let mut q = vec![0.0; reservoirs.len()];
        for l in 0..omegas.len() {
            let r = &reservoirs[owner[l]];
            q[owner[l]] += (omegas[l] - r.mu) * (c[[n + l, n + l]].re - f[l]);
        }
        for (a, qa) in q.into_iter().enumerate() {
            heat[a].push(qa);
        }
    }
    Ok(heat)
}

fn heat_report(name: &str, grid: &TimeGrid, window: f64, reference: &[Vec<f64>], q: &[Vec<f64>], i: &[Vec<f64>]) -> (f64, BTreeMap<String, f64>) {
    let mut worst: f64 = 0.0;
    let mut metrics = BTreeMap::new();
    for a in 0..reference.len() {
        let rep = compare_currents(grid.nodes(), &reference[a], &q[a], &i[a], window);
        metrics.insert(format!("{name}_rel_err_{a}"), rep.max_rel_err);
        metrics.insert(format!("{name}_current_rel_err_{a}"), rep.current_rel_err);
        worst = worst.max(rep.max_rel_err);
    }
    (worst, metrics)
}

/// Number-conserving model against its single-particle solution on the full grid.
pub fn single_level(sc: &Scenario) -> Result<VerifyReport> {
    let res = discretized(&sc.reservoirs, 4);
    let reference = single_particle_heat(&sc.model, &res, &sc.rho0, sc.grid.nodes())?;
    let (q, i) = exact_heat(sc, &res, &sc.grid)?;
    let window = sc.grid.t_max();
    let (err, metrics) = heat_report("heat", &sc.grid, window, &reference, &q, &i);
    Ok(VerifyReport { scenario: "single-level".into(), max_rel_err: err, window, pass: err <= HEAT_REL_TOL, metrics })
}

/// Dense exact diagonalization of system plus three modes per reservoir, up to
/// half the recurrence time, on the scenario's node count and on half of it.
pub fn finite_bath(sc: &Scenario) -> Result<VerifyReport> {
    let res = discretized(&sc.reservoirs, 3);
    let scn = FiniteBathScenario { model: sc.model.clone(), reservoirs: res.clone(), rho_s: sc.rho0.clone(), parity: ParityStrings::Kept };
    let window = scn.recurrence_window();
    let mut errs = Vec::new();
    let mut metrics = BTreeMap::new();
    for n in [sc.grid.n() / 2, sc.grid.n()] {
        let grid = TimeGrid::build(window, n, sc.grid.stretch())?;
        let reference = finite_bath_heat(&scn, grid.nodes())?.heat;
        let (q, i) = exact_heat(sc, &res, &grid)?;
        let (err, m) = heat_report(&format!("n{n}"), &grid, window, &reference, &q, &i);
        metrics.extend(m);
        errs.push(err);
    }
    let rate = errs[0] / errs[1];
    metrics.insert("refinement_ratio".into(), rate);
    let pass = errs[1] <= HEAT_REL_TOL && (3.2..=4.8).contains(&rate);
    Ok(VerifyReport { scenario: "finite-bath".into(), max_rel_err: errs[1], window, pass, metrics })
}

fn kernel_scale(x: &KernelPair) -> f64 {
    1.0 + x.greater.max_abs().max(x.anti.max_abs())
}

/// Conjugate components rebuilt by ★ close the four-component equations, the
/// returned pairs are fixed points, and ★ is an involution.
pub fn conjugation(sc: &Scenario) -> Result<VerifyReport> {
    let ctx = DysonContext::new(&sc.model, &sc.reservoirs, &sc.grid)?;
    let tilt = vec![0.0; sc.reservoirs.len()];
    let t = ctx.coupling_tables(&tilt)?;
    let dressed = dress_all(&ctx, &tilt, &sc.solver, true)?;
    let zeta = sc.model.zeta();
    let mut metrics = BTreeMap::new();
    let mut worst_rel: f64 = 0.0;
    let mut worst_tol: f64 = 0.0;
    let g = &dressed.green;
    let fp = ctx.fixed_point_defect(&t, g, |i| ctx.bare_row(&t, i)) / kernel_scale(g);
    metrics.insert("green_fixed_point".into(), fp);
    worst_rel = worst_rel.max(fp);
    for (a, r) in sc.reservoirs.iter().enumerate() {
        for kind in KernelKind::ALL {
            let k = ctx.kernel_tables(a, kind);
            let x = dressed.kernel(a, kind).expect("kernels requested");
            let closure = ctx.closure_defect(&t, g, &k, x) / kernel_scale(x);
            let fixed = ctx.fixed_point_defect(&t, x, |i| ctx.kernel_rhs(g, &k, i)) / kernel_scale(x);
            metrics.insert(format!("closure_{}_{}", r.name, kind.label()), closure);
            metrics.insert(format!("fixed_point_{}_{}", r.name, kind.label()), fixed);
            worst_rel = worst_rel.max(closure).max(fixed);
        }
    }
    let twice = g.greater.star(zeta).star(zeta);
    let involution = twice.max_abs_diff(&g.greater);
    metrics.insert("star_involution".into(), involution);
    worst_tol = worst_tol.max(worst_rel / sc.solver.tol);
    metrics.insert("worst_over_tol".into(), worst_tol);
    let pass = worst_tol <= 5.0 && involution == 0.0;
    Ok(VerifyReport { scenario: "conjugation".into(), max_rel_err: worst_rel, window: sc.grid.t_max(), pass, metrics })
}

/// Weak-coupling single level: the late-time current into each reservoir
/// against the Landauer integral with linewidth γ = π Σ_α J_α(ω₀).
///
/// Without an explicit preset the level population is the simulated value at
/// the last node.
pub fn landauer(sc: &Scenario, population: Option<LevelPopulation>) -> Result<VerifyReport> {
    if sc.model.n_modes() != 1 || sc.model.stats() != Statistics::Fermion {
        return Err(Error::InvalidParameter("the Landauer check needs a single fermionic level".into()));
    }
    let omega0 = sc.model.eps()[[0, 0]].re;
    let tilt = vec![0.0; sc.reservoirs.len()];
    let ctx = DysonContext::new(&sc.model, &sc.reservoirs, &sc.grid)?;
    let (k, _) = generator_kernels(&ctx, &tilt, EvolutionMode::WeakCoupling, &sc.solver)?;
    let ops = CouplingOperators::new(&sc.model, &sc.grid);
    let traj = evolve(&ops, &k, &sc.grid, &sc.rho0, &tilt)?;
    let cur = wc_currents(&ctx, &traj, &ops)?;
    let last = sc.grid.n();
    let f0 = traj.occupations(&sc.model, &sc.grid)[last][0];
    let gamma = PI * sc.reservoirs.iter().map(|r| r.spectral.eval(omega0)).sum::<f64>();
    let population = population.unwrap_or(LevelPopulation::Constant { value: f0 });
    let mut metrics = BTreeMap::from([("plateau_population".to_string(), f0), ("gamma".to_string(), gamma)]);
    let mut worst: f64 = 0.0;
    // drift over the last tenth of the window measures how flat the plateau is
    let tail = sc.grid.nodes().iter().position(|&t| t >= 0.9 * sc.grid.t_max()).unwrap_or(last);
    for (a, r) in sc.reservoirs.iter().enumerate() {
        let spec = LandauerSpec { omega0, gamma, population: population.clone(), reservoirs: sc.reservoirs.clone(), target: a };
        let want = landauer_steady(&spec)?;
        let series = cur.channel(KernelKind::Heat, a);
        let got = series[last];
        let rel = (got - want).abs() / want.abs();
        metrics.insert(format!("landauer_{}", r.name), want);
        metrics.insert(format!("current_{}", r.name), got);
        metrics.insert(format!("plateau_drift_{}", r.name), (series[last] - series[tail]).abs() / got.abs());
        worst = worst.max(rel);
    }
    Ok(VerifyReport { scenario: "landauer".into(), max_rel_err: worst, window: sc.grid.t_max(), pass: worst <= LANDAUER_REL_TOL, metrics })
}

