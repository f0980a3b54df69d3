//! Heat, energy and particle currents into each reservoir.
//!
//! The transport equation reads
//!
//! ```text
//! I(t) = 2 Re ∫₀^t dτ Σ_μν [𝔤^>_μν(t, τ) − 𝔤^𝕋_μν(t, τ)] ⟨A_μ(t) A_ν(τ)⟩_t
//! ```
//!
//! with 𝔤^𝕋 = ★𝔤^𝕋̃. The weak-coupling current uses the bare pair (𝔠^>, 0),
//! whose ordered part vanishes. A Landauer integral gives the steady-state
//! reference for a single broadened level.

use crate::bath::{occupation, KernelKind, Reservoir, SpectralDensity, Statistics};
use crate::dyson::{Dressed, DysonContext, KernelPair};
use crate::error::{Error, Result};
use crate::evolution::{CouplingOperators, StateTrajectory};
use crate::linalg::{trace, CMat, C64, ZERO};
use crate::quadrature::{composite, gauss_legendre};
use crate::timegrid::TimeGrid;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One current channel from a kernel pair (X^>, X^𝕋̃) and a state trajectory.
pub fn assemble_current(kernel: &KernelPair, traj: &StateTrajectory, ops: &CouplingOperators, grid: &TimeGrid) -> Result<Vec<f64>> {
    let d = ops.n_couplings();
    if kernel.greater.d() != d || kernel.greater.rows() != grid.len() || traj.len() != grid.len() {
        return Err(Error::Dimension("kernel, trajectory and grid sizes disagree".into()));
    }
    let zeta = ops.zeta();
    let ordered = kernel.anti.star(zeta);
    let m = ops.ladder().len();
    let out = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            // S_μl = Tr[A_μ(t_i) Ψ_l ρ(t_i)]
            let rho = &traj.states[i];
            let a = ops.operators(i);
            let psi_rho: Vec<CMat> = ops.ladder().iter().map(|p| p.dot(rho)).collect();
            let s = CMat::from_shape_fn((d, m), |(mu, l)| trace(&a[mu].dot(&psi_rho[l])));
            let mut acc = ZERO;
            for (j, w) in grid.weights(i).into_iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let g = kernel.greater.block(i, j);
                let t = ordered.block(i, j);
                let p = ops.coeffs(j);
                for mu in 0..d {
                    for nu in 0..d {
                        let k = g[mu * d + nu] - t[mu * d + nu];
                        if k == ZERO {
                            continue;
                        }
                        let corr: C64 = (0..m).map(|l| p[[nu, l]] * s[[mu, l]]).sum();
                        acc += k * corr * w;
                    }
                }
            }
            2.0 * acc.re
        })
        .collect();
    Ok(out)
}

/// Currents into every reservoir, in heat/energy/number channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSeries {
    pub t: Vec<f64>,
    pub names: Vec<String>,
    pub betas: Vec<f64>,
    pub mus: Vec<f64>,
    /// channels[kind index in KernelKind::ALL][reservoir][node]
    pub channels: Vec<Vec<Vec<f64>>>,
}

impl CurrentSeries {
    pub fn channel(&self, kind: KernelKind, alpha: usize) -> &[f64] {
        let k = KernelKind::ALL.iter().position(|&x| x == kind).expect("known kind");
        &self.channels[k][alpha]
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// I_Q^(R) − I_Q^(L) when exactly two reservoirs named L and R exist.
    pub fn left_to_right(&self) -> Option<Vec<f64>> {
        if self.names.len() != 2 {
            return None;
        }
        let (l, r) = (self.index_of("L")?, self.index_of("R")?);
        let (ql, qr) = (self.channel(KernelKind::Heat, l), self.channel(KernelKind::Heat, r));
        Some(qr.iter().zip(ql).map(|(r, l)| r - l).collect())
    }

    /// I_Q^(L→R)/(T_L − T_R); NaN when the temperatures coincide.
    pub fn conductance(&self) -> Option<Vec<f64>> {
        let lr = self.left_to_right()?;
        let (l, r) = (self.index_of("L")?, self.index_of("R")?);
        let dt = 1.0 / self.betas[l] - 1.0 / self.betas[r];
        if dt == 0.0 {
            log::warn!("equal reservoir temperatures: conductance column is NaN");
            return Some(vec![f64::NAN; lr.len()]);
        }
        Some(lr.iter().map(|x| x / dt).collect())
    }

    /// Cumulative ∫₀^t I dt of one channel.
    pub fn cumulative(&self, grid: &TimeGrid, kind: KernelKind, alpha: usize) -> Vec<f64> {
        grid.cumulative(self.channel(kind, alpha))
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for kind in KernelKind::ALL {
            for n in &self.names {
                h.push(format!("I_{}_{}", kind.label(), n));
            }
        }
        if self.left_to_right().is_some() {
            h.push("I_Q_LtoR".into());
            h.push("C_Q".into());
        }
        h
    }

    /// CSV with 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        let lr = self.left_to_right();
        let cq = self.conductance();
        for (i, t) in self.t.iter().enumerate() {
            let mut row = vec![fmt17(*t)];
            for per in &self.channels {
                for ch in per {
                    row.push(fmt17(ch[i]));
                }
            }
            if let (Some(lr), Some(cq)) = (&lr, &cq) {
                row.push(fmt17(lr[i]));
                row.push(fmt17(cq[i]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn series_from(ctx: &DysonContext, channels: Vec<Vec<Vec<f64>>>) -> CurrentSeries {
    let res = ctx.reservoirs();
    CurrentSeries {
        t: ctx.grid().nodes().to_vec(),
        names: res.iter().map(|r| r.name.clone()).collect(),
        betas: res.iter().map(|r| r.beta).collect(),
        mus: res.iter().map(|r| r.mu).collect(),
        channels,
    }
}

/// Exact currents from dressed kernels and the exact trajectory.
pub fn exact_currents(ctx: &DysonContext, dressed: &Dressed, traj: &StateTrajectory, ops: &CouplingOperators) -> Result<CurrentSeries> {
    let r = ctx.reservoirs().len();
    let mut channels = Vec::with_capacity(KernelKind::ALL.len());
    for kind in KernelKind::ALL {
        let mut per = Vec::with_capacity(r);
        for alpha in 0..r {
            let k = dressed
                .kernel(alpha, kind)
                .ok_or_else(|| Error::InvalidParameter(format!("dressed {} kernel of reservoir {alpha} missing", kind.label())))?;
            per.push(assemble_current(k, traj, ops, ctx.grid())?);
        }
        channels.push(per);
    }
    Ok(series_from(ctx, channels))
}

/// Weak-coupling currents from bare kernels and a weak-coupling trajectory.
pub fn wc_currents(ctx: &DysonContext, traj: &StateTrajectory, ops: &CouplingOperators) -> Result<CurrentSeries> {
    let r = ctx.reservoirs().len();
    let mut channels = Vec::with_capacity(KernelKind::ALL.len());
    for kind in KernelKind::ALL {
        let mut per = Vec::with_capacity(r);
        for alpha in 0..r {
            let bare = ctx.bare_kernel_pair(&ctx.kernel_tables(alpha, kind));
            per.push(assemble_current(&bare, traj, ops, ctx.grid())?);
        }
        channels.push(per);
    }
    Ok(series_from(ctx, channels))
}

/// Steady population of the broadened level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelPopulation {
    /// f₀(ω) ≡ value.
    Constant { value: f64 },
    /// f₀(ω) = Σ_β 𝒯_β f_β / Σ_β 𝒯_β over all listed reservoirs.
    FermiMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandauerSpec {
    pub omega0: f64,
    /// Broadening γ of the level.
    pub gamma: f64,
    pub population: LevelPopulation,
    pub reservoirs: Vec<Reservoir>,
    /// Reservoir receiving the current.
    #[serde(default)]
    pub target: usize,
}

/// 𝒯(ω) = 2γJ(ω)/((ω − ω₀)² + γ²).
pub fn transmission(res: &Reservoir, omega0: f64, gamma: f64, omega: f64) -> f64 {
    // written so that 𝒯(ω₀) = 2J(ω₀)/γ holds bit for bit
    let x = (omega - omega0) / gamma;
    2.0 * res.spectral.eval(omega) / gamma / (1.0 + x * x)
}

impl LandauerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.target >= self.reservoirs.len() {
            return Err(Error::InvalidParameter(format!("target {} out of range", self.target)));
        }
        if let LevelPopulation::Constant { value } = self.population {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!("fermionic population {value} outside [0, 1]")));
            }
        }
        for r in &self.reservoirs {
            r.validate(Statistics::Fermion)?;
            if !matches!(r.spectral, SpectralDensity::Lorentzian { .. }) {
                return Err(Error::InvalidParameter(format!("reservoir {}: the Landauer integral needs a continuous spectrum", r.name)));
            }
        }
        Ok(())
    }

    /// f₀(ω) of the declared preset.
    pub fn population_at(&self, omega: f64) -> Result<f64> {
        match self.population {
            LevelPopulation::Constant { value } => Ok(value),
            LevelPopulation::FermiMixture => {
                let mut num = 0.0;
                let mut den = 0.0;
                for r in &self.reservoirs {
                    let w = transmission(r, self.omega0, self.gamma, omega);
                    num += w * occupation(omega, r.beta, r.mu, Statistics::Fermion)?;
                    den += w;
                }
                Ok(if den > 0.0 { num / den } else { 0.0 })
            }
        }
    }
}

/// ∫₀^∞ dω (ω − μ_α) 𝒯_α(ω) [f₀(ω) − f_α(ω)] with the preset population.
pub fn landauer_steady(spec: &LandauerSpec) -> Result<f64> {
    spec.validate()?;
    landauer_integral(spec, |w| spec.population_at(w))
}

/// Same integral with a caller-supplied population f₀(ω).
pub fn landauer_steady_with<F>(spec: &LandauerSpec, f0: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    spec.validate()?;
    landauer_integral(spec, |w| Ok(f0(w)))
}

fn landauer_integral<F>(spec: &LandauerSpec, f0: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let target = &spec.reservoirs[spec.target];
    let w_max = target.omega_max();
    // panel breaks at the resonance and at the Fermi steps
    let mut cuts = vec![0.0, w_max];
    for k in [1.0, 4.0, 16.0, 64.0] {
        cuts.push(spec.omega0 - k * spec.gamma);
        cuts.push(spec.omega0 + k * spec.gamma);
    }
    for r in &spec.reservoirs {
        for k in [-8.0, -2.0, 2.0, 8.0] {
            cuts.push(r.mu + k / r.beta);
        }
    }
    cuts.retain(|c| (0.0..=w_max).contains(c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let gl = gauss_legendre(16);
    // (integral, scale without the population cancellation)
    let eval = |panels: usize| -> Result<(f64, f64)> {
        let (mut acc, mut mag) = (0.0, 0.0);
        for win in cuts.windows(2) {
            let (x, w) = composite(win[0], win[1], panels, &gl);
            for (&x, w) in x.iter().zip(&w) {
                let f = occupation(x, target.beta, target.mu, Statistics::Fermion)?;
                let p = f0(x)?;
                let base = w * (x - target.mu) * transmission(target, spec.omega0, spec.gamma, x);
                acc += base * (p - f);
                mag += base.abs() * (p.abs() + f);
            }
        }
        Ok((acc, mag))
    };
    let mut panels = 4;
    let (mut prev, _) = eval(panels)?;
    let mut diff = f64::INFINITY;
    for _ in 0..12 {
        panels *= 2;
        let (next, mag) = eval(panels)?;
        diff = (next - prev).abs();
        if diff <= 1e-11 * mag {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNonConvergence { residual: diff })
}
