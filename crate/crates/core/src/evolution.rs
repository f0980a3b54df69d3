//! Reduced-state evolution driven by two-time kernels.
//!
//! In the interaction picture the (tilted) state obeys
//!
//! ```text
//! dρ/dt = Σ_μ [ Λ^>_μ ρ A_μ − A_μ Λ^𝕋_μ ρ + ζ A_μ ρ Λ^<_μ − ζ ρ Λ^𝕋̃_μ A_μ ]
//! Λ^X_μ(t) = Σ_ν ∫₀^t dτ X_μν(t, τ) A_ν(τ)
//! ```
//!
//! with X the four Keldysh components of the dressed Green's function
//! (exact mode) or of the bare bath correlator (weak-coupling mode). Only
//! the current state enters, so the memory lives entirely in Λ.

use crate::dyson::{dress_all, DysonContext, KernelPair, RowTable, SolveReport};
use crate::error::{Error, Result};
use crate::linalg::{dagger, expm, hermiticity_defect, trace, CMat, C64, I, ZERO};
use crate::solver::SolverConfig;
use crate::system::{FockSpace, SystemModel};
use crate::timegrid::TimeGrid;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest trace change per step tolerated at zero counting field.
const MAX_TRACE_DRIFT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMode {
    /// Dressed Green's function.
    #[default]
    Exact,
    /// Bare bath correlator in place of the dressed one.
    WeakCoupling,
}

/// The four components (>, 𝕋, <, 𝕋̃) on rows t_i.
#[derive(Debug, Clone)]
pub struct GeneratorKernels {
    pub greater: RowTable,
    pub ordered: RowTable,
    pub lesser: RowTable,
    pub anti: RowTable,
}

impl GeneratorKernels {
    /// Zero counting field: lesser and ordered are ★-images of the pair.
    pub fn untilted(pair: &KernelPair, zeta: f64) -> GeneratorKernels {
        GeneratorKernels {
            greater: pair.greater.clone(),
            ordered: pair.anti.star(zeta),
            lesser: pair.greater.star(zeta),
            anti: pair.anti.clone(),
        }
    }

    /// Counting field λ from the pairs solved at +λ and −λ:
    /// X^<(λ) = ★X^>(−λ) and X^𝕋(λ) = ★X^𝕋̃(−λ).
    pub fn tilted(plus: &KernelPair, minus: &KernelPair, zeta: f64) -> GeneratorKernels {
        GeneratorKernels {
            greater: plus.greater.clone(),
            ordered: minus.anti.star(zeta),
            lesser: minus.greater.star(zeta),
            anti: plus.anti.clone(),
        }
    }
}

/// Pair (X^>, X^𝕋̃) at counting field `tilt` for the chosen mode.
pub fn kernel_pair(ctx: &DysonContext, tilt: &[f64], mode: EvolutionMode, cfg: &SolverConfig) -> Result<(KernelPair, Vec<SolveReport>)> {
    match mode {
        EvolutionMode::Exact => {
            let d = dress_all(ctx, tilt, cfg, false)?;
            Ok((d.green, d.reports))
        }
        EvolutionMode::WeakCoupling => Ok((ctx.bare_pair(&ctx.coupling_tables(tilt)?), vec![])),
    }
}

/// Generator kernels at `tilt`; a nonzero tilt costs a second solve at −tilt.
pub fn generator_kernels(ctx: &DysonContext, tilt: &[f64], mode: EvolutionMode, cfg: &SolverConfig) -> Result<(GeneratorKernels, Vec<SolveReport>)> {
    let zeta = ctx.model().zeta();
    let (plus, mut reports) = kernel_pair(ctx, tilt, mode, cfg)?;
    if tilt.iter().all(|&l| l == 0.0) {
        return Ok((GeneratorKernels::untilted(&plus, zeta), reports));
    }
    let neg: Vec<f64> = tilt.iter().map(|l| -l).collect();
    let (minus, more) = kernel_pair(ctx, &neg, mode, cfg)?;
    reports.extend(more);
    Ok((GeneratorKernels::tilted(&plus, &minus, zeta), reports))
}

/// Dense interaction-picture coupling operators A_μ(t_i) = Σ_l P(t_i)_μl Ψ_l.
#[derive(Debug, Clone)]
pub struct CouplingOperators {
    zeta: f64,
    ladder: Vec<CMat>,
    coeffs: Vec<CMat>,
}

impl CouplingOperators {
    pub fn new(model: &SystemModel, grid: &TimeGrid) -> CouplingOperators {
        let c = model.coupling_matrix();
        let coeffs = grid.nodes().par_iter().map(|&t| c.dot(&model.heisenberg_coeffs(t))).collect();
        CouplingOperators { zeta: model.zeta(), ladder: FockSpace::for_model(model).ladder(), coeffs }
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn n_couplings(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.ladder[0].nrows()
    }

    /// Coefficients P(t_i), one row per coupling operator.
    pub fn coeffs(&self, i: usize) -> &CMat {
        &self.coeffs[i]
    }

    pub fn ladder(&self) -> &[CMat] {
        &self.ladder
    }

    fn combine(&self, x: &[C64]) -> CMat {
        let d = self.dim();
        let mut out = CMat::zeros((d, d));
        for (c, op) in x.iter().zip(&self.ladder) {
            if *c != ZERO {
                out.scaled_add(*c, op);
            }
        }
        out
    }

    pub fn operator(&self, i: usize, mu: usize) -> CMat {
        self.combine(self.coeffs[i].row(mu).as_slice().expect("row-major"))
    }

    pub fn operators(&self, i: usize) -> Vec<CMat> {
        (0..self.n_couplings()).map(|mu| self.operator(i, mu)).collect()
    }
}

/// Generator at one node, with the ordered terms pre-summed.
struct Generator {
    zeta: f64,
    a: Vec<CMat>,
    gt: Vec<CMat>,
    lt: Vec<CMat>,
    /// Σ_μ A_μ Λ^𝕋_μ
    left: CMat,
    /// Σ_μ Λ^𝕋̃_μ A_μ
    right: CMat,
}

impl Generator {
    fn at(ops: &CouplingOperators, k: &GeneratorKernels, grid: &TimeGrid, i: usize) -> Generator {
        let d = ops.n_couplings();
        let m = ops.ladder.len();
        let w = grid.weights(i);
        // Λ^X_μ as coefficients over Ψ
        let lambda = |tab: &RowTable| -> Vec<CMat> {
            let mut c = vec![vec![ZERO; m]; d];
            for (j, &wj) in w.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                let blk = tab.block(i, j);
                let p = &ops.coeffs[j];
                for (mu, cm) in c.iter_mut().enumerate() {
                    for nu in 0..d {
                        let x = blk[mu * d + nu] * wj;
                        if x == ZERO {
                            continue;
                        }
                        for (l, cl) in cm.iter_mut().enumerate() {
                            *cl += x * p[[nu, l]];
                        }
                    }
                }
            }
            c.iter().map(|cm| ops.combine(cm)).collect()
        };
        let a = ops.operators(i);
        let gt = lambda(&k.greater);
        let lt = lambda(&k.lesser);
        let ord = lambda(&k.ordered);
        let anti = lambda(&k.anti);
        let dim = ops.dim();
        let mut left = CMat::zeros((dim, dim));
        let mut right = CMat::zeros((dim, dim));
        for mu in 0..d {
            left += &a[mu].dot(&ord[mu]);
            right += &anti[mu].dot(&a[mu]);
        }
        Generator { zeta: ops.zeta, a, gt, lt, left, right }
    }

    fn apply(&self, rho: &CMat) -> CMat {
        let mut out = -self.left.dot(rho) - rho.dot(&self.right) * self.zeta;
        for ((a, gt), lt) in self.a.iter().zip(&self.gt).zip(&self.lt) {
            out += &gt.dot(rho).dot(a);
            out += &(a.dot(rho).dot(lt) * self.zeta);
        }
        out
    }
}

/// Interaction-picture state on every grid node.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<CMat>,
    pub tilt: Vec<f64>,
    /// Tr ρ(t_i); the generating function at nonzero tilt.
    pub norm_series: Vec<C64>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_trace_error(&self) -> f64 {
        self.norm_series.iter().map(|t| (t - 1.0).norm()).fold(0.0, f64::max)
    }

    pub fn max_hermiticity_defect(&self) -> f64 {
        self.states.iter().map(hermiticity_defect).fold(0.0, f64::max)
    }

    /// Schrödinger-picture states e^{−iHt} ρ e^{iHt}.
    pub fn schrodinger(&self, model: &SystemModel, grid: &TimeGrid) -> Vec<CMat> {
        let h = FockSpace::for_model(model).quadratic_hamiltonian(model.eps(), model.delta());
        self.states
            .par_iter()
            .zip(grid.nodes())
            .map(|(rho, &t)| {
                let u = expm(&h.mapv(|z| z * (-I * t)));
                u.dot(rho).dot(&dagger(&u))
            })
            .collect()
    }

    /// Mode occupations ⟨a_k†a_k⟩ per node in the Schrödinger picture.
    pub fn occupations(&self, model: &SystemModel, grid: &TimeGrid) -> Vec<Vec<f64>> {
        let fock = FockSpace::for_model(model);
        let lad = fock.ladder();
        let n = fock.n_modes();
        let nums: Vec<CMat> = (0..n).map(|k| lad[n + k].dot(&lad[k])).collect();
        self.schrodinger(model, grid)
            .iter()
            .map(|rho| nums.iter().map(|nk| trace(&nk.dot(rho)).re).collect())
            .collect()
    }
}

/// Heun integration of the (tilted) state equation on the grid nodes.
pub fn evolve(ops: &CouplingOperators, kernels: &GeneratorKernels, grid: &TimeGrid, rho0: &CMat, tilt: &[f64]) -> Result<StateTrajectory> {
    let dim = ops.dim();
    if rho0.dim() != (dim, dim) {
        return Err(Error::Dimension(format!("initial state is {:?}, Fock space has dimension {dim}", rho0.dim())));
    }
    if kernels.greater.rows() != grid.len() || kernels.greater.d() != ops.n_couplings() {
        return Err(Error::Dimension("kernel tables do not match the grid or the couplings".into()));
    }
    let physical = tilt.iter().all(|&l| l == 0.0);
    let mut states = Vec::with_capacity(grid.len());
    let mut norm_series = Vec::with_capacity(grid.len());
    states.push(rho0.clone());
    norm_series.push(trace(rho0));
    let mut gen = Generator::at(ops, kernels, grid, 0);
    for i in 0..grid.n() {
        let h = grid.h(i);
        let rho = &states[i];
        let k1 = gen.apply(rho);
        let predictor = rho + &(&k1 * h);
        let next = Generator::at(ops, kernels, grid, i + 1);
        let k2 = next.apply(&predictor);
        let new = rho + &((k1 + k2) * (0.5 * h));
        let tr = trace(&new);
        if physical {
            let drift = (tr - norm_series[i]).norm();
            if drift > MAX_TRACE_DRIFT {
                return Err(Error::StepRejected { node: i + 1, drift });
            }
        }
        states.push(new);
        norm_series.push(tr);
        gen = next;
    }
    Ok(StateTrajectory { states, tilt: tilt.to_vec(), norm_series })
}

/// ⟨A_μ(t_i) A_ν(t_j)⟩ = Tr[A_μ(t_i) A_ν(t_j) ρ(t_i)] for j ≤ i.
pub fn system_correlators(traj: &StateTrajectory, ops: &CouplingOperators, i: usize, j: usize) -> Result<CMat> {
    if j > i || i >= traj.len() {
        return Err(Error::InvalidParameter(format!("correlator needs j ≤ i < {}, got ({i}, {j})", traj.len())));
    }
    let d = ops.n_couplings();
    let ai = ops.operators(i);
    let aj = ops.operators(j);
    let rho = &traj.states[i];
    let right: Vec<CMat> = aj.iter().map(|a| a.dot(rho)).collect();
    Ok(CMat::from_shape_fn((d, d), |(mu, nu)| trace(&ai[mu].dot(&right[nu]))))
}

/// Generating-function samples at λ_α ∈ {−ε, 0, +ε} and the resulting moments.
#[derive(Debug, Clone)]
pub struct MgfMoments {
    pub alpha: usize,
    pub eps: f64,
    pub minus: Vec<C64>,
    pub zero: Vec<C64>,
    pub plus: Vec<C64>,
    /// ⟨Q_α⟩ = i(ℳ(+ε) − ℳ(−ε))/(2ε)
    pub mean: Vec<f64>,
    /// ⟨Q_α²⟩ = −(ℳ(+ε) − 2ℳ(0) + ℳ(−ε))/ε²
    pub second: Vec<f64>,
}

/// Heat moments of reservoir `alpha` by central differences of the
/// generating function.
pub fn mgf_moments_fd(
    ctx: &DysonContext,
    cfg: &SolverConfig,
    mode: EvolutionMode,
    rho0: &CMat,
    alpha: usize,
    eps: f64,
) -> Result<MgfMoments> {
    let r = ctx.reservoirs().len();
    if alpha >= r {
        return Err(Error::InvalidParameter(format!("reservoir index {alpha} out of range")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("counting-field step must be positive, got {eps}")));
    }
    let zeta = ctx.model().zeta();
    let grid = ctx.grid();
    let mut tilt = vec![0.0; r];
    let zero_tilt = tilt.clone();
    tilt[alpha] = eps;
    let neg: Vec<f64> = tilt.iter().map(|l| -l).collect();
    let (z, (p, m)) = rayon::join(
        || kernel_pair(ctx, &zero_tilt, mode, cfg),
        || rayon::join(|| kernel_pair(ctx, &tilt, mode, cfg), || kernel_pair(ctx, &neg, mode, cfg)),
    );
    let (z, p, m) = (z?.0, p?.0, m?.0);
    let ops = CouplingOperators::new(ctx.model(), grid);
    let jobs = [
        (GeneratorKernels::untilted(&z, zeta), zero_tilt),
        (GeneratorKernels::tilted(&p, &m, zeta), tilt.clone()),
        (GeneratorKernels::tilted(&m, &p, zeta), neg),
    ];
    let trajs = jobs
        .par_iter()
        .map(|(k, l)| evolve(&ops, k, grid, rho0, l))
        .collect::<Result<Vec<_>>>()?;
    let (zero, plus, minus) = (trajs[0].norm_series.clone(), trajs[1].norm_series.clone(), trajs[2].norm_series.clone());
    for (i, m0) in zero.iter().enumerate() {
        let drift = (m0 - 1.0).norm();
        if drift > 1e-8 {
            return Err(Error::StepRejected { node: i, drift });
        }
    }
    let mut warned = false;
    let mut mean = Vec::with_capacity(zero.len());
    let mut second = Vec::with_capacity(zero.len());
    for ((mp, m0), mm) in plus.iter().zip(&zero).zip(&minus) {
        let diff = mp - mm;
        if !warned && diff.norm() > 0.0 && diff.norm() < 1e-6 * m0.norm() {
            log::warn!("generating-function difference cancels more than 6 digits at ε = {eps}");
            warned = true;
        }
        mean.push((I * diff / (2.0 * eps)).re);
        second.push(-((mp - m0 * 2.0 + mm) / (eps * eps)).re);
    }
    Ok(MgfMoments { alpha, eps, minus, zero, plus, mean, second })
}
