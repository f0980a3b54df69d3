//! Row-wise Volterra solver for the dressed Green's function pair and the
//! dressed heat, energy and number kernels.
//!
//! Every two-time quantity X(t, τ) is needed only with its first argument
//! at the contour end t = t_i, and equations for different t_i never couple.
//! Each row is an independent affine system x = b + L x over τ ∈ [0, t_i]:
//!
//! ```text
//! L (X^>, X^𝕋̃) = (I^𝕋 X^> − I^> X^𝕋̃,  I^< X^> − I^𝕋̃ X^𝕋̃)
//! [I^Y f](t, τ) = ∫₀^t dv ∫₀^v du f(t, u) σ(u − v) C^Y(v, τ)
//! [K^X f](t, τ) = ∫₀^t dv ∫₀^v du G^X(t, u) σ(u − v) f(v, τ)
//! ```
//!
//! with inhomogeneities (C̃^>, C^𝕋̃) for the Green's function and
//! (𝔠^> − K^<𝔠^>, K^>𝔠^<) for a kernel. Because σ(u − v) = P(u) Q(v), the
//! inner u-integral is a running trapezoid and one application costs O(i²)
//! per row. Ordered components jump at v = τ, where the outer trapezoid is
//! split into one-sided halves. At τ = t the inhomogeneities take their
//! τ → t⁻ limits; with that choice the discrete G^>(t, ·) = ★G^𝕋̃(t, ·)
//! holds to solver tolerance.

use crate::bath::{BathSums, FrequencyRule, KernelKind, Reservoir, Statistics};
use crate::error::{Error, Result};
use crate::linalg::{norm_one, C64, I, ZERO};
use crate::solver::{gmres, norm_inf, picard, Convergence, SolverConfig, SolverMethod};
use crate::system::SystemModel;
use crate::timegrid::TimeGrid;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::io::Write;
use std::sync::Arc;

/// Extra reach of the frequency rules beyond t_max, covering counting
/// fields up to this magnitude without rebuilding.
const TILT_REACH: f64 = 1.0;

/// On uniform grids, rows with at least this many nodes evaluate the outer
/// v-integrals as FFT correlations.
const FFT_MIN_ROW: usize = 32;

/// Lower-triangular two-time table. Row i stores the blocks X(t_i, τ_j) for
/// j = 0..=i, each a row-major D×D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowTable {
    d: usize,
    rows: usize,
    data: Vec<C64>,
}

impl RowTable {
    pub fn zeros(d: usize, rows: usize) -> RowTable {
        RowTable { d, rows, data: vec![ZERO; rows * (rows + 1) / 2 * d * d] }
    }

    #[inline]
    fn offset(&self, i: usize) -> usize {
        i * (i + 1) / 2 * self.d * self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[self.offset(i)..self.offset(i + 1)]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        let (a, b) = (self.offset(i), self.offset(i + 1));
        &mut self.data[a..b]
    }

    pub fn block(&self, i: usize, j: usize) -> &[C64] {
        let dd = self.d * self.d;
        let o = self.offset(i) + j * dd;
        &self.data[o..o + dd]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> C64 {
        self.data[self.offset(i) + (j * self.d + a) * self.d + b]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// Blockwise effective conjugation ★.
    pub fn star(&self, zeta: f64) -> RowTable {
        let d = self.d;
        let mut out = self.clone();
        for (src, dst) in self.data.chunks(d * d).zip(out.data.chunks_mut(d * d)) {
            crate::bath::star_block(src, dst, d, zeta);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }

    pub fn max_abs_diff(&self, other: &RowTable) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "table shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Writes a header line `name rows d` followed by the raw row-major
    /// (re, im) little-endian f64 pairs.
    pub fn write_binary<W: Write>(&self, w: &mut W, name: &str) -> std::io::Result<()> {
        writeln!(w, "{name} {} {}", self.rows, self.d)?;
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }
}

/// The solved pair (X^>, X^𝕋̃).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub greater: RowTable,
    pub anti: RowTable,
}

impl KernelPair {
    fn from_rows(d: usize, rows: Vec<Vec<C64>>) -> KernelPair {
        let n = rows.len();
        let mut greater = RowTable::zeros(d, n);
        let mut anti = RowTable::zeros(d, n);
        for (i, x) in rows.into_iter().enumerate() {
            let half = x.len() / 2;
            greater.row_mut(i).copy_from_slice(&x[..half]);
            anti.row_mut(i).copy_from_slice(&x[half..]);
        }
        KernelPair { greater, anti }
    }

    /// Stacked row (X^>(t_i, ·), X^𝕋̃(t_i, ·)) as used by the row operator.
    pub fn row(&self, i: usize) -> Vec<C64> {
        let mut v = self.greater.row(i).to_vec();
        v.extend_from_slice(self.anti.row(i));
        v
    }
}

/// Solver statistics for one stage of `dress_all`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub stage: String,
    /// Largest per-row operator-application count.
    pub iterations: usize,
    /// Largest per-row final residual.
    pub residual: f64,
}

/// Difference-argument indexing s = t_j − t_l. Uniform grids share one slot
/// per lattice difference; general grids get one slot per ordered pair.
#[derive(Debug, Clone, Copy)]
enum Slots {
    Uniform { n: usize },
    General { n: usize },
}

impl Slots {
    #[inline]
    fn index(self, j: usize, l: usize) -> usize {
        match self {
            Slots::Uniform { n } => j + n - l,
            Slots::General { n } => j * (n + 1) + l,
        }
    }

    fn count(self) -> usize {
        match self {
            Slots::Uniform { n } => 2 * n + 1,
            Slots::General { n } => (n + 1) * (n + 1),
        }
    }

    /// Slot of the negated argument.
    #[inline]
    fn neg(self, slot: usize) -> usize {
        match self {
            Slots::Uniform { n } => 2 * n - slot,
            Slots::General { n } => (slot % (n + 1)) * (n + 1) + slot / (n + 1),
        }
    }
}

/// Per-slot (upper-right, lower-left) entries of a reservoir's 2×2 block.
type Pairs = Vec<[C64; 2]>;

/// Bath-side tables of C at one counting-field vector.
#[derive(Debug, Clone)]
pub struct CouplingTables {
    tilt: Vec<f64>,
    /// χ(v − τ), the v > τ branch of C^𝕋.
    fwd: Vec<Pairs>,
    /// ζχᵀ(τ − v), the v < τ branch of C^𝕋.
    bwd: Vec<Pairs>,
    /// C̃^>(v, τ).
    gt: Vec<Pairs>,
    /// C̃^<(v, τ).
    lt: Vec<Pairs>,
    /// Kernel spectra for FFT correlations (uniform grids only).
    spectra: Vec<SpectralLevel>,
}

/// Component order inside `SpectralLevel::kernels`.
const ORDERED: usize = 0;
const ANTI: usize = 1;
const GREATER: usize = 2;
const LESSER: usize = 3;

/// FFT plans and kernel spectra for one transform length L = 2(H + 1).
/// Kernel segments cover v − τ = (r − H) h for r = 0..=2H; rows with
/// i ≤ H read their correlation at lag H − l without wrap-around.
struct SpectralLevel {
    len: usize,
    half: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// kernels[(component · R + β) · 2 + entry], entry 0 = upper right.
    kernels: Vec<Vec<C64>>,
}

impl std::fmt::Debug for SpectralLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpectralLevel(L = {})", self.len)
    }
}

impl Clone for SpectralLevel {
    fn clone(&self) -> Self {
        SpectralLevel {
            len: self.len,
            half: self.half,
            fwd: Arc::clone(&self.fwd),
            inv: Arc::clone(&self.inv),
            kernels: self.kernels.clone(),
        }
    }
}

impl CouplingTables {
    pub fn tilt(&self) -> &[f64] {
        &self.tilt
    }
}

/// Bare kernel 𝔠^> and 𝔠^< = ★𝔠^> of one reservoir and kind.
#[derive(Debug, Clone)]
pub struct KernelTables {
    reservoir: usize,
    kind: KernelKind,
    gt: Pairs,
    lt: Pairs,
}

/// Everything the row operators need that does not depend on the unknowns.
pub struct DysonContext<'a> {
    model: &'a SystemModel,
    reservoirs: &'a [Reservoir],
    grid: &'a TimeGrid,
    slots: Slots,
    d: usize,
    m: usize,
    /// P(t_k) = C U(t_k), D×2n per node.
    p: Vec<C64>,
    /// Q(t_k) = U(−t_k) Ω Cᵀ, 2n×D per node.
    q: Vec<C64>,
    rules: Vec<FrequencyRule>,
    base: Vec<Vec<BathSums>>,
}

/// Scratch of the system-side contraction: h_j = [∫₀^{v_j} du X(t,u) P(u)] Q(v_j).
struct SystemSide {
    h: Vec<C64>,
    hw: Vec<C64>,
}

impl<'a> DysonContext<'a> {
    pub fn new(model: &'a SystemModel, reservoirs: &'a [Reservoir], grid: &'a TimeGrid) -> Result<DysonContext<'a>> {
        let r = reservoirs.len();
        if r == 0 {
            return Err(Error::InvalidParameter("at least one reservoir is required".into()));
        }
        if model.n_couplings() != 2 * r {
            return Err(Error::Dimension(format!(
                "model has {} couplings but {r} reservoirs need {}",
                model.n_couplings(),
                2 * r
            )));
        }
        let stats = model.stats();
        for res in reservoirs {
            res.validate(stats)?;
        }
        let n = grid.n();
        let slots = if grid.is_uniform() { Slots::Uniform { n } } else { Slots::General { n } };
        let d = model.n_couplings();
        let m = 2 * model.n_modes();
        let mut p = Vec::with_capacity(grid.len() * d * m);
        let mut q = Vec::with_capacity(grid.len() * d * m);
        for &t in grid.nodes() {
            let (pk, qk) = model.sigma_factors(t);
            p.extend(pk.iter());
            q.extend(qk.iter());
        }
        let reach = grid.t_max() + TILT_REACH;
        let rules = reservoirs
            .iter()
            .map(|res| res.rule(stats, reach))
            .collect::<Result<Vec<_>>>()?;
        let mut ctx = DysonContext { model, reservoirs, grid, slots, d, m, p, q, rules, base: Vec::new() };
        ctx.base = ctx.rules.iter().map(|rule| ctx.slot_sums(rule, 0.0)).collect();
        Ok(ctx)
    }

    pub fn model(&self) -> &SystemModel {
        self.model
    }

    pub fn reservoirs(&self) -> &[Reservoir] {
        self.reservoirs
    }

    pub fn grid(&self) -> &TimeGrid {
        self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn zeta(&self) -> f64 {
        self.model.zeta()
    }

    fn stats(&self) -> Statistics {
        self.model.stats()
    }

    fn slot_sums(&self, rule: &FrequencyRule, shift: f64) -> Vec<BathSums> {
        match self.slots {
            Slots::Uniform { n } => {
                let h = self.grid.t_max() / n as f64;
                rule.sums_lattice(shift - h * n as f64, h, 2 * n + 1)
            }
            Slots::General { n } => {
                let t = self.grid.nodes();
                (0..self.slots.count())
                    .into_par_iter()
                    .map(|k| rule.sums(t[k / (n + 1)] - t[k % (n + 1)] + shift))
                    .collect()
            }
        }
    }

    /// Bath tables at counting fields `tilt` (one entry per reservoir).
    pub fn coupling_tables(&self, tilt: &[f64]) -> Result<CouplingTables> {
        if tilt.len() != self.reservoirs.len() {
            return Err(Error::Dimension(format!(
                "tilt vector has {} entries for {} reservoirs",
                tilt.len(),
                self.reservoirs.len()
            )));
        }
        let z = self.zeta();
        let count = self.slots.count();
        let mut out = CouplingTables {
            tilt: tilt.to_vec(),
            fwd: vec![],
            bwd: vec![],
            gt: vec![],
            lt: vec![],
            spectra: vec![],
        };
        for (alpha, res) in self.reservoirs.iter().enumerate() {
            let base = &self.base[alpha];
            let lam = tilt[alpha];
            let shifted_owned;
            let shifted: &[BathSums] = if lam == 0.0 {
                base
            } else {
                let rule = if lam.abs() <= TILT_REACH {
                    None
                } else {
                    Some(res.rule(self.stats(), self.grid.t_max() + lam.abs())?)
                };
                shifted_owned = self.slot_sums(rule.as_ref().unwrap_or(&self.rules[alpha]), lam);
                &shifted_owned
            };
            let ph = (I * res.mu * lam).exp();
            let mut fwd = Vec::with_capacity(count);
            let mut bwd = Vec::with_capacity(count);
            let mut gt = Vec::with_capacity(count);
            let mut lt = Vec::with_capacity(count);
            for k in 0..count {
                let nk = self.slots.neg(k);
                fwd.push([base[k].m0, base[k].p0]);
                bwd.push([base[nk].p0 * z, base[nk].m0 * z]);
                gt.push([ph.conj() * shifted[k].m0, ph * shifted[k].p0]);
                lt.push([ph * shifted[nk].p0 * z, ph.conj() * shifted[nk].m0 * z]);
            }
            out.fwd.push(fwd);
            out.bwd.push(bwd);
            out.gt.push(gt);
            out.lt.push(lt);
        }
        if let Slots::Uniform { n } = self.slots {
            out.spectra = self.build_spectra(&out, n);
        }
        Ok(out)
    }

    fn build_spectra(&self, t: &CouplingTables, n: usize) -> Vec<SpectralLevel> {
        let r = self.reservoirs.len();
        let mut planner = FftPlanner::<f64>::new();
        let mut levels = Vec::new();
        let mut len = (2 * FFT_MIN_ROW).next_power_of_two();
        loop {
            let half = len / 2 - 1;
            let fwd = planner.plan_fft_forward(len);
            let inv = planner.plan_fft_inverse(len);
            let mut kernels = Vec::with_capacity(4 * r * 2);
            for comp in [ORDERED, ANTI, GREATER, LESSER] {
                for beta in 0..r {
                    for entry in 0..2 {
                        let mut buf = vec![ZERO; len];
                        for (rr, z) in buf.iter_mut().enumerate().take(2 * half + 1) {
                            let s = (n + rr) as isize - half as isize;
                            if s < 0 || s > 2 * n as isize {
                                continue;
                            }
                            let s = s as usize;
                            let val = |tab: &Vec<Pairs>| tab[beta][s][entry];
                            *z = match comp {
                                ORDERED | ANTI if s == n => (val(&t.fwd) + val(&t.bwd)) * 0.5,
                                ORDERED if s > n => val(&t.fwd),
                                ORDERED => val(&t.bwd),
                                ANTI if s > n => val(&t.bwd),
                                ANTI => val(&t.fwd),
                                GREATER => val(&t.gt),
                                _ => val(&t.lt),
                            };
                        }
                        fwd.process(&mut buf);
                        kernels.push(buf);
                    }
                }
            }
            levels.push(SpectralLevel { len, half, fwd, inv, kernels });
            if half >= n {
                break;
            }
            len *= 2;
        }
        levels
    }

    /// Bare kernel tables of reservoir `alpha`.
    pub fn kernel_tables(&self, alpha: usize, kind: KernelKind) -> KernelTables {
        let z = self.zeta();
        let mu = self.reservoirs[alpha].mu;
        let mut gt = Vec::with_capacity(self.slots.count());
        let mut lt = Vec::with_capacity(self.slots.count());
        for s in &self.base[alpha] {
            let (m, p) = s.kernel(kind, mu);
            gt.push([m, p]);
            lt.push([p.conj() * z, m.conj() * z]);
        }
        KernelTables { reservoir: alpha, kind, gt, lt }
    }

    fn row_len(&self, i: usize) -> usize {
        (i + 1) * self.d * self.d
    }

    fn system_side(&self, i: usize, x: &[C64]) -> SystemSide {
        let (d, m) = (self.d, self.m);
        let dd = d * d;
        let mut h = vec![ZERO; (i + 1) * dd];
        let mut f = vec![ZERO; d * m];
        let mut g_prev = vec![ZERO; d * m];
        let mut g = vec![ZERO; d * m];
        for j in 0..=i {
            let xj = &x[j * dd..(j + 1) * dd];
            let pj = &self.p[j * d * m..(j + 1) * d * m];
            g.fill(ZERO);
            for a in 0..d {
                for b in 0..d {
                    let s = xj[a * d + b];
                    if s == ZERO {
                        continue;
                    }
                    for c in 0..m {
                        g[a * m + c] += s * pj[b * m + c];
                    }
                }
            }
            if j > 0 {
                let w = 0.5 * self.grid.h(j - 1);
                for k in 0..d * m {
                    f[k] += (g_prev[k] + g[k]) * w;
                }
            }
            let qj = &self.q[j * m * d..(j + 1) * m * d];
            let hj = &mut h[j * dd..(j + 1) * dd];
            for a in 0..d {
                for c in 0..m {
                    let s = f[a * m + c];
                    if s == ZERO {
                        continue;
                    }
                    for b in 0..d {
                        hj[a * d + b] += s * qj[c * d + b];
                    }
                }
            }
            std::mem::swap(&mut g, &mut g_prev);
        }
        let mut hw = h.clone();
        for j in 0..=i {
            let w = self.grid.weight(i, j);
            for z in &mut hw[j * dd..(j + 1) * dd] {
                *z *= w;
            }
        }
        SystemSide { h, hw }
    }

    /// out(τ_l) += sign Σ_j W_j h_j · T(v_j, τ_l) for a table smooth in v − τ.
    fn accumulate_smooth(&self, i: usize, hw: &[C64], tabs: &[(usize, &Pairs)], sign: f64, out: &mut [C64]) {
        let d = self.d;
        let dd = d * d;
        for l in 0..=i {
            let o = &mut out[l * dd..(l + 1) * dd];
            for j in 0..=i {
                let hj = &hw[j * dd..(j + 1) * dd];
                let slot = self.slots.index(j, l);
                for &(beta, tab) in tabs {
                    let [mm, pp] = tab[slot];
                    let (mm, pp) = (mm * sign, pp * sign);
                    let (c0, c1) = (2 * beta, 2 * beta + 1);
                    for a in 0..d {
                        o[a * d + c1] += hj[a * d + c0] * mm;
                        o[a * d + c0] += hj[a * d + c1] * pp;
                    }
                }
            }
        }
    }

    /// Ordered (`anti` = false) or anti-ordered convolution with the
    /// trapezoid split at v = τ.
    fn accumulate_ordered(&self, i: usize, side: &SystemSide, t: &CouplingTables, anti: bool, sign: f64, out: &mut [C64]) {
        let d = self.d;
        let dd = d * d;
        let r = self.reservoirs.len();
        // v > τ uses `late`, v < τ uses `early`
        let (late, early) = if anti { (&t.bwd, &t.fwd) } else { (&t.fwd, &t.bwd) };
        for l in 0..=i {
            let o = &mut out[l * dd..(l + 1) * dd];
            for j in 0..=i {
                let slot = self.slots.index(j, l);
                let (hj, tabs) = if j == l {
                    (&side.h[j * dd..(j + 1) * dd], None)
                } else if j > l {
                    (&side.hw[j * dd..(j + 1) * dd], Some(late))
                } else {
                    (&side.hw[j * dd..(j + 1) * dd], Some(early))
                };
                for beta in 0..r {
                    let [mm, pp] = match tabs {
                        Some(tab) => tab[beta][slot],
                        None => {
                            let right = if l < i { 0.5 * self.grid.h(l) } else { 0.0 };
                            let left = if l > 0 { 0.5 * self.grid.h(l - 1) } else { 0.0 };
                            let a = late[beta][slot];
                            let b = early[beta][slot];
                            [a[0] * right + b[0] * left, a[1] * right + b[1] * left]
                        }
                    };
                    let (mm, pp) = (mm * sign, pp * sign);
                    let (c0, c1) = (2 * beta, 2 * beta + 1);
                    for a in 0..d {
                        o[a * d + c1] += hj[a * d + c0] * mm;
                        o[a * d + c0] += hj[a * d + c1] * pp;
                    }
                }
            }
        }
    }

    fn all_reservoirs<'t>(&self, tabs: &'t [Pairs]) -> Vec<(usize, &'t Pairs)> {
        tabs.iter().enumerate().collect()
    }

    /// out = L x on row i; x and out are stacked (X^>, X^𝕋̃) rows.
    pub fn apply(&self, t: &CouplingTables, i: usize, x: &[C64], out: &mut [C64]) {
        let blk = self.row_len(i);
        assert_eq!(x.len(), 2 * blk, "row {i}: expected {} entries", 2 * blk);
        let (xg, xa) = x.split_at(blk);
        let sg = self.system_side(i, xg);
        let sa = self.system_side(i, xa);
        out.fill(ZERO);
        if i + 1 >= FFT_MIN_ROW {
            if let Some(level) = t.spectra.iter().find(|lv| lv.half >= i) {
                self.apply_spectral(t, level, i, &sg, &sa, out);
                return;
            }
        }
        self.apply_direct(t, i, &sg, &sa, out);
    }

    fn apply_direct(&self, t: &CouplingTables, i: usize, sg: &SystemSide, sa: &SystemSide, out: &mut [C64]) {
        let (og, oa) = out.split_at_mut(self.row_len(i));
        self.accumulate_ordered(i, sg, t, false, 1.0, og);
        self.accumulate_smooth(i, &sa.hw, &self.all_reservoirs(&t.gt), -1.0, og);
        self.accumulate_smooth(i, &sg.hw, &self.all_reservoirs(&t.lt), 1.0, oa);
        self.accumulate_ordered(i, sa, t, true, -1.0, oa);
    }

    /// Same result as `apply_direct` via correlations of length L. The
    /// spectral kernels carry the ordered jump as the mean value at v = τ;
    /// the one-sided diagonal weights are restored afterwards.
    fn apply_spectral(&self, t: &CouplingTables, lv: &SpectralLevel, i: usize, sg: &SystemSide, sa: &SystemSide, out: &mut [C64]) {
        let (d, r, len, half) = (self.d, self.reservoirs.len(), lv.len, lv.half);
        let dd = d * d;
        let blk = self.row_len(i);
        let transform = |hw: &[C64]| -> Vec<Vec<C64>> {
            (0..dd)
                .map(|e| {
                    let mut buf = vec![ZERO; len];
                    for j in 0..=i {
                        buf[j] = hw[j * dd + e];
                    }
                    lv.fwd.process(&mut buf);
                    buf
                })
                .collect()
        };
        let yg = transform(&sg.hw);
        let ya = transform(&sa.hw);
        let scale = 1.0 / len as f64;
        let mut buf = vec![ZERO; len];
        // (output half, first source/kernel, second source/kernel with sign −1)
        let plan = [(0usize, &yg, ORDERED, &ya, GREATER), (1usize, &yg, LESSER, &ya, ANTI)];
        for (target, src1, k1, src2, k2) in plan {
            for a in 0..d {
                for beta in 0..r {
                    // entry 0 (upper right) feeds column 2β+1 from column 2β
                    for (entry, c_out, c_src) in [(0usize, 2 * beta + 1, 2 * beta), (1usize, 2 * beta, 2 * beta + 1)] {
                        let s1 = &src1[a * d + c_src];
                        let s2 = &src2[a * d + c_src];
                        let ka = &lv.kernels[(k1 * r + beta) * 2 + entry];
                        let kb = &lv.kernels[(k2 * r + beta) * 2 + entry];
                        for k in 0..len {
                            let nk = (len - k) % len;
                            buf[k] = s1[nk] * ka[k] - s2[nk] * kb[k];
                        }
                        lv.inv.process(&mut buf);
                        for l in 0..=i {
                            out[target * blk + l * dd + a * d + c_out] += buf[half - l] * scale;
                        }
                    }
                }
            }
        }
        // diagonal: replace W_l·(late + early)/2 by right·late + left·early
        for l in 0..=i {
            let w = self.grid.weight(i, l);
            let right = if l < i { 0.5 * self.grid.h(l) } else { 0.0 };
            let left = if l > 0 { 0.5 * self.grid.h(l - 1) } else { 0.0 };
            let (cr, cl) = (right - 0.5 * w, left - 0.5 * w);
            if cr == 0.0 && cl == 0.0 {
                continue;
            }
            let slot = self.slots.index(l, l);
            for (target, side, late, early, sign) in [(0usize, sg, &t.fwd, &t.bwd, 1.0), (1usize, sa, &t.bwd, &t.fwd, -1.0)] {
                let hl = &side.h[l * dd..(l + 1) * dd];
                let o = &mut out[target * blk + l * dd..target * blk + (l + 1) * dd];
                for beta in 0..r {
                    let (a0, e0) = (late[beta][slot], early[beta][slot]);
                    let mm = (a0[0] * cr + e0[0] * cl) * sign;
                    let pp = (a0[1] * cr + e0[1] * cl) * sign;
                    let (c0, c1) = (2 * beta, 2 * beta + 1);
                    for a in 0..d {
                        o[a * d + c1] += hl[a * d + c0] * mm;
                        o[a * d + c0] += hl[a * d + c1] * pp;
                    }
                }
            }
        }
    }

    /// [K f](t_i, ·) with the Green's-function row `g_row` in the first slot
    /// and f = 𝔠^> (`lesser` = false) or 𝔠^< of `k`.
    pub fn apply_k(&self, i: usize, g_row: &[C64], k: &KernelTables, lesser: bool, out: &mut [C64]) {
        let side = self.system_side(i, g_row);
        let tab = if lesser { &k.lt } else { &k.gt };
        self.accumulate_smooth(i, &side.hw, &[(k.reservoir, tab)], 1.0, out);
    }

    fn fill_block(&self, tabs: &[(usize, &Pairs)], slot: usize, dst: &mut [C64]) {
        let d = self.d;
        for &(beta, tab) in tabs {
            let [mm, pp] = tab[slot];
            dst[2 * beta * d + 2 * beta + 1] += mm;
            dst[(2 * beta + 1) * d + 2 * beta] += pp;
        }
    }

    /// Row i of (C̃^>, C^𝕋̃), the latter at its τ → t⁻ limit on the diagonal.
    pub fn bare_row(&self, t: &CouplingTables, i: usize) -> Vec<C64> {
        let blk = self.row_len(i);
        let dd = self.d * self.d;
        let mut b = vec![ZERO; 2 * blk];
        let gt = self.all_reservoirs(&t.gt);
        let bwd = self.all_reservoirs(&t.bwd);
        for l in 0..=i {
            let slot = self.slots.index(i, l);
            self.fill_block(&gt, slot, &mut b[l * dd..(l + 1) * dd]);
            self.fill_block(&bwd, slot, &mut b[blk + l * dd..blk + (l + 1) * dd]);
        }
        b
    }

    /// Row i of (C̃^<, C^𝕋), the ★-images of `bare_row` at zero tilt.
    pub fn bare_row_conjugate(&self, t: &CouplingTables, i: usize) -> Vec<C64> {
        let blk = self.row_len(i);
        let dd = self.d * self.d;
        let mut b = vec![ZERO; 2 * blk];
        let lt = self.all_reservoirs(&t.lt);
        let fwd = self.all_reservoirs(&t.fwd);
        for l in 0..=i {
            let slot = self.slots.index(i, l);
            self.fill_block(&lt, slot, &mut b[l * dd..(l + 1) * dd]);
            self.fill_block(&fwd, slot, &mut b[blk + l * dd..blk + (l + 1) * dd]);
        }
        b
    }

    /// Row i of (𝔠^>, 0).
    pub fn bare_kernel_row(&self, k: &KernelTables, i: usize) -> Vec<C64> {
        let blk = self.row_len(i);
        let dd = self.d * self.d;
        let mut b = vec![ZERO; 2 * blk];
        for l in 0..=i {
            self.fill_block(&[(k.reservoir, &k.gt)], self.slots.index(i, l), &mut b[l * dd..(l + 1) * dd]);
        }
        b
    }

    /// Kernel inhomogeneity (𝔠^> − K^<𝔠^>, K^>𝔠^<) on row i, with G^< = ★G^>.
    pub fn kernel_rhs(&self, g: &KernelPair, k: &KernelTables, i: usize) -> Vec<C64> {
        let blk = self.row_len(i);
        let mut b = self.bare_kernel_row(k, i);
        let g_gt = g.greater.row(i);
        let g_lt = self.star_row(g_gt);
        let mut tmp = vec![ZERO; blk];
        self.apply_k(i, &g_lt, k, false, &mut tmp);
        for (bb, t) in b[..blk].iter_mut().zip(&tmp) {
            *bb -= t;
        }
        self.apply_k(i, g_gt, k, true, &mut b[blk..]);
        b
    }

    fn star_row(&self, src: &[C64]) -> Vec<C64> {
        let d = self.d;
        let mut out = vec![ZERO; src.len()];
        for (s, o) in src.chunks(d * d).zip(out.chunks_mut(d * d)) {
            crate::bath::star_block(s, o, d, self.zeta());
        }
        out
    }

    /// Max over rows of the residual left when (X^𝕋, X^<) := (★X^𝕋̃, ★X^>)
    /// is substituted into the ordered/lesser kernel equations
    /// x' = b' + L x' with b' = (−K^<𝔠^>, 𝔠^< + K^𝕋𝔠^<).
    pub fn closure_defect(&self, t: &CouplingTables, g: &KernelPair, k: &KernelTables, x: &KernelPair) -> f64 {
        let dd = self.d * self.d;
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let blk = self.row_len(i);
                let mut xc = self.star_row(x.anti.row(i));
                xc.extend(self.star_row(x.greater.row(i)));
                let mut b = vec![ZERO; 2 * blk];
                let mut tmp = vec![ZERO; blk];
                self.apply_k(i, &self.star_row(g.greater.row(i)), k, false, &mut tmp);
                for (bb, v) in b[..blk].iter_mut().zip(&tmp) {
                    *bb -= v;
                }
                self.apply_k(i, &self.star_row(g.anti.row(i)), k, true, &mut b[blk..]);
                for l in 0..=i {
                    let dst = &mut b[blk + l * dd..blk + (l + 1) * dd];
                    self.fill_block(&[(k.reservoir, &k.lt)], self.slots.index(i, l), dst);
                }
                let mut lx = vec![ZERO; 2 * blk];
                self.apply(t, i, &xc, &mut lx);
                xc.iter().zip(&lx).zip(&b).map(|((x, l), b)| (x - b - l).norm()).fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Bare pair (C̃^>, C^𝕋̃) on every row, used by the weak-coupling route.
    pub fn bare_pair(&self, t: &CouplingTables) -> KernelPair {
        KernelPair::from_rows(self.d, (0..self.grid.len()).map(|i| self.bare_row(t, i)).collect())
    }

    /// Bare kernel pair (𝔠^>, 0) on every row.
    pub fn bare_kernel_pair(&self, k: &KernelTables) -> KernelPair {
        KernelPair::from_rows(self.d, (0..self.grid.len()).map(|i| self.bare_kernel_row(k, i)).collect())
    }

    fn damping(&self, cfg: &SolverConfig) -> f64 {
        if let Some(d) = cfg.damping {
            return d;
        }
        let eta = self.reservoirs.iter().map(|r| r.spectral.strength()).fold(0.0, f64::max);
        let sigma = norm_one(&self.model.sigma_matrix(0.0));
        if eta * self.grid.t_max() * sigma > 1.0 {
            0.5
        } else {
            1.0
        }
    }

    /// Solves x = b + L x row by row.
    pub fn solve_rows<B>(&self, t: &CouplingTables, rhs: B, cfg: &SolverConfig, stage: &str) -> Result<(KernelPair, SolveReport)>
    where
        B: Fn(usize) -> Vec<C64> + Sync,
    {
        cfg.validate()?;
        let damping = self.damping(cfg);
        let rows: Vec<(Vec<C64>, Convergence)> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let b = rhs(i);
                let apply = |x: &[C64], out: &mut [C64]| self.apply(t, i, x, out);
                let row_stage = format!("{stage} row {i}");
                match cfg.method {
                    SolverMethod::Gmres => gmres(apply, &b, cfg.krylov_dim, cfg.tol, cfg.max_iter, &row_stage),
                    SolverMethod::Picard => picard(apply, &b, damping, cfg.tol, cfg.max_iter, &row_stage),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let report = SolveReport {
            stage: stage.to_string(),
            iterations: rows.iter().map(|r| r.1.iterations).max().unwrap_or(0),
            residual: rows.iter().map(|r| r.1.residual).fold(0.0, f64::max),
        };
        log::debug!("{stage}: {} iterations, residual {:.3e}", report.iterations, report.residual);
        let pair = KernelPair::from_rows(self.d, rows.into_iter().map(|r| r.0).collect());
        Ok((pair, report))
    }

    /// Dressed Green's function pair at the tilt of `t`.
    pub fn solve_green(&self, t: &CouplingTables, cfg: &SolverConfig) -> Result<(KernelPair, SolveReport)> {
        self.solve_rows(t, |i| self.bare_row(t, i), cfg, "green")
    }

    /// Dressed kernel pair for reservoir/kind `k`, given the dressed GF `g`.
    pub fn solve_kernel(&self, t: &CouplingTables, g: &KernelPair, k: &KernelTables, cfg: &SolverConfig) -> Result<(KernelPair, SolveReport)> {
        let stage = format!("kernel {}{}", k.kind.label(), self.reservoirs[k.reservoir].name);
        self.solve_rows(t, |i| self.kernel_rhs(g, k, i), cfg, &stage)
    }

    /// Max over rows of ‖x − (b + L x)‖∞ for a candidate solution.
    pub fn fixed_point_defect<B>(&self, t: &CouplingTables, x: &KernelPair, rhs: B) -> f64
    where
        B: Fn(usize) -> Vec<C64> + Sync,
    {
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                let mut lx = vec![ZERO; xi.len()];
                self.apply(t, i, &xi, &mut lx);
                let b = rhs(i);
                xi.iter().zip(&lx).zip(&b).map(|((x, l), b)| (x - b - l).norm()).fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Dressed quantities at one counting-field vector.
#[derive(Debug, Clone)]
pub struct Dressed {
    pub tilt: Vec<f64>,
    pub green: KernelPair,
    /// kernels[α][kind as index in KernelKind::ALL]; empty when not requested.
    pub kernels: Vec<Vec<KernelPair>>,
    pub reports: Vec<SolveReport>,
}

impl Dressed {
    pub fn kernel(&self, alpha: usize, kind: KernelKind) -> Option<&KernelPair> {
        let k = KernelKind::ALL.iter().position(|&x| x == kind)?;
        self.kernels.get(alpha)?.get(k)
    }
}

/// Solves the dressed GF and, when `with_kernels`, every reservoir's heat,
/// energy and number kernels at counting fields `tilt`.
pub fn dress_all(ctx: &DysonContext, tilt: &[f64], cfg: &SolverConfig, with_kernels: bool) -> Result<Dressed> {
    let t = ctx.coupling_tables(tilt)?;
    let (green, rep) = ctx.solve_green(&t, cfg)?;
    let mut reports = vec![rep];
    let mut kernels = Vec::new();
    if with_kernels {
        let jobs: Vec<(usize, KernelKind)> = (0..ctx.reservoirs.len())
            .flat_map(|a| KernelKind::ALL.iter().map(move |&k| (a, k)))
            .collect();
        let solved = jobs
            .par_iter()
            .map(|&(a, kind)| ctx.solve_kernel(&t, &green, &ctx.kernel_tables(a, kind), cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut it = solved.into_iter();
        for _ in 0..ctx.reservoirs.len() {
            let mut per = Vec::new();
            for _ in KernelKind::ALL {
                let (pair, rep) = it.next().expect("one solve per job");
                per.push(pair);
                reports.push(rep);
            }
            kernels.push(per);
        }
    }
    Ok(Dressed { tilt: tilt.to_vec(), green, kernels, reports })
}
