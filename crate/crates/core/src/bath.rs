//! Thermal quadratic reservoirs: occupations, spectral densities, the
//! physical correlation block χ(s), the bare heat/energy/number kernels and
//! the tilted Keldysh components of the reservoir Green's function.
//!
//! For a reservoir with spectral density J on ω ∈ (0, ∞):
//!
//! ```text
//! χ⁻(s) = ∫ J f e^{+iωs} dω          χ⁺(s) = ∫ J (1 + ζ f) e^{−iωs} dω
//! χ(s)  = [[0, χ⁻(s)], [χ⁺(s), 0]]
//! ```
//!
//! The bare heat kernel is 𝔠⁻ = −∫(ω−μ)J f e^{iωs}, 𝔠⁺ = ∫(ω−μ)J(1+ζf)e^{−iωs};
//! the energy kernel replaces ω−μ by ω and the number kernel is −σ_z χ.
//! All of them are sums of four frequency moments, so one quadrature rule
//! and one pass over its nodes serves every kernel at a given s.

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64, I, ZERO};
use crate::quadrature::{composite, gauss_legendre};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::RwLock;

/// Absolute tail threshold used to choose ω_max = ω_c ln(η/ε).
const TAIL_EPS: f64 = 1e-14;
/// Relative agreement required between successive panel doublings.
const QUAD_REL_TOL: f64 = 1e-9;
const GL_ORDER: usize = 8;
const MAX_DOUBLINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    Boson,
    Fermion,
}

impl Statistics {
    /// ζ = +1 for bosons, −1 for fermions.
    pub fn zeta(self) -> f64 {
        match self {
            Statistics::Boson => 1.0,
            Statistics::Fermion => -1.0,
        }
    }
}

/// f(ω) = 1/(e^{β(ω−μ)} − ζ).
pub fn occupation(omega: f64, beta: f64, mu: f64, stats: Statistics) -> Result<f64> {
    let x = beta * (omega - mu);
    match stats {
        Statistics::Fermion => {
            // stable for both signs of x
            if x > 0.0 {
                let e = (-x).exp();
                Ok(e / (1.0 + e))
            } else {
                Ok(1.0 / (1.0 + x.exp()))
            }
        }
        Statistics::Boson => {
            if x <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "bosonic occupation requires β(ω−μ) > 0, got {x}"
                )));
            }
            Ok(1.0 / x.exp_m1())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteMode {
    pub omega: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpectralDensity {
    /// J(ω) = (η/π) Γ/(ω² + Γ²) e^{−ω/ω_c} on ω > 0.
    Lorentzian { eta: f64, gamma: f64, omega_c: f64 },
    /// J(ω) = Σ_l |g_l|² δ(ω − ω_l).
    Discrete { modes: Vec<DiscreteMode> },
}

impl SpectralDensity {
    /// Pointwise J(ω) for continuous densities; zero for discrete ones.
    pub fn eval(&self, omega: f64) -> f64 {
        match *self {
            SpectralDensity::Lorentzian { eta, gamma, omega_c } => {
                if omega <= 0.0 {
                    return 0.0;
                }
                eta / PI * gamma / (omega * omega + gamma * gamma) * (-omega / omega_c).exp()
            }
            SpectralDensity::Discrete { .. } => 0.0,
        }
    }

    /// Returns a copy with all couplings scaled by `s` (η → s²η, g → s g).
    pub fn scaled_coupling(&self, s: f64) -> SpectralDensity {
        match self {
            SpectralDensity::Lorentzian { eta, gamma, omega_c } => SpectralDensity::Lorentzian {
                eta: eta * s * s,
                gamma: *gamma,
                omega_c: *omega_c,
            },
            SpectralDensity::Discrete { modes } => SpectralDensity::Discrete {
                modes: modes
                    .iter()
                    .map(|m| DiscreteMode { omega: m.omega, g: m.g * s })
                    .collect(),
            },
        }
    }

    /// Coupling strength scale: η for Lorentzian, Σ|g|² for discrete.
    pub fn strength(&self) -> f64 {
        match self {
            SpectralDensity::Lorentzian { eta, .. } => *eta,
            SpectralDensity::Discrete { modes } => modes.iter().map(|m| m.g * m.g).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reservoir {
    pub name: String,
    pub beta: f64,
    #[serde(default)]
    pub mu: f64,
    pub spectral: SpectralDensity,
    /// System mode the reservoir couples to through a_k ⊗ B† + a_k† ⊗ B.
    pub site: usize,
}

impl Reservoir {
    pub fn validate(&self, stats: Statistics) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("reservoir {}: beta must be positive", self.name)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("reservoir {}: mu must be finite", self.name)));
        }
        match &self.spectral {
            SpectralDensity::Lorentzian { eta, gamma, omega_c } => {
                if !(*eta >= 0.0 && *gamma > 0.0 && *omega_c > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "reservoir {}: Lorentzian needs eta >= 0, gamma > 0, omega_c > 0",
                        self.name
                    )));
                }
                if *omega_c < 5.0 * gamma {
                    log::warn!(
                        "reservoir {}: omega_c = {omega_c} is below 5 gamma; the cutoff distorts the Lorentzian",
                        self.name
                    );
                }
                if stats == Statistics::Boson && self.mu >= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "reservoir {}: bosonic chemical potential must lie below the band edge 0",
                        self.name
                    )));
                }
            }
            SpectralDensity::Discrete { modes } => {
                if modes.is_empty() {
                    return Err(Error::InvalidParameter(format!("reservoir {}: no discrete modes", self.name)));
                }
                if modes.iter().any(|m| !(m.omega.is_finite() && m.g.is_finite())) {
                    return Err(Error::InvalidParameter(format!("reservoir {}: non-finite mode", self.name)));
                }
                if stats == Statistics::Boson {
                    let min = modes.iter().map(|m| m.omega).fold(f64::INFINITY, f64::min);
                    if self.mu >= min {
                        return Err(Error::InvalidParameter(format!(
                            "reservoir {}: bosonic chemical potential must lie below the lowest mode",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Upper frequency limit for continuous densities.
    pub fn omega_max(&self) -> f64 {
        match self.spectral {
            SpectralDensity::Lorentzian { eta, omega_c, .. } => {
                let raw = omega_c * (eta / TAIL_EPS).ln();
                raw.clamp(omega_c, 50.0 * omega_c)
            }
            SpectralDensity::Discrete { ref modes } => modes.iter().map(|m| m.omega).fold(0.0, f64::max),
        }
    }

    /// Frequency rule accurate for every |s| ≤ `s_max`.
    pub fn rule(&self, stats: Statistics, s_max: f64) -> Result<FrequencyRule> {
        match &self.spectral {
            SpectralDensity::Discrete { modes } => {
                let mut r = FrequencyRule::with_capacity(modes.len());
                for m in modes {
                    let f = occupation(m.omega, self.beta, self.mu, stats)?;
                    let g2 = m.g * m.g;
                    r.push(m.omega, g2 * f, g2 * (1.0 + stats.zeta() * f));
                }
                Ok(r)
            }
            SpectralDensity::Lorentzian { gamma, .. } => {
                let w_max = self.omega_max();
                let s_max = s_max.abs();
                let mut width = (0.5 * gamma).min(4.0 / self.beta);
                if s_max > 0.0 {
                    width = width.min(PI / (4.0 * s_max));
                }
                let mut panels = ((w_max / width).ceil() as usize).max(16);
                let probes: Vec<f64> = if s_max > 0.0 { vec![0.0, 0.5 * s_max, s_max] } else { vec![0.0] };
                let mut coarse = self.lorentzian_rule(stats, panels)?;
                let mut last_err = f64::INFINITY;
                for _ in 0..MAX_DOUBLINGS {
                    let fine = self.lorentzian_rule(stats, 2 * panels)?;
                    let scale0 = fine.sums(0.0);
                    let s0 = scale0.m0.norm().max(scale0.p0.norm()).max(f64::MIN_POSITIVE);
                    let s1 = scale0.m1.norm().max(scale0.p1.norm()).max(f64::MIN_POSITIVE);
                    let mut err: f64 = 0.0;
                    for &s in &probes {
                        let a = coarse.sums(s);
                        let b = fine.sums(s);
                        err = err
                            .max((a.m0 - b.m0).norm() / s0)
                            .max((a.p0 - b.p0).norm() / s0)
                            .max((a.m1 - b.m1).norm() / s1)
                            .max((a.p1 - b.p1).norm() / s1);
                    }
                    last_err = err;
                    if err < QUAD_REL_TOL {
                        return Ok(fine);
                    }
                    panels *= 2;
                    coarse = fine;
                }
                Err(Error::QuadratureNonConvergence { residual: last_err })
            }
        }
    }

    fn lorentzian_rule(&self, stats: Statistics, panels: usize) -> Result<FrequencyRule> {
        let gl = gauss_legendre(GL_ORDER);
        let (nodes, weights) = composite(0.0, self.omega_max(), panels, &gl);
        let mut r = FrequencyRule::with_capacity(nodes.len());
        for (w, q) in nodes.into_iter().zip(weights) {
            let j = self.spectral.eval(w);
            let f = occupation(w, self.beta, self.mu, stats)?;
            r.push(w, q * j * f, q * j * (1.0 + stats.zeta() * f));
        }
        Ok(r)
    }

    /// ∫ J dω (Σ|g|² for discrete spectra).
    pub fn spectral_weight(&self) -> Result<f64> {
        match &self.spectral {
            SpectralDensity::Discrete { modes } => Ok(modes.iter().map(|m| m.g * m.g).sum()),
            SpectralDensity::Lorentzian { .. } => {
                let gl = gauss_legendre(GL_ORDER);
                let mut panels = 256;
                let mut prev = f64::NAN;
                for _ in 0..MAX_DOUBLINGS {
                    let (x, w) = composite(0.0, self.omega_max(), panels, &gl);
                    let v: f64 = x.iter().zip(&w).map(|(x, w)| w * self.spectral.eval(*x)).sum();
                    if (v - prev).abs() < QUAD_REL_TOL * v.abs() {
                        return Ok(v);
                    }
                    prev = v;
                    panels *= 2;
                }
                Err(Error::QuadratureNonConvergence { residual: f64::NAN })
            }
        }
    }

    /// Lowest energy present in the spectrum (0 for continuous densities).
    pub fn min_energy(&self) -> f64 {
        match &self.spectral {
            SpectralDensity::Lorentzian { .. } => 0.0,
            SpectralDensity::Discrete { modes } => modes.iter().map(|m| m.omega).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Quadrature (or mode-sum) weights: a = w·J·f and b = w·J·(1 + ζf).
#[derive(Debug, Clone, Default)]
pub struct FrequencyRule {
    pub omega: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// The four frequency moments that every kernel is built from:
/// m_k = Σ a ω^k e^{iωs}, p_k = Σ b ω^k e^{−iωs}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSums {
    pub m0: C64,
    pub m1: C64,
    pub p0: C64,
    pub p1: C64,
}

impl FrequencyRule {
    fn with_capacity(n: usize) -> Self {
        FrequencyRule {
            omega: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, w: f64, a: f64, b: f64) {
        self.omega.push(w);
        self.a.push(a);
        self.b.push(b);
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn sums(&self, s: f64) -> BathSums {
        let (mut m0, mut m1, mut p0, mut p1) = (ZERO, ZERO, ZERO, ZERO);
        for k in 0..self.omega.len() {
            let w = self.omega[k];
            let (sin, cos) = (w * s).sin_cos();
            let e = C64::new(cos, sin);
            let ea = e * self.a[k];
            let eb = e.conj() * self.b[k];
            m0 += ea;
            m1 += ea * w;
            p0 += eb;
            p1 += eb * w;
        }
        BathSums { m0, m1, p0, p1 }
    }

    /// Sums at s₀ + m·h for m = 0..count. Phases advance by a complex
    /// recurrence, reseeded from sin/cos every `RESEED` steps.
    pub fn sums_lattice(&self, s0: f64, h: f64, count: usize) -> Vec<BathSums> {
        const RESEED: usize = 64;
        let zero = BathSums { m0: ZERO, m1: ZERO, p0: ZERO, p1: ZERO };
        let mut out = vec![zero; count];
        for k in 0..self.omega.len() {
            let w = self.omega[k];
            let (a, b) = (self.a[k], self.b[k]);
            let (sn, cs) = (w * h).sin_cos();
            let step = C64::new(cs, sn);
            let mut e = ZERO;
            for (m, o) in out.iter_mut().enumerate() {
                if m % RESEED == 0 {
                    let (sn, cs) = (w * (s0 + h * m as f64)).sin_cos();
                    e = C64::new(cs, sn);
                } else {
                    e *= step;
                }
                let ea = e * a;
                let eb = e.conj() * b;
                o.m0 += ea;
                o.m1 += ea * w;
                o.p0 += eb;
                o.p1 += eb * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Heat,
    Energy,
    Number,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Heat, KernelKind::Energy, KernelKind::Number];

    pub fn label(self) -> &'static str {
        match self {
            KernelKind::Heat => "Q",
            KernelKind::Energy => "E",
            KernelKind::Number => "N",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Minus,
    Plus,
}

impl BathSums {
    /// (χ⁻, χ⁺).
    pub fn chi(&self) -> (C64, C64) {
        (self.m0, self.p0)
    }

    /// (kernel⁻, kernel⁺) for the requested kind.
    pub fn kernel(&self, kind: KernelKind, mu: f64) -> (C64, C64) {
        match kind {
            KernelKind::Heat => (-(self.m1 - self.m0 * mu), self.p1 - self.p0 * mu),
            KernelKind::Energy => (-self.m1, self.p1),
            KernelKind::Number => (-self.m0, self.p0),
        }
    }
}

/// χ⁻ and χ⁺ at one time difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiBlock {
    pub minus: C64,
    pub plus: C64,
}

impl ChiBlock {
    pub fn matrix(&self) -> [[C64; 2]; 2] {
        [[ZERO, self.minus], [self.plus, ZERO]]
    }
}

/// χ(s) for a single time difference, with its own adaptive rule.
pub fn chi(res: &Reservoir, stats: Statistics, s: f64) -> Result<ChiBlock> {
    let (minus, plus) = res.rule(stats, s.abs())?.sums(s).chi();
    Ok(ChiBlock { minus, plus })
}

/// One branch of a bare kernel at a single time difference.
pub fn bare_kernel(res: &Reservoir, stats: Statistics, kind: KernelKind, branch: Branch, s: f64) -> Result<C64> {
    let (m, p) = res.rule(stats, s.abs())?.sums(s).kernel(kind, res.mu);
    Ok(match branch {
        Branch::Minus => m,
        Branch::Plus => p,
    })
}

/// Thread-safe memo of χ(s) keyed by the bit pattern of s.
pub struct ChiCache<'a> {
    res: &'a Reservoir,
    stats: Statistics,
    map: RwLock<HashMap<u64, ChiBlock>>,
}

impl<'a> ChiCache<'a> {
    pub fn new(res: &'a Reservoir, stats: Statistics) -> Self {
        ChiCache { res, stats, map: RwLock::new(HashMap::new()) }
    }

    pub fn get(&self, s: f64) -> Result<ChiBlock> {
        let key = s.to_bits();
        if let Some(v) = self.map.read().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let v = chi(self.res, self.stats, s)?;
        self.map.write().expect("cache lock").insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The four Keldysh components of one reservoir's tilted Green's function,
/// each a 2×2 block in the (B†, B) ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeldyshBlocks {
    pub greater: [[C64; 2]; 2],
    pub lesser: [[C64; 2]; 2],
    pub ordered: [[C64; 2]; 2],
    pub anti_ordered: [[C64; 2]; 2],
}

/// Components at physical times (z, w) and counting field `lam`:
///
/// ```text
/// C^𝕋(z,w)  = θ(z−w) χ(z−w) + ζ θ(w−z) χᵀ(w−z)
/// C^𝕋̃(z,w)  = θ(w−z) χ(z−w) + ζ θ(z−w) χᵀ(w−z)
/// C^>(z,w;λ) = e^{−iμλσ_z} χ(z−w+λ)
/// C^<(z,w;λ) = ζ e^{+iμλσ_z} χᵀ(w−z+λ)
/// ```
///
/// with θ(0) = 1/2.
pub fn keldysh_components(res: &Reservoir, stats: Statistics, lam: f64, z: f64, w: f64) -> Result<KeldyshBlocks> {
    let zeta = stats.zeta();
    let s = z - w;
    let fwd = chi(res, stats, s)?;
    let bwd = chi(res, stats, -s)?;
    let gt_shift = chi(res, stats, s + lam)?;
    let lt_shift = chi(res, stats, -s + lam)?;
    let ph = (I * res.mu * lam).exp();

    let chi_m = fwd.matrix();
    // ζ χᵀ(w − z)
    let chi_t = [[ZERO, bwd.plus * zeta], [bwd.minus * zeta, ZERO]];
    let (th_f, th_b) = if s > 0.0 {
        (1.0, 0.0)
    } else if s < 0.0 {
        (0.0, 1.0)
    } else {
        (0.5, 0.5)
    };
    let mix = |a: f64, b: f64| {
        let mut m = [[ZERO; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] = chi_m[r][c] * a + chi_t[r][c] * b;
            }
        }
        m
    };
    let ordered = mix(th_f, th_b);
    let anti_ordered = mix(th_b, th_f);
    let greater = [[ZERO, ph.conj() * gt_shift.minus], [ph * gt_shift.plus, ZERO]];
    let lesser = [[ZERO, ph * lt_shift.plus * zeta], [ph.conj() * lt_shift.minus * zeta, ZERO]];
    Ok(KeldyshBlocks { greater, lesser, ordered, anti_ordered })
}

/// ★f = ζ (1⊗σ_x) conj(f) (1⊗σ_x): entry (a, b) becomes ζ conj(f_{ā b̄})
/// with ā = a xor 1.
pub fn effective_conjugate(f: &CMat, zeta: f64) -> Result<CMat> {
    let (r, c) = f.dim();
    if r != c || r % 2 != 0 {
        return Err(Error::Dimension(format!("effective conjugation needs a square even matrix, got {r}x{c}")));
    }
    Ok(CMat::from_shape_fn((r, c), |(a, b)| f[[a ^ 1, b ^ 1]].conj() * zeta))
}

/// In-place ★ on a flat row-major D×D block.
#[inline]
pub fn star_block(src: &[C64], dst: &mut [C64], d: usize, zeta: f64) {
    for a in 0..d {
        for b in 0..d {
            dst[a * d + b] = src[(a ^ 1) * d + (b ^ 1)].conj() * zeta;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lorentzian_bath(beta: f64, mu: f64) -> Reservoir {
        Reservoir {
            name: "L".into(),
            beta,
            mu,
            spectral: SpectralDensity::Lorentzian { eta: 0.1, gamma: 1.0, omega_c: 10.0 },
            site: 0,
        }
    }

    /// Independent oracle: composite Simpson on a fine uniform mesh over
    /// [0, 40 ω_c] of the weight times e^{iσωs}.
    fn simpson_oracle(res: &Reservoir, weight: impl Fn(f64) -> f64, s: f64, sign: f64) -> C64 {
        // closed form, including the finite value at ω = 0
        let (eta, gamma, omega_c) = match res.spectral {
            SpectralDensity::Lorentzian { eta, gamma, omega_c } => (eta, gamma, omega_c),
            _ => unreachable!(),
        };
        let lorentz = |w: f64| eta / PI * gamma / (w * w + gamma * gamma) * (-w / omega_c).exp();
        let top = 400.0;
        let n = 800_000;
        let h = top / n as f64;
        let mut acc = ZERO;
        for k in 0..=n {
            let w = h * k as f64;
            let coef = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let e = C64::new(0.0, sign * w * s).exp();
            acc += e * (coef * lorentz(w) * weight(w));
        }
        acc * (h / 3.0)
    }

    #[test]
    fn fermi_occupation_closed_form() {
        let f = occupation(1.0, 1.0, 0.0, Statistics::Fermion).unwrap();
        assert_relative_eq!(f, 0.268_941_421_369_995_1, epsilon = 1e-15);
        assert_relative_eq!(occupation(0.3, 2.0, 0.3, Statistics::Fermion).unwrap(), 0.5);
    }

    #[test]
    fn bose_occupation_limits() {
        assert!(occupation(0.0, 1.0, 0.0, Statistics::Boson).is_err());
        assert!(occupation(1.0, 1.0, 2.0, Statistics::Boson).is_err());
        assert!(occupation(1e3, 10.0, 0.0, Statistics::Boson).unwrap() < 1e-300);
    }

    #[test]
    fn discrete_single_mode_closed_form() {
        let res = Reservoir {
            name: "d".into(),
            beta: 2.0,
            mu: 0.1,
            spectral: SpectralDensity::Discrete { modes: vec![DiscreteMode { omega: 0.7, g: 0.3 }] },
            site: 0,
        };
        let s = 1.3;
        let c = chi(&res, Statistics::Fermion, s).unwrap();
        let f = 1.0 / ((2.0f64 * 0.6).exp() + 1.0);
        let expect_m = C64::new(0.0, 0.7 * s).exp() * (0.09 * f);
        let expect_p = C64::new(0.0, -0.7 * s).exp() * (0.09 * (1.0 - f));
        assert_relative_eq!((c.minus - expect_m).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!((c.plus - expect_p).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lattice_sums_match_direct_evaluation() {
        let res = lorentzian_bath(1.0, 0.0);
        let rule = res.rule(Statistics::Fermion, 20.0).unwrap();
        let lat = rule.sums_lattice(-10.0, 0.05, 401);
        for m in [0usize, 1, 63, 64, 65, 200, 400] {
            let d = rule.sums(-10.0 + 0.05 * m as f64);
            assert!((lat[m].m0 - d.m0).norm() < 1e-13);
            assert!((lat[m].p1 - d.p1).norm() < 1e-12);
        }
    }

    #[test]
    fn fermionic_sum_rule() {
        let res = lorentzian_bath(1.0, 0.0);
        let c = chi(&res, Statistics::Fermion, 0.0).unwrap();
        let total = res.spectral_weight().unwrap();
        assert!((c.minus + c.plus - total).norm() < 1e-7 * total);
    }

    #[test]
    fn lorentzian_chi_matches_independent_quadrature() {
        let res = lorentzian_bath(1.0, 0.0);
        let s = 1.0;
        let c = chi(&res, Statistics::Fermion, s).unwrap();
        let f = |w: f64| occupation(w, 1.0, 0.0, Statistics::Fermion).unwrap();
        let om = simpson_oracle(&res, f, s, 1.0);
        let op = simpson_oracle(&res, |w| 1.0 - f(w), s, -1.0);
        assert!((c.minus - om).norm() < 1e-8 * om.norm(), "{} vs {}", c.minus, om);
        assert!((c.plus - op).norm() < 1e-8 * op.norm(), "{} vs {}", c.plus, op);
    }

    #[test]
    fn lorentzian_heat_kernel_matches_independent_quadrature() {
        let res = lorentzian_bath(10.0, 0.2);
        let s = 0.5;
        let f = |w: f64| occupation(w, 10.0, 0.2, Statistics::Fermion).unwrap();
        let km = bare_kernel(&res, Statistics::Fermion, KernelKind::Heat, Branch::Minus, s).unwrap();
        let kp = bare_kernel(&res, Statistics::Fermion, KernelKind::Heat, Branch::Plus, s).unwrap();
        let om = -simpson_oracle(&res, |w| (w - 0.2) * f(w), s, 1.0);
        let op = simpson_oracle(&res, |w| (w - 0.2) * (1.0 - f(w)), s, -1.0);
        assert!((km - om).norm() < 1e-8 * om.norm(), "{km} vs {om}");
        assert!((kp - op).norm() < 1e-8 * op.norm(), "{kp} vs {op}");
    }

    #[test]
    fn heat_equals_energy_at_zero_mu() {
        let res = lorentzian_bath(1.0, 0.0);
        for s in [0.0, 0.4, 2.0] {
            for b in [Branch::Minus, Branch::Plus] {
                let q = bare_kernel(&res, Statistics::Fermion, KernelKind::Heat, b, s).unwrap();
                let e = bare_kernel(&res, Statistics::Fermion, KernelKind::Energy, b, s).unwrap();
                assert_eq!(q, e);
            }
        }
    }

    #[test]
    fn heat_energy_number_decomposition() {
        let res = lorentzian_bath(2.0, 0.35);
        let s = 0.7;
        for b in [Branch::Minus, Branch::Plus] {
            let q = bare_kernel(&res, Statistics::Fermion, KernelKind::Heat, b, s).unwrap();
            let e = bare_kernel(&res, Statistics::Fermion, KernelKind::Energy, b, s).unwrap();
            let n = bare_kernel(&res, Statistics::Fermion, KernelKind::Number, b, s).unwrap();
            assert!((q - (e - n * 0.35)).norm() <= 1e-14 * e.norm().max(1e-300));
        }
    }

    #[test]
    fn keldysh_components_at_zero_field() {
        let res = lorentzian_bath(1.0, 0.3);
        let k = keldysh_components(&res, Statistics::Fermion, 0.0, 0.9, 0.4).unwrap();
        let x = chi(&res, Statistics::Fermion, 0.5).unwrap().matrix();
        for r in 0..2 {
            for c in 0..2 {
                assert!((k.greater[r][c] - x[r][c]).norm() < 1e-15);
                // z > w: time-ordered equals greater
                assert!((k.ordered[r][c] - x[r][c]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn tilting_leaves_ordered_components_alone() {
        let res = lorentzian_bath(1.0, 0.3);
        let a = keldysh_components(&res, Statistics::Fermion, 0.0, 0.2, 0.9).unwrap();
        let b = keldysh_components(&res, Statistics::Fermion, 0.3, 0.2, 0.9).unwrap();
        assert_eq!(a.ordered, b.ordered);
        assert_eq!(a.anti_ordered, b.anti_ordered);
    }

    #[test]
    fn tilt_is_pure_shift_at_zero_mu() {
        let res = lorentzian_bath(1.0, 0.0);
        let k = keldysh_components(&res, Statistics::Fermion, 0.1, 0.9, 0.4).unwrap();
        let x = chi(&res, Statistics::Fermion, 0.6).unwrap().matrix();
        for r in 0..2 {
            for c in 0..2 {
                assert!((k.greater[r][c] - x[r][c]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn small_field_continuity() {
        let res = lorentzian_bath(1.0, 0.3);
        let a = keldysh_components(&res, Statistics::Fermion, 0.0, 0.8, 0.3).unwrap();
        let b = keldysh_components(&res, Statistics::Fermion, 1e-8, 0.8, 0.3).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.greater[r][c] - b.greater[r][c]).norm() < 1e-6);
                assert!((a.lesser[r][c] - b.lesser[r][c]).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn conjugation_of_sigma_x() {
        let mut f = CMat::zeros((4, 4));
        for a in 0..4 {
            f[[a, a ^ 1]] = C64::new(1.0, 0.0);
        }
        let g = effective_conjugate(&f, -1.0).unwrap();
        assert_eq!(g, f.mapv(|z| -z));
        assert!(effective_conjugate(&CMat::zeros((3, 3)), 1.0).is_err());
    }

    #[test]
    fn lesser_kernel_is_conjugate_of_greater() {
        // 𝔠^<(z,w) from i∂_λ of the tilted lesser component, compared with ★𝔠^>.
        let res = lorentzian_bath(1.5, 0.25);
        let zeta = -1.0;
        let lam = 1e-5;
        for &(z, w) in &[(0.7, 0.2), (0.1, 0.9), (0.5, 0.5)] {
            let kp = keldysh_components(&res, Statistics::Fermion, lam, z, w).unwrap();
            let km = keldysh_components(&res, Statistics::Fermion, -lam, z, w).unwrap();
            let sums = res.rule(Statistics::Fermion, 2.0).unwrap().sums(z - w);
            let (cm, cp) = sums.kernel(KernelKind::Heat, res.mu);
            let mut gt = CMat::zeros((2, 2));
            gt[[0, 1]] = cm;
            gt[[1, 0]] = cp;
            let star = effective_conjugate(&gt, zeta).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    let fd = I * (kp.lesser[r][c] - km.lesser[r][c]) / (2.0 * lam);
                    let fdg = I * (kp.greater[r][c] - km.greater[r][c]) / (2.0 * lam);
                    assert!((fd - star[[r, c]]).norm() < 1e-7, "{r}{c}: {fd} vs {}", star[[r, c]]);
                    assert!((fdg - gt[[r, c]]).norm() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn conjugated_greater_kernel_table_equals_direct_lesser_table() {
        // 𝔠^<(z,w) = ζ[iχ'ᵀ(w−z) − μσ_zχᵀ(w−z)], evaluated from its own
        // frequency moments, against ★𝔠^>(z,w) on a sampled grid.
        let res = lorentzian_bath(1.5, 0.25);
        let zeta = -1.0;
        let rule = res.rule(Statistics::Fermion, 3.0).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let (z, w) = (0.5 * i as f64, 0.5 * j as f64);
                let (cm, cp) = rule.sums(z - w).kernel(KernelKind::Heat, res.mu);
                let mut gt = CMat::zeros((2, 2));
                gt[[0, 1]] = cm;
                gt[[1, 0]] = cp;
                let star = effective_conjugate(&gt, zeta).unwrap();
                let r = rule.sums(w - z);
                let up = (r.p1 - r.p0 * res.mu) * zeta;
                let lo = (-r.m1 + r.m0 * res.mu) * zeta;
                assert!((star[[0, 1]] - up).norm() < 1e-10);
                assert!((star[[1, 0]] - lo).norm() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn conjugation_is_involution(re in proptest::collection::vec(-5.0f64..5.0, 16), im in proptest::collection::vec(-5.0f64..5.0, 16), boson in any::<bool>()) {
            let f = CMat::from_shape_fn((4, 4), |(a, b)| C64::new(re[4 * a + b], im[4 * a + b]));
            let zeta = if boson { 1.0 } else { -1.0 };
            let g = effective_conjugate(&effective_conjugate(&f, zeta).unwrap(), zeta).unwrap();
            prop_assert_eq!(g, f);
        }

        #[test]
        fn reflection_property(s in -8.0f64..8.0, beta in 0.2f64..20.0, mu in -1.0f64..1.0) {
            let res = lorentzian_bath(beta, mu);
            let rule = res.rule(Statistics::Fermion, 8.0).unwrap();
            let a = rule.sums(s);
            let b = rule.sums(-s);
            prop_assert!((a.m0 - b.m0.conj()).norm() < 1e-10);
            prop_assert!((a.p0 - b.p0.conj()).norm() < 1e-10);
        }

        #[test]
        fn decomposition_holds_everywhere(s in -5.0f64..5.0, mu in -1.0f64..1.0) {
            let res = lorentzian_bath(3.0, mu);
            let sums = res.rule(Statistics::Fermion, 5.0).unwrap().sums(s);
            let (qm, qp) = sums.kernel(KernelKind::Heat, mu);
            let (em, ep) = sums.kernel(KernelKind::Energy, mu);
            let (nm, np) = sums.kernel(KernelKind::Number, mu);
            let scale = em.norm().max(ep.norm()).max(nm.norm());
            prop_assert!((qm - (em - nm * mu)).norm() <= 1e-13 * scale);
            prop_assert!((qp - (ep - np * mu)).norm() <= 1e-13 * scale);
        }

        #[test]
        fn sum_rule_any_temperature(beta in 0.05f64..50.0, mu in -2.0f64..2.0) {
            let res = lorentzian_bath(beta, mu);
            let c = chi(&res, Statistics::Fermion, 0.0).unwrap();
            let total = res.spectral_weight().unwrap();
            prop_assert!((c.minus + c.plus - total).norm() < 1e-7 * total);
        }
    }
}
