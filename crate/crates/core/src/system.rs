//! Quadratic system Hamiltonians, their Bogoliubov–de Gennes propagator and
//! the c-number self-energy built from coupling operators that are linear in
//! the ladder operators.
//!
//! H_S = Σ ε_kl a_k†a_l + ½ Σ (Δ_kl a_k†a_l† + h.c.). The ladder vector
//! Ψ = (a_1..a_n, a_1†..a_n†) evolves as Ψ(t) = U(t)Ψ with U(t) = exp(−iMt),
//! M = [[ε, Δ], [−Δ*, −ε*]].
//!
//! Coupling operators come in conjugate pairs: for a reservoir attached to
//! mode k the pair is (A_{2α}, A_{2α+1}) = (a_k, a_k†), matching the (B†, B)
//! ordering of the reservoir block, so that μ̄ = μ xor 1.

use crate::bath::Statistics;
use crate::error::{Error, Result};
use crate::linalg::{dagger, expm, identity, CMat, C64, I, ONE, ZERO};
use serde::{Deserialize, Serialize};

/// Dense-evolution guard on the system Fock dimension.
pub const MAX_FOCK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    stats: Statistics,
    eps: CMat,
    delta: CMat,
    couplings: Vec<Vec<C64>>,
    cutoff: usize,
}

impl SystemModel {
    /// `eps` Hermitian n×n, `delta` antisymmetric (fermions) or symmetric
    /// (bosons) n×n; one coupling pair per entry of `sites`. `cutoff` is the
    /// highest bosonic occupation kept in the dense space (ignored for fermions).
    pub fn new(stats: Statistics, eps: CMat, delta: CMat, sites: &[usize], cutoff: usize) -> Result<SystemModel> {
        let n = eps.nrows();
        if eps.ncols() != n || delta.dim() != (n, n) {
            return Err(Error::Dimension("eps and delta must be square of equal size".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("system needs at least one mode".into()));
        }
        let tol = 1e-12;
        for i in 0..n {
            for j in 0..n {
                if (eps[[i, j]] - eps[[j, i]].conj()).norm() > tol {
                    return Err(Error::InvalidParameter("single-particle energies must be Hermitian".into()));
                }
                let sym = delta[[j, i]] * (-stats.zeta());
                if (delta[[i, j]] + sym).norm() > tol {
                    return Err(Error::InvalidParameter(match stats {
                        Statistics::Fermion => "fermionic pairing matrix must be antisymmetric".into(),
                        Statistics::Boson => "bosonic pairing matrix must be symmetric".into(),
                    }));
                }
            }
        }
        let mut couplings = Vec::with_capacity(2 * sites.len());
        for &k in sites {
            if k >= n {
                return Err(Error::InvalidParameter(format!("coupling site {k} out of range for {n} modes")));
            }
            let mut a = vec![ZERO; 2 * n];
            a[k] = ONE;
            let mut ad = vec![ZERO; 2 * n];
            ad[n + k] = ONE;
            couplings.push(a);
            couplings.push(ad);
        }
        let model = SystemModel { stats, eps, delta, couplings, cutoff: cutoff.max(1) };
        if model.fock_dim() > MAX_FOCK_DIM {
            return Err(Error::InvalidParameter(format!(
                "Fock dimension {} exceeds the dense limit {MAX_FOCK_DIM}",
                model.fock_dim()
            )));
        }
        Ok(model)
    }

    /// Diagonal energies plus pairings Δ (a_i†a_j† + h.c.) on the listed pairs.
    pub fn from_levels(stats: Statistics, energies: &[f64], pairings: &[(usize, usize, f64)], sites: &[usize], cutoff: usize) -> Result<SystemModel> {
        let n = energies.len();
        let mut eps = CMat::zeros((n, n));
        for (k, &e) in energies.iter().enumerate() {
            eps[[k, k]] = C64::from(e);
        }
        let mut delta = CMat::zeros((n, n));
        for &(i, j, d) in pairings {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidParameter(format!("invalid pairing indices ({i}, {j})")));
            }
            delta[[i, j]] += C64::from(d);
            delta[[j, i]] += C64::from(d * stats.zeta());
        }
        SystemModel::new(stats, eps, delta, sites, cutoff)
    }

    pub fn stats(&self) -> Statistics {
        self.stats
    }

    pub fn zeta(&self) -> f64 {
        self.stats.zeta()
    }

    pub fn n_modes(&self) -> usize {
        self.eps.nrows()
    }

    /// Number of coupling operators D (twice the number of reservoirs).
    pub fn n_couplings(&self) -> usize {
        self.couplings.len()
    }

    pub fn coupling(&self, mu: usize) -> &[C64] {
        &self.couplings[mu]
    }

    pub fn conj_index(mu: usize) -> usize {
        mu ^ 1
    }

    pub fn eps(&self) -> &CMat {
        &self.eps
    }

    pub fn delta(&self) -> &CMat {
        &self.delta
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn fock_dim(&self) -> usize {
        let n = self.n_modes() as u32;
        match self.stats {
            Statistics::Fermion => 2usize.saturating_pow(n),
            Statistics::Boson => (self.cutoff + 1).saturating_pow(n),
        }
    }

    /// Same Hamiltonian, no couplings scaled (couplings live in the baths).
    pub fn bdg_generator(&self) -> CMat {
        let n = self.n_modes();
        let mut m = CMat::zeros((2 * n, 2 * n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = self.eps[[i, j]];
                m[[i, n + j]] = self.delta[[i, j]];
                m[[n + i, j]] = -self.delta[[i, j]].conj();
                m[[n + i, n + j]] = -self.eps[[i, j]].conj();
            }
        }
        m
    }

    /// U(t) with Ψ(t) = U(t) Ψ.
    pub fn heisenberg_coeffs(&self, t: f64) -> CMat {
        if t == 0.0 {
            return identity(2 * self.n_modes());
        }
        expm(&self.bdg_generator().mapv(|z| z * (-I * t)))
    }

    /// Canonical (anti)commutator matrix Ω_kl = [Ψ_k, Ψ_l]_ζ.
    pub fn canonical_form(&self) -> CMat {
        let n = self.n_modes();
        let mut om = CMat::zeros((2 * n, 2 * n));
        for k in 0..n {
            om[[k, n + k]] = ONE;
            om[[n + k, k]] = C64::from(-self.zeta());
        }
        om
    }

    /// Coefficient matrix C (D × 2n) whose rows are the coupling operators.
    pub fn coupling_matrix(&self) -> CMat {
        let d = self.n_couplings();
        let n2 = 2 * self.n_modes();
        CMat::from_shape_fn((d, n2), |(mu, k)| self.couplings[mu][k])
    }

    /// σ_ij(s) = [A_i(s), A_j(0)]_ζ.
    pub fn pair_sigma(&self, i: usize, j: usize, s: f64) -> C64 {
        let u = self.heisenberg_coeffs(s);
        let om = self.canonical_form();
        let n2 = 2 * self.n_modes();
        let mut acc = ZERO;
        for k in 0..n2 {
            let mut xi = ZERO;
            for m in 0..n2 {
                xi += self.couplings[i][m] * u[[m, k]];
            }
            for l in 0..n2 {
                acc += xi * om[[k, l]] * self.couplings[j][l];
            }
        }
        acc
    }

    /// Full σ(s) matrix over coupling indices.
    pub fn sigma_matrix(&self, s: f64) -> CMat {
        let c = self.coupling_matrix();
        c.dot(&self.heisenberg_coeffs(s)).dot(&self.canonical_form()).dot(&c.t())
    }

    /// Σ^𝕋(u, v) = θ(v − u) σ(u − v) with θ(0) = 1/2.
    pub fn self_energy_t(&self, u: f64, v: f64) -> CMat {
        let d = self.n_couplings();
        if u > v {
            return CMat::zeros((d, d));
        }
        let s = self.sigma_matrix(u - v);
        if u == v {
            s.mapv(|z| z * 0.5)
        } else {
            s
        }
    }

    /// Separable factors of σ(u − v) = P(u) Q(v): P(u) = C U(u) and
    /// Q(v) = U(−v) Ω Cᵀ. Exact because U is a one-parameter group.
    pub fn sigma_factors(&self, t: f64) -> (CMat, CMat) {
        let c = self.coupling_matrix();
        let p = c.dot(&self.heisenberg_coeffs(t));
        let q = self.heisenberg_coeffs(-t).dot(&self.canonical_form()).dot(&c.t());
        (p, q)
    }

    /// Copy with the coupling operators replaced by the given sites.
    pub fn with_sites(&self, sites: &[usize]) -> Result<SystemModel> {
        SystemModel::new(self.stats, self.eps.clone(), self.delta.clone(), sites, self.cutoff)
    }
}

/// Dense Fock space over `n` modes. Fermionic basis index = Σ n_k 2^k with
/// the Jordan–Wigner sign (−1)^{Σ_{j<k} n_j} on a_k; bosonic index uses
/// mixed radix (cutoff + 1).
#[derive(Debug, Clone)]
pub struct FockSpace {
    n: usize,
    stats: Statistics,
    cutoff: usize,
}

impl FockSpace {
    pub fn new(n: usize, stats: Statistics, cutoff: usize) -> FockSpace {
        FockSpace { n, stats, cutoff: cutoff.max(1) }
    }

    pub fn for_model(model: &SystemModel) -> FockSpace {
        FockSpace::new(model.n_modes(), model.stats(), model.cutoff())
    }

    pub fn dim(&self) -> usize {
        match self.stats {
            Statistics::Fermion => 1 << self.n,
            Statistics::Boson => (self.cutoff + 1).pow(self.n as u32),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    /// Occupation of mode k in basis state `idx`.
    pub fn occupation_of(&self, idx: usize, k: usize) -> usize {
        match self.stats {
            Statistics::Fermion => (idx >> k) & 1,
            Statistics::Boson => (idx / (self.cutoff + 1).pow(k as u32)) % (self.cutoff + 1),
        }
    }

    /// Basis index of an occupation pattern.
    pub fn index_of(&self, occ: &[usize]) -> Result<usize> {
        if occ.len() != self.n {
            return Err(Error::Dimension(format!("expected {} occupations, got {}", self.n, occ.len())));
        }
        let base = match self.stats {
            Statistics::Fermion => 2,
            Statistics::Boson => self.cutoff + 1,
        };
        let mut idx = 0;
        let mut p = 1;
        for &o in occ {
            if o >= base {
                return Err(Error::InvalidParameter(format!("occupation {o} exceeds the local dimension {base}")));
            }
            idx += o * p;
            p *= base;
        }
        Ok(idx)
    }

    pub fn annihilation(&self, k: usize) -> CMat {
        let d = self.dim();
        let mut a = CMat::zeros((d, d));
        match self.stats {
            Statistics::Fermion => {
                for idx in 0..d {
                    if (idx >> k) & 1 == 1 {
                        let parity = (idx & ((1 << k) - 1)).count_ones();
                        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
                        a[[idx ^ (1 << k), idx]] = C64::from(sign);
                    }
                }
            }
            Statistics::Boson => {
                let stride = (self.cutoff + 1).pow(k as u32);
                for idx in 0..d {
                    let nk = self.occupation_of(idx, k);
                    if nk > 0 {
                        a[[idx - stride, idx]] = C64::from((nk as f64).sqrt());
                    }
                }
            }
        }
        a
    }

    /// Dense ladder operators in Ψ order (a_1..a_n, a_1†..a_n†).
    pub fn ladder(&self) -> Vec<CMat> {
        let a: Vec<CMat> = (0..self.n).map(|k| self.annihilation(k)).collect();
        let ad: Vec<CMat> = a.iter().map(dagger).collect();
        a.into_iter().chain(ad).collect()
    }

    pub fn number(&self) -> CMat {
        let d = self.dim();
        CMat::from_shape_fn((d, d), |(i, j)| {
            if i == j {
                C64::from((0..self.n).map(|k| self.occupation_of(i, k)).sum::<usize>() as f64)
            } else {
                ZERO
            }
        })
    }

    /// Dense quadratic Hamiltonian Σ ε_kl a_k†a_l + ½ Σ (Δ_kl a_k†a_l† + h.c.).
    pub fn quadratic_hamiltonian(&self, eps: &CMat, delta: &CMat) -> CMat {
        let lad = self.ladder();
        let n = self.n;
        let d = self.dim();
        let mut h = CMat::zeros((d, d));
        for k in 0..n {
            for l in 0..n {
                if eps[[k, l]] != ZERO {
                    h.scaled_add(eps[[k, l]], &lad[n + k].dot(&lad[l]));
                }
                if delta[[k, l]] != ZERO {
                    let pair = lad[n + k].dot(&lad[n + l]);
                    h.scaled_add(delta[[k, l]] * 0.5, &pair);
                    h.scaled_add(delta[[k, l]].conj() * 0.5, &dagger(&pair));
                }
            }
        }
        h
    }

    /// Dense operator Σ_k x_k Ψ_k.
    pub fn linear_form(&self, coeffs: &[C64], ladder: &[CMat]) -> CMat {
        let d = self.dim();
        let mut out = CMat::zeros((d, d));
        for (x, op) in coeffs.iter().zip(ladder) {
            if *x != ZERO {
                out.scaled_add(*x, op);
            }
        }
        out
    }
}

/// Initial system states accepted by the evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialState {
    /// Fock product state with the given occupation per mode.
    Fock { occupations: Vec<usize> },
    /// Gibbs state e^{−β(H_S − μ N)}/Z.
    Gibbs {
        beta: f64,
        #[serde(default)]
        mu: f64,
    },
    /// Explicit density matrix (real and optional imaginary parts, row-major rows).
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl InitialState {
    pub fn density_matrix(&self, model: &SystemModel) -> Result<CMat> {
        let fock = FockSpace::for_model(model);
        let d = fock.dim();
        let rho = match self {
            InitialState::Fock { occupations } => {
                let idx = fock.index_of(occupations)?;
                let mut rho = CMat::zeros((d, d));
                rho[[idx, idx]] = ONE;
                rho
            }
            InitialState::Gibbs { beta, mu } => {
                if !(*beta > 0.0) {
                    return Err(Error::InvalidParameter("Gibbs state needs beta > 0".into()));
                }
                let h = fock.quadratic_hamiltonian(model.eps(), model.delta()) - fock.number().mapv(|z| z * *mu);
                let w = expm(&h.mapv(|z| z * (-*beta)));
                let z = crate::linalg::trace(&w);
                w.mapv(|x| x / z)
            }
            InitialState::Matrix { re, im } => {
                if re.len() != d || re.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension(format!("initial matrix must be {d}x{d}")));
                }
                if let Some(im) = im {
                    if im.len() != d || im.iter().any(|r| r.len() != d) {
                        return Err(Error::Dimension(format!("initial matrix must be {d}x{d}")));
                    }
                }
                CMat::from_shape_fn((d, d), |(i, j)| {
                    C64::new(re[i][j], im.as_ref().map(|m| m[i][j]).unwrap_or(0.0))
                })
            }
        };
        validate_density_matrix(&rho)?;
        Ok(rho)
    }
}

pub fn validate_density_matrix(rho: &CMat) -> Result<()> {
    let tr = crate::linalg::trace(rho);
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::InvalidParameter(format!("initial state trace {tr} is not 1")));
    }
    if crate::linalg::hermiticity_defect(rho) > 1e-10 {
        return Err(Error::InvalidParameter("initial state is not Hermitian".into()));
    }
    if !crate::linalg::is_positive_semidefinite(rho, 1e-10) {
        return Err(Error::InvalidParameter("initial state is not positive semidefinite".into()));
    }
    Ok(())
}
