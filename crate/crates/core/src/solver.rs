//! Fixed-point solvers for affine maps x = b + L x on complex vectors.
//!
//! The map is affine, so a Newton step is a single linear solve of
//! (1 − L) x = b; it is carried out matrix-free by restarted GMRES with
//! L·v as the only operator access. Damped Picard iteration is kept as the
//! cross-check route.

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Gmres,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_method")]
    pub method: SolverMethod,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    /// Picard damping; chosen from the coupling scale when absent.
    #[serde(default)]
    pub damping: Option<f64>,
}

fn default_method() -> SolverMethod {
    SolverMethod::Gmres
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    500
}
fn default_krylov_dim() -> usize {
    30
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: default_method(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            krylov_dim: default_krylov_dim(),
            damping: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("solver tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 || self.krylov_dim == 0 {
            return Err(Error::InvalidParameter("max_iter and krylov_dim must be positive".into()));
        }
        if let Some(d) = self.damping {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidParameter(format!("damping must lie in (0, 1], got {d}")));
            }
        }
        Ok(())
    }
}

/// Outcome of one fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    /// Operator applications spent.
    pub iterations: usize,
    /// Final residual ‖b + Lx − x‖∞.
    pub residual: f64,
    pub history: Vec<f64>,
}

pub fn norm_inf(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// r = b + L x − x; returns ‖r‖∞.
fn residual<F>(apply: &F, b: &[C64], x: &[C64], r: &mut [C64]) -> f64
where
    F: Fn(&[C64], &mut [C64]),
{
    apply(x, r);
    for k in 0..r.len() {
        r[k] += b[k] - x[k];
    }
    norm_inf(r)
}

/// Damped Picard iteration starting from x = b.
pub fn picard<F>(apply: F, b: &[C64], damping: f64, tol: f64, max_iter: usize, stage: &str) -> Result<(Vec<C64>, Convergence)>
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let mut x = b.to_vec();
    let mut r = vec![ZERO; n];
    let mut history = Vec::new();
    let mut growth = 0;
    for it in 1..=max_iter {
        let res = residual(&apply, b, &x, &mut r);
        history.push(res);
        if res <= tol * (1.0 + norm_inf(&x)) {
            return Ok((x, Convergence { iterations: it, residual: res, history }));
        }
        if it > 1 && res > history[it - 2] {
            growth += 1;
            if growth >= 5 {
                return Err(Error::Divergence { stage: stage.into(), iteration: it, residual: res });
            }
        } else {
            growth = 0;
        }
        for k in 0..n {
            x[k] += r[k] * damping;
        }
    }
    let last = *history.last().unwrap_or(&f64::NAN);
    Err(Error::NonConvergence { stage: stage.into(), iterations: max_iter, residual: last, history })
}

/// Restarted GMRES(m) on (1 − L) x = b starting from x = b.
pub fn gmres<F>(apply: F, b: &[C64], m: usize, tol: f64, max_iter: usize, stage: &str) -> Result<(Vec<C64>, Convergence)>
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let mut x = b.to_vec();
    let mut r = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    let mut history = Vec::new();
    let mut applications = 0;
    let mut stalls = 0;
    loop {
        let res = residual(&apply, b, &x, &mut r);
        applications += 1;
        history.push(res);
        let target = tol * (1.0 + norm_inf(&x));
        if res <= target {
            return Ok((x, Convergence { iterations: applications, residual: res, history }));
        }
        if applications >= max_iter {
            return Err(Error::NonConvergence { stage: stage.into(), iterations: applications, residual: res, history });
        }
        if history.len() > 1 && res >= history[history.len() - 2] {
            stalls += 1;
            if stalls >= 5 {
                return Err(Error::Divergence { stage: stage.into(), iteration: applications, residual: res });
            }
        } else {
            stalls = 0;
        }

        let beta = norm2(&r);
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|z| z / beta).collect());
        // Hessenberg columns after Givens rotations
        let mut hcols: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<C64> = Vec::with_capacity(m);
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::from(beta);
        let mut k_used = 0;
        for k in 0..m {
            if applications >= max_iter {
                break;
            }
            // w = (1 − L) v_k
            apply(&basis[k], &mut w);
            applications += 1;
            for (wi, vi) in w.iter_mut().zip(&basis[k]) {
                *wi = vi - *wi;
            }
            let mut h = vec![ZERO; k + 2];
            for (j, v) in basis.iter().enumerate() {
                let hj = dot(v, &w);
                h[j] = hj;
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= hj * vi;
                }
            }
            let hnext = norm2(&w);
            h[k + 1] = C64::from(hnext);
            for j in 0..k {
                let t = h[j] * cs[j] + sn[j] * h[j + 1];
                h[j + 1] = -sn[j].conj() * h[j] + h[j + 1] * cs[j];
                h[j] = t;
            }
            let (a, bb) = (h[k], h[k + 1]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if denom == 0.0 {
                (1.0, ZERO)
            } else if a.norm() == 0.0 {
                (0.0, (bb / denom).conj())
            } else {
                let phase = a / a.norm();
                (a.norm() / denom, phase * bb.conj() / denom)
            };
            h[k] = c * a + s * bb;
            h[k + 1] = ZERO;
            g[k + 1] = -s.conj() * g[k];
            g[k] *= c;
            cs.push(c);
            sn.push(s);
            hcols.push(h);
            k_used = k + 1;
            let est = g[k + 1].norm();
            if est <= 0.5 * target || hnext <= f64::EPSILON * beta {
                break;
            }
            basis.push(w.iter().map(|z| z / hnext).collect());
        }
        // back substitution on the triangular factor
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s -= hcols[j][i] * y[j];
            }
            y[i] = s / hcols[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * vi;
            }
        }
    }
}
