//! Time grids with trapezoidal weights and the nested triangular
//! quadrature ∫₀^t dv ∫₀^v du f(u, v) used by every two-time functional.
//!
//! Nodes follow t_i = t_max (r^i − 1)/(r^N − 1); r = 1 (stretch 1) is the
//! uniform limit. The ratio r is fixed by asking the first interval to be
//! t_max/(N·stretch), which refines the grid near t = 0.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    stretch: f64,
    uniform: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_max: f64,
    pub n: usize,
    #[serde(default = "default_stretch")]
    pub stretch: f64,
}

fn default_stretch() -> f64 {
    1.0
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::build(self.t_max, self.n, self.stretch)
    }
}

impl TimeGrid {
    /// `n` intervals, `n + 1` nodes.
    pub fn build(t_max: f64, n: usize, stretch: f64) -> Result<TimeGrid> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs n >= 2 intervals, got {n}")));
        }
        if !(stretch >= 1.0 && stretch.is_finite()) {
            return Err(Error::InvalidParameter(format!("stretch must be >= 1, got {stretch}")));
        }
        let uniform = stretch == 1.0;
        let mut nodes = vec![0.0; n + 1];
        if uniform {
            let h = t_max / n as f64;
            for (i, t) in nodes.iter_mut().enumerate() {
                *t = h * i as f64;
            }
        } else {
            let r = geometric_ratio(n, stretch);
            let denom = r.powi(n as i32) - 1.0;
            for (i, t) in nodes.iter_mut().enumerate() {
                *t = t_max * (r.powi(i as i32) - 1.0) / denom;
            }
        }
        nodes[n] = t_max;
        Ok(TimeGrid { nodes, stretch, uniform })
    }

    /// Grid through explicitly given nodes (must start at 0 and increase).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<TimeGrid> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(Error::InvalidParameter("nodes must start at 0 with at least two entries".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("nodes must be strictly increasing".into()));
        }
        let h0 = nodes[1] - nodes[0];
        let uniform = nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-14 * nodes[nodes.len() - 1]);
        Ok(TimeGrid { nodes, stretch: f64::NAN, uniform })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Number of intervals N (the grid has N + 1 nodes).
    pub fn n(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        self.nodes[self.n()]
    }

    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Width of interval [t_i, t_{i+1}].
    pub fn h(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Trapezoidal weights for ∫₀^{t_i} on nodes 0..=i. All zero for i = 0.
    pub fn weights(&self, i: usize) -> Vec<f64> {
        let mut w = vec![0.0; i + 1];
        for k in 0..i {
            let hk = self.h(k);
            w[k] += 0.5 * hk;
            w[k + 1] += 0.5 * hk;
        }
        w
    }

    /// Trapezoidal weight of node j inside ∫₀^{t_i}.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        let left = if j > 0 { self.h(j - 1) } else { 0.0 };
        let right = if j < i { self.h(j) } else { 0.0 };
        0.5 * (left + right)
    }

    /// Cumulative trapezoid ∫₀^{t_i} f for every node.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for i in 1..f.len() {
            out[i] = out[i - 1] + 0.5 * self.h(i - 1) * (f[i - 1] + f[i]);
        }
        out
    }

    /// ∫₀^{t_i} dv ∫₀^v du f(u, v) for every node i; `f(k, j)` is evaluated
    /// at (u_k, v_j) with k ≤ j. Both integrals are trapezoidal, so the
    /// diagonal u = v carries half weight in the inner integral.
    pub fn double_integral_triangular<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(usize, usize) -> Complex64,
    {
        let n = self.len();
        let inner: Vec<Complex64> = (0..n)
            .map(|j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..=j {
                    let w = self.weight(j, k);
                    if w != 0.0 {
                        acc += f(k, j) * w;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for i in 1..n {
            out[i] = out[i - 1] + (inner[i - 1] + inner[i]) * (0.5 * self.h(i - 1));
        }
        out
    }
}

/// Solves (r − 1)/(r^N − 1) = 1/(N·stretch) for r > 1 by bisection on the
/// monotone left-hand side.
fn geometric_ratio(n: usize, stretch: f64) -> f64 {
    let target = 1.0 / (n as f64 * stretch);
    let g = |r: f64| {
        // (r−1)/(r^N−1) computed stably as 1/Σ_{k<N} r^k
        let mut s = 0.0;
        let mut p = 1.0;
        for _ in 0..n {
            s += p;
            p *= r;
        }
        1.0 / s - target
    };
    let (mut lo, mut hi) = (1.0, 2.0);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
