//! Gauss–Legendre quadrature of matrix-valued integrands on `[0, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::max_abs;

/// Optional adaptive refinement by interval bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub max_depth: u32,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            max_depth: 8,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes: usize,
    pub refinement: Option<Refinement>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes: 32,
            refinement: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum QuadratureError<E> {
    #[error("quadrature needs at least one node")]
    NoNodes,
    #[error("quadrature did not reach tolerance (estimate {estimate:e}) at depth {depth}")]
    NotConverged { estimate: f64, depth: u32 },
    #[error(transparent)]
    Integrand(E),
}

/// Nodes and weights of the `n`-point rule mapped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<E>(
        &self,
        a: f64,
        b: f64,
        f: &mut impl FnMut(f64) -> Result<DMatrix<f64>, E>,
    ) -> Result<DMatrix<f64>, E> {
        let h = b - a;
        let mut acc: Option<DMatrix<f64>> = None;
        for (s, w) in self.nodes.iter().zip(&self.weights) {
            let value = f(a + h * s)? * (w * h);
            acc = Some(match acc {
                Some(sum) => sum + value,
                None => value,
            });
        }
        Ok(acc.expect("at least one node"))
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Result of [`integrate_unit`]: the integral and an error estimate (zero
/// when no refinement was requested).
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: DMatrix<f64>,
    pub error_estimate: f64,
}

/// Integrates a matrix-valued `f` over `[0, 1]`.
pub fn integrate_unit<E>(
    cfg: &QuadratureConfig,
    mut f: impl FnMut(f64) -> Result<DMatrix<f64>, E>,
) -> Result<Integral, QuadratureError<E>> {
    if cfg.nodes == 0 {
        return Err(QuadratureError::NoNodes);
    }
    let rule = GaussLegendre::new(cfg.nodes);
    let coarse = rule
        .integrate(0.0, 1.0, &mut f)
        .map_err(QuadratureError::Integrand)?;
    match cfg.refinement {
        None => Ok(Integral {
            value: coarse,
            error_estimate: 0.0,
        }),
        Some(r) => {
            // tolerances are shared out by interval length against the global scale
            let budget = r.abs_tol.max(r.rel_tol * max_abs(&coarse));
            adaptive(&rule, &mut f, 0.0, 1.0, coarse, &r, 0, budget)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive<E>(
    rule: &GaussLegendre,
    f: &mut impl FnMut(f64) -> Result<DMatrix<f64>, E>,
    a: f64,
    b: f64,
    whole: DMatrix<f64>,
    r: &Refinement,
    depth: u32,
    budget: f64,
) -> Result<Integral, QuadratureError<E>> {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, f).map_err(QuadratureError::Integrand)?;
    let right = rule.integrate(m, b, f).map_err(QuadratureError::Integrand)?;
    let fine = left.clone() + right.clone();
    let estimate = max_abs(&(&fine - &whole));
    if estimate <= budget {
        return Ok(Integral {
            value: fine,
            error_estimate: estimate,
        });
    }
    if depth >= r.max_depth {
        return Err(QuadratureError::NotConverged { estimate, depth });
    }
    let l = adaptive(rule, f, a, m, left, r, depth + 1, budget * 0.5)?;
    let rr = adaptive(rule, f, m, b, right, r, depth + 1, budget * 0.5)?;
    Ok(Integral {
        value: l.value + rr.value,
        error_estimate: l.error_estimate + rr.error_estimate,
    })
}
