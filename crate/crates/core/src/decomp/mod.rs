//! Pointwise construction of `J(z)` and `R(z)` with `f = (J − R) η`.
//!
//! `M(z) = ∫₀¹ Df(sz) Dη(sz)⁻¹ ds` satisfies `f(z) = M(z) η(z)` whenever `η` is
//! linear (more generally, whenever `Df Dη⁻¹` is the Jacobian of `f ∘ η⁻¹`
//! along the ray). For nonlinear `η` the identity holds instead for the integral
//! along the co-energy ray `ζ(s) = η⁻¹(s η(z))`; see [`Ray`]. When `−M_H`
//! is positive semidefinite the split `J = M_skew`, `R = −M_H` is already a
//! valid structure. Otherwise a correction `P` with `P η = 0` is added and
//! `J = (M + P)_skew`, `R = −(M + P)_H`.

mod bform;
mod correction;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{lambda_min, max_abs, min_singular_value, right_divide, skew_part, sym_part};
use crate::model::{ModelError, NewtonConfig, SystemDefinition};
use crate::quadrature::{integrate_unit, QuadratureConfig, QuadratureError};

pub use bform::{invert_eta, ph_b_forms, BFormSource, BForms, StructureFn};
pub use correction::{
    conservative_correction, general_correction, skew_action_matrix, skew_from_coefficients,
    tridiagonal_pairs, upper_pairs, Correction, GeneralStrategy, SVD_CUTOFF,
};

/// Guard on the smallest singular value of `Dη` at quadrature nodes.
pub const DETA_SINGULAR_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DecompError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Dη(sz) is singular at s = {s} (smallest singular value {sigma_min:e})")]
    SingularDeta { s: f64, sigma_min: f64 },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("tridiagonal ansatz infeasible at this point: ‖Pη‖ = {residual:e} > {bound:e}")]
    TridiagonalInfeasible { residual: f64, bound: f64 },
    #[error("correction does not annihilate η: ‖Pη‖ = {residual:e} > {bound:e}")]
    AnnihilationViolated { residual: f64, bound: f64 },
    #[error("degenerate strategy precondition: {0}")]
    Degenerate(String),
    #[error("projection undefined: wᵀη = 0")]
    ProjectionUndefined,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reconstruction residual {recon:e} exceeds {bound:e}")]
    Reconstruction { recon: f64, bound: f64 },
}

impl DecompError {
    /// Stable machine-readable tag.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Model(_) => "model",
            Self::SingularDeta { .. } => "singular-deta",
            Self::Quadrature(_) => "quadrature",
            Self::TridiagonalInfeasible { .. } => "tridiagonal-infeasible",
            Self::AnnihilationViolated { .. } => "annihilation-violated",
            Self::Degenerate(_) => "degenerate",
            Self::ProjectionUndefined => "projection-undefined",
            Self::Dimension(_) => "dimension",
            Self::Reconstruction { .. } => "reconstruction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Raw,
    ConservativeTridiagonal,
    GeneralCanonical,
    GeneralEnergyAligned,
    EtaZeroFallback,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::ConservativeTridiagonal => "conservative-tridiagonal",
            Self::GeneralCanonical => "general-canonical",
            Self::GeneralEnergyAligned => "general-energy-aligned",
            Self::EtaZeroFallback => "eta-zero-fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[default]
    Auto,
    Raw,
    Conservative,
    Canonical,
    EnergyAligned,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "auto" => Self::Auto,
            "raw" => Self::Raw,
            "conservative" => Self::Conservative,
            "canonical" => Self::Canonical,
            "energy-aligned" => Self::EnergyAligned,
            other => return Err(format!("unknown policy `{other}`")),
        })
    }
}

/// Integration path for `M(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ray {
    /// State ray; switch to the co-energy ray if `‖f − M η‖` misses the bound.
    #[default]
    Auto,
    /// `∫₀¹ Df(sz) Dη(sz)⁻¹ ds`.
    State,
    /// `∫₀¹ (Df Dη⁻¹)(η⁻¹(s η(z))) ds`.
    CoEnergy,
}

impl Ray {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ray::Auto => "auto",
            Ray::State => "state",
            Ray::CoEnergy => "co-energy",
        }
    }
}

impl std::str::FromStr for Ray {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Ray::Auto),
            "state" => Ok(Ray::State),
            "co-energy" => Ok(Ray::CoEnergy),
            other => Err(format!("unknown ray '{other}' (auto|state|co-energy)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub policy: Policy,
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub ray: Ray,
    pub tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            policy: Policy::Auto,
            quadrature: QuadratureConfig::default(),
            ray: Ray::Auto,
            tol: crate::DEFAULT_TOL,
        }
    }
}

impl DecomposeOptions {
    pub fn with_policy(policy: Policy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖f − (J − R) η‖₂`.
    pub recon: f64,
    /// `‖J + Jᵀ‖_max`.
    pub skew: f64,
    /// `‖P η‖₂`.
    pub p_eta: f64,
    /// `λ_min(R)`.
    pub psd: f64,
    pub quadrature_error: f64,
    /// `‖η‖₂`; small values amplify the general corrections.
    pub eta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub z: DVector<f64>,
    pub f: DVector<f64>,
    pub eta: DVector<f64>,
    pub m: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub strategy: Strategy,
    /// Path actually used for `M`; never [`Ray::Auto`].
    pub ray: Ray,
    pub residuals: Residuals,
}

/// `M(z)` and the quadrature error estimate.
#[derive(Debug, Clone)]
pub struct MatrixM {
    pub m: DMatrix<f64>,
    pub error_estimate: f64,
}

/// `Df(z) Dη(z)⁻¹`, guarded against singular `Dη`.
pub fn integrand(s: &SystemDefinition, z: &[f64]) -> Result<DMatrix<f64>, DecompError> {
    let deta = s.eval_deta(z)?;
    let sigma_min = min_singular_value(&deta);
    if sigma_min <= DETA_SINGULAR_GUARD {
        return Err(DecompError::SingularDeta { s: f64::NAN, sigma_min });
    }
    let df = s.eval_df(z)?;
    right_divide(&df, &deta).ok_or(DecompError::SingularDeta { s: f64::NAN, sigma_min })
}

/// Gauss–Legendre approximation of `∫₀¹ Df(sz) Dη(sz)⁻¹ ds`. Each node solves
/// against `Dη(sz)` instead of forming an inverse.
pub fn compute_m(
    s: &SystemDefinition,
    z: &[f64],
    q: &QuadratureConfig,
) -> Result<MatrixM, DecompError> {
    if z.len() != s.n {
        return Err(DecompError::Dimension(format!(
            "point has {} entries, expected n = {}",
            z.len(),
            s.n
        )));
    }
    let mut scaled = vec![0.0; s.n];
    let result = integrate_unit(q, |t| {
        for (dst, zi) in scaled.iter_mut().zip(z) {
            *dst = t * zi;
        }
        integrand(s, &scaled).map_err(|e| match e {
            DecompError::SingularDeta { sigma_min, .. } => DecompError::SingularDeta { s: t, sigma_min },
            other => other,
        })
    });
    match result {
        Ok(i) => Ok(MatrixM {
            m: i.value,
            error_estimate: i.error_estimate,
        }),
        Err(QuadratureError::Integrand(e)) => Err(e),
        Err(e) => Err(DecompError::Quadrature(e.to_string())),
    }
}

/// Gauss–Legendre approximation of `∫₀¹ (Df Dη⁻¹)(ζ(s)) ds` with
/// `ζ(s) = η⁻¹(s η(z))`, so that `M η = ∫₀¹ d/ds f(ζ(s)) ds = f(z) − f(η⁻¹(0))`.
/// Each node inverts `η` by Newton, warm-started from the previous node.
pub fn compute_m_co_energy(
    s: &SystemDefinition,
    z: &[f64],
    q: &QuadratureConfig,
) -> Result<MatrixM, DecompError> {
    if z.len() != s.n {
        return Err(DecompError::Dimension(format!(
            "point has {} entries, expected n = {}",
            z.len(),
            s.n
        )));
    }
    let eta = s.eval_eta(z)?;
    let newton_tol = 1e-14 * (1.0 + eta.norm());
    let mut last: Option<DVector<f64>> = None;
    let mut target = vec![0.0; s.n];
    let result = integrate_unit(q, |t| {
        for (dst, e) in target.iter_mut().zip(eta.iter()) {
            *dst = t * e;
        }
        let scaled: Vec<f64> = z.iter().map(|zi| t * zi).collect();
        let starts = match &last {
            Some(prev) => vec![Some(prev.as_slice().to_vec()), Some(scaled)],
            None => vec![Some(scaled), None],
        };
        let mut zeta = None;
        let mut failure = None;
        for initial in starts {
            let cfg = NewtonConfig { tol: newton_tol, max_iter: 60, initial };
            match s.invert_eta(&target, &cfg) {
                Ok(x) => {
                    zeta = Some(x);
                    break;
                }
                Err(e) => failure = Some(e),
            }
        }
        let Some(zeta) = zeta else {
            return Err(DecompError::Model(failure.expect("at least one start")));
        };
        let value = integrand(s, zeta.as_slice()).map_err(|e| match e {
            DecompError::SingularDeta { sigma_min, .. } => DecompError::SingularDeta { s: t, sigma_min },
            other => other,
        });
        last = Some(zeta);
        value
    });
    match result {
        Ok(i) => Ok(MatrixM {
            m: i.value,
            error_estimate: i.error_estimate,
        }),
        Err(QuadratureError::Integrand(e)) => Err(e),
        Err(e) => Err(DecompError::Quadrature(e.to_string())),
    }
}

/// Smallest eigenvalue of a symmetric matrix and whether it is `≥ −tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdDiagnosis {
    pub lambda_min: f64,
    pub is_psd: bool,
}

pub fn psd_diagnose(r: &DMatrix<f64>, tol: f64) -> PsdDiagnosis {
    let lambda_min = lambda_min(r);
    PsdDiagnosis {
        lambda_min,
        is_psd: lambda_min >= -tol,
    }
}

/// `|ηᵀ M_H η| ≤ tol · ‖M_H‖_F · ‖η‖²`.
pub fn is_conservative(m_h: &DMatrix<f64>, eta: &DVector<f64>, tol: f64) -> bool {
    eta.dot(&(m_h * eta)).abs() <= tol * m_h.norm() * eta.norm_squared()
}

fn select_correction(
    m: &DMatrix<f64>,
    m_h: &DMatrix<f64>,
    eta: &DVector<f64>,
    policy: Policy,
    tol: f64,
) -> Result<(Strategy, DMatrix<f64>), DecompError> {
    let conservative = || {
        conservative_correction(m_h, eta).map(|c| (Strategy::ConservativeTridiagonal, c.p))
    };
    let canonical = || {
        general_correction(m, eta, &GeneralStrategy::Canonical, tol)
            .map(|c| (Strategy::GeneralCanonical, c.p))
    };
    let aligned = || {
        general_correction(m, eta, &GeneralStrategy::EnergyAligned, tol)
            .map(|c| (Strategy::GeneralEnergyAligned, c.p))
    };
    let n = eta.len();
    match policy {
        Policy::Raw => Ok((Strategy::Raw, DMatrix::zeros(n, n))),
        Policy::Conservative => conservative(),
        Policy::Canonical => canonical(),
        Policy::EnergyAligned => aligned(),
        Policy::Auto => {
            if psd_diagnose(&(-m_h), tol).is_psd {
                Ok((Strategy::Raw, DMatrix::zeros(n, n)))
            } else if is_conservative(m_h, eta, tol) {
                conservative().or_else(|_| canonical())
            } else {
                aligned().or_else(|_| canonical()).or_else(|_| conservative())
            }
        }
    }
}

/// Builds `J`, `R` at `z` according to `opts.policy`.
pub fn decompose(
    s: &SystemDefinition,
    z: &[f64],
    opts: &DecomposeOptions,
) -> Result<Decomposition, DecompError> {
    let f = s.eval_f(z)?;
    let eta = s.eval_eta(z)?;
    let bound = 10.0 * opts.tol * (1.0 + f.norm());
    let (ray, mm) = match opts.ray {
        Ray::State => (Ray::State, compute_m(s, z, &opts.quadrature)?),
        Ray::CoEnergy => (Ray::CoEnergy, compute_m_co_energy(s, z, &opts.quadrature)?),
        Ray::Auto => {
            let mm = compute_m(s, z, &opts.quadrature)?;
            if (&f - &mm.m * &eta).norm() <= bound {
                (Ray::State, mm)
            } else {
                (Ray::CoEnergy, compute_m_co_energy(s, z, &opts.quadrature)?)
            }
        }
    };
    let zv = DVector::from_column_slice(z);
    let m_h = sym_part(&mm.m);
    let n = s.n;

    let eta_is_zero = eta.norm() <= 1e-10 * (1.0 + zv.norm());
    let (strategy, p) = if eta_is_zero && opts.policy != Policy::Raw {
        (Strategy::EtaZeroFallback, -&m_h)
    } else {
        select_correction(&mm.m, &m_h, &eta, opts.policy, opts.tol)?
    };

    let total = &mm.m + &p;
    let j = skew_part(&total);
    let r = -sym_part(&total);
    let recon = (&f - (&j - &r) * &eta).norm();
    if recon > bound {
        return Err(DecompError::Reconstruction { recon, bound });
    }
    let residuals = Residuals {
        recon,
        skew: max_abs(&(&j + j.transpose())),
        p_eta: if n == 0 { 0.0 } else { (&p * &eta).norm() },
        psd: lambda_min(&r),
        quadrature_error: mm.error_estimate,
        eta_norm: eta.norm(),
    };
    Ok(Decomposition {
        z: zv,
        f,
        eta,
        m: mm.m,
        p,
        j,
        r,
        strategy,
        ray,
        residuals,
    })
}

/// Decomposes at every point concurrently; results keep the input order.
pub fn decompose_batch(
    s: &SystemDefinition,
    points: &[Vec<f64>],
    opts: &DecomposeOptions,
) -> Vec<Result<Decomposition, DecompError>> {
    points.par_iter().map(|z| decompose(s, z, opts)).collect()
}

/// Serialisable form of a [`Decomposition`] with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub z: Vec<f64>,
    pub strategy: Strategy,
    pub ray: Ray,
    pub m: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub residuals: Residuals,
}

pub fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&Decomposition> for DecompositionRecord {
    fn from(d: &Decomposition) -> Self {
        Self {
            z: d.z.iter().copied().collect(),
            strategy: d.strategy,
            ray: d.ray,
            m: rows(&d.m),
            p: rows(&d.p),
            j: rows(&d.j),
            r: rows(&d.r),
            residuals: d.residuals.clone(),
        }
    }
}
