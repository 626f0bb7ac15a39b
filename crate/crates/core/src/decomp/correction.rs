//! Correction terms `P` with `P η = 0` that make `M + P` negative
//! semidefinite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DecompError;
use crate::linalg::{min_norm_lstsq, sym_part};

/// Relative SVD cutoff for every minimum-norm solve.
pub const SVD_CUTOFF: f64 = 1e-12;

/// A correction `P = P_H + P_skew` together with the coefficients that
/// determine its skew part.
#[derive(Debug, Clone)]
pub struct Correction {
    pub p: DMatrix<f64>,
    /// Strict-upper-triangular entries of `P_skew` in the order of `pairs`.
    pub coefficients: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// `‖P η‖₂`.
    pub p_eta: f64,
}

/// Subspace choice for [`general_correction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneralStrategy {
    /// `W = span{η}⊥`.
    Canonical,
    /// `W = span{M_H η}⊥`; needs `ηᵀ M_H η ≠ 0`.
    EnergyAligned,
    /// `W = span{w}⊥` for a user-supplied `w` with `wᵀη ≠ 0`.
    Custom(Vec<f64>),
}

/// Superdiagonal positions `(0,1), (1,2), …`.
pub fn tridiagonal_pairs(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

/// Strict upper triangle in row-major order `(0,1), (0,2), …, (1,2), …`.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Coefficient matrix of `p ↦ P_skew(p) η` for the given skew positions:
/// the column for `(i, j)` holds `η_j` in row `i` and `−η_i` in row `j`.
pub fn skew_action_matrix(eta: &DVector<f64>, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(eta.len(), pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        t[(i, k)] = eta[j];
        t[(j, k)] = -eta[i];
    }
    t
}

/// Skew matrix with the given strict-upper entries.
pub fn skew_from_coefficients(n: usize, pairs: &[(usize, usize)], p: &DVector<f64>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        s[(i, j)] = p[k];
        s[(j, i)] = -p[k];
    }
    s
}

fn annihilation_bound(m_h_eta: &DVector<f64>) -> f64 {
    1e-9 * (1.0 + m_h_eta.norm())
}

/// Correction for conservative systems: `P_H = −M_H` and a tridiagonal
/// `P_skew` whose superdiagonal solves `T(η) p = M_H η` in the minimum-norm
/// least-squares sense.
pub fn conservative_correction(
    m_h: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> Result<Correction, DecompError> {
    let n = eta.len();
    let pairs = tridiagonal_pairs(n);
    let t = skew_action_matrix(eta, &pairs);
    let rhs = m_h * eta;
    let coefficients = min_norm_lstsq(&t, &rhs, SVD_CUTOFF);
    let p = skew_from_coefficients(n, &pairs, &coefficients) - m_h;
    let p_eta = (&p * eta).norm();
    let bound = annihilation_bound(&rhs);
    if p_eta > bound {
        return Err(DecompError::TridiagonalInfeasible {
            residual: p_eta,
            bound,
        });
    }
    Ok(Correction {
        p,
        coefficients,
        pairs,
        p_eta,
    })
}

/// General correction through the oblique projector `𝒫 = η wᵀ / (wᵀη)`:
/// `P_H = −M_H + 𝒫ᵀ M_H 𝒫` and `P_skew` from the full strict-upper-triangular
/// system `𝐓(η) 𝐩 = 𝒫_cᵀ M_H η`, solved minimum-norm. The energy-aligned
/// choice needs no skew part.
pub fn general_correction(
    m: &DMatrix<f64>,
    eta: &DVector<f64>,
    strategy: &GeneralStrategy,
    tol: f64,
) -> Result<Correction, DecompError> {
    let n = eta.len();
    let eta_norm = eta.norm();
    if eta_norm == 0.0 {
        return Err(DecompError::Degenerate(
            "general correction needs η ≠ 0".into(),
        ));
    }
    let m_h = sym_part(m);
    let m_h_eta = &m_h * eta;
    let energy = eta.dot(&m_h_eta);
    let w = match strategy {
        GeneralStrategy::Canonical => eta.clone(),
        GeneralStrategy::EnergyAligned => {
            if energy.abs() <= tol * m_h.norm() * eta_norm * eta_norm {
                return Err(DecompError::Degenerate(format!(
                    "energy-aligned correction needs ηᵀM_Hη ≠ 0 (got {energy:e})"
                )));
            }
            m_h_eta.clone()
        }
        GeneralStrategy::Custom(w) => {
            if w.len() != n {
                return Err(DecompError::Dimension(format!(
                    "w has {} entries, expected {n}",
                    w.len()
                )));
            }
            DVector::from_column_slice(w)
        }
    };
    let w_eta = w.dot(eta);
    if w_eta.abs() <= tol * w.norm() * eta_norm {
        return Err(DecompError::ProjectionUndefined);
    }
    let proj = eta * w.transpose() / w_eta;
    let proj_c = DMatrix::identity(n, n) - &proj;
    let p_h = sym_part(&(proj.transpose() * &m_h * &proj - &m_h));

    let (pairs, coefficients) = if *strategy == GeneralStrategy::EnergyAligned {
        (Vec::new(), DVector::zeros(0))
    } else {
        let pairs = upper_pairs(n);
        let t = skew_action_matrix(eta, &pairs);
        let rhs = proj_c.transpose() * &m_h_eta;
        let coefficients = min_norm_lstsq(&t, &rhs, SVD_CUTOFF);
        (pairs, coefficients)
    };
    let p = p_h + skew_from_coefficients(n, &pairs, &coefficients);
    let p_eta = (&p * eta).norm();
    let bound = annihilation_bound(&m_h_eta);
    if p_eta > bound {
        return Err(DecompError::AnnihilationViolated {
            residual: p_eta,
            bound,
        });
    }
    Ok(Correction {
        p,
        coefficients,
        pairs,
        p_eta,
    })
}
