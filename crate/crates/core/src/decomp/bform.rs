//! Co-energy form `ż = j(v) − r(v)` in the variable `v = η(z)`.

use nalgebra::{DMatrix, DVector};

use super::{decompose, DecompError, DecomposeOptions};
use crate::model::{NewtonConfig, SystemDefinition};

/// User-supplied `(J, R)` at a state.
pub type StructureFn = dyn Fn(&[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DecompError> + Sync;

/// Where `j` and `r` come from.
pub enum BFormSource<'a> {
    /// `j = 0`, `r = −f(η⁻¹(v))`.
    FromF,
    /// `j = J(η⁻¹(v)) v`, `r = R(η⁻¹(v)) v` with `J`, `R` from [`decompose`].
    FromDecomposition(DecomposeOptions),
    /// `j = J(z) v`, `r = R(z) v` for user-supplied `(J, R)` at `z = η⁻¹(v)`.
    FromMatrices(&'a StructureFn),
}

#[derive(Debug, Clone)]
pub struct BForms {
    /// `η⁻¹(v)`.
    pub z: DVector<f64>,
    pub j: DVector<f64>,
    pub r: DVector<f64>,
}

/// Newton inversion of `η`; see [`SystemDefinition::invert_eta`].
pub fn invert_eta(
    s: &SystemDefinition,
    v: &[f64],
    newton: &NewtonConfig,
) -> Result<DVector<f64>, DecompError> {
    Ok(s.invert_eta(v, newton)?)
}

pub fn ph_b_forms(
    s: &SystemDefinition,
    v: &[f64],
    source: &BFormSource<'_>,
    newton: &NewtonConfig,
) -> Result<BForms, DecompError> {
    let z = invert_eta(s, v, newton)?;
    let vv = DVector::from_column_slice(v);
    let (j, r) = match source {
        BFormSource::FromF => (DVector::zeros(s.n), -s.eval_f(z.as_slice())?),
        BFormSource::FromDecomposition(opts) => {
            let d = decompose(s, z.as_slice(), opts)?;
            (&d.j * &vv, &d.r * &vv)
        }
        BFormSource::FromMatrices(jr) => {
            let (j, r) = jr(z.as_slice())?;
            (&j * &vv, &r * &vv)
        }
    };
    Ok(BForms { z, j, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_system;

    fn linear_k() -> SystemDefinition {
        load_system(
            r#"{"name":"k","n":2,"m":0,"H":"0.5*z1^2 + z2^2","f":["2*z2","-z1 - 2*z2"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn from_f_reconstructs() {
        let s = linear_k();
        let z = [0.3, -0.8];
        let v = s.eval_eta(&z).unwrap();
        let b = ph_b_forms(&s, v.as_slice(), &BFormSource::FromF, &NewtonConfig::default()).unwrap();
        let f = s.eval_f(&z).unwrap();
        assert!((&b.j - &b.r - f).amax() < 1e-12);
        assert_eq!(b.j.dot(&v), 0.0);
        assert!(v.dot(&b.r) >= 0.0);
    }

    #[test]
    fn from_decomposition_is_k_skew_and_minus_k_h() {
        let s = linear_k();
        let v = [0.7, -1.3];
        let b = ph_b_forms(
            &s,
            &v,
            &BFormSource::FromDecomposition(DecomposeOptions::default()),
            &NewtonConfig::default(),
        )
        .unwrap();
        // K = [[0,1],[-1,-1]] with η = (z1, 2 z2)
        assert!((b.j[0] - v[1]).abs() < 1e-13 && (b.j[1] + v[0]).abs() < 1e-13);
        assert!(b.r[0].abs() < 1e-13 && (b.r[1] - v[1]).abs() < 1e-13);
        assert!((b.z[1] - v[1] / 2.0).abs() < 1e-14);
    }

    #[test]
    fn from_matrices_skew_gives_orthogonal_j() {
        let s = linear_k();
        let jr = |z: &[f64]| -> Result<_, DecompError> {
            let j = DMatrix::from_row_slice(2, 2, &[0.0, z[0], -z[0], 0.0]);
            Ok((j, DMatrix::zeros(2, 2)))
        };
        let v = [1.1, 0.4];
        let b = ph_b_forms(&s, &v, &BFormSource::FromMatrices(&jr), &NewtonConfig::default())
            .unwrap();
        assert_eq!(DVector::from_column_slice(&v).dot(&b.j), 0.0);
    }
}
